//! Numerical toolkit for Cauchy problems driven by generalized Caputo
//! derivatives induced by special Bernstein functions.
//!
//! The building blocks, bottom up:
//!
//! * [`bernstein`]: Bernstein functions `Φ` given by catalog closed forms or
//!   user callables, with `Φ`, `Φ*`, the Lévy tail `ν̄` and a numerical
//!   sign-condition check.
//! * [`laplace`]: Gaver–Stehfest and fixed-Talbot inversion, and `Φ⁻¹`.
//! * [`grid`] and [`kernel`]: uniform grids, grid functions, the potential
//!   kernel table (`u_Φ`, `U_Φ`, `ν̄_Φ` as cell integrals) and the discrete
//!   operators `I^Φ_t` and `∂^Φ_t`.
//! * [`phi_exp`]: convolution powers `u_k*`, the `Φ`-exponential
//!   `e_Φ(t; λ)` by series and by inversion, and the eigen-residual check.
//! * [`volterra`]: Picard iteration for `f = f₀ + I^Φ_t F(·, f)` with horizon
//!   selection, Bielecki weights, continuation, Hölder checks and the
//!   Neumann series for affine problems.
//! * [`gronwall`]: the operator `B`, the three Grönwall bounds and the
//!   continuity experiments.
//! * [`mc`]: subordinator and inverse-subordinator Monte Carlo.

pub mod bernstein;
pub mod error;
pub mod gronwall;
pub mod grid;
pub mod kernel;
pub mod laplace;
pub mod mc;
pub mod phi_exp;
pub mod special;
pub mod volterra;

pub use bernstein::{BernsteinFunction, PhiKind};
pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use kernel::KernelTable;
pub use laplace::{InversionConfig, InversionMethod};
