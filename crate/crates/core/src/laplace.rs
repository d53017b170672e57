//! Numerical inverse Laplace transform on `(0, T]`.
//!
//! Two methods are provided. Gaver–Stehfest needs the transform only on the
//! positive real axis, so it works for any Bernstein function given on the
//! real line. Fixed Talbot (Abate–Valkó) deforms the Bromwich contour into
//! the left half-plane and needs an analytic continuation; it is far more
//! accurate for rapidly decaying originals.
//!
//! Both methods accept an abscissa shift `c`: the transform is inverted as
//! `f(t) = e^{ct} · L⁻¹[F(· + c)](t)`, which moves singularities of `F` at or
//! left of `c` away from the sampling points.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::bernstein::BernsteinFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionMethod {
    GaverStehfest { order: usize },
    FixedTalbot { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub method: InversionMethod,
    /// Contour offset to the right of the abscissa of convergence.
    pub abscissa_shift: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            method: InversionMethod::GaverStehfest { order: 16 },
            abscissa_shift: 0.0,
        }
    }
}

impl InversionConfig {
    pub fn gaver_stehfest(order: usize) -> Result<Self> {
        let cfg = Self {
            method: InversionMethod::GaverStehfest { order },
            abscissa_shift: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn talbot(nodes: usize) -> Result<Self> {
        let cfg = Self {
            method: InversionMethod::FixedTalbot { nodes },
            abscissa_shift: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.abscissa_shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            InversionMethod::GaverStehfest { order } if order % 2 != 0 || !(8..=20).contains(&order) => Err(
                Error::InvalidParameter(format!("Gaver-Stehfest order {order} must be even and within 8..=20")),
            ),
            InversionMethod::FixedTalbot { nodes } if nodes < 16 => Err(Error::InvalidParameter(format!(
                "fixed Talbot needs at least 16 nodes, got {nodes}"
            ))),
            _ if !(self.abscissa_shift >= 0.0 && self.abscissa_shift.is_finite()) => Err(Error::InvalidParameter(
                format!("abscissa shift {} must be finite and nonnegative", self.abscissa_shift),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_talbot(&self) -> bool {
        matches!(self.method, InversionMethod::FixedTalbot { .. })
    }
}

impl fmt::Display for InversionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.method {
            InversionMethod::GaverStehfest { order } => write!(f, "gs:{order}"),
            InversionMethod::FixedTalbot { nodes } => write!(f, "talbot:{nodes}"),
        }
    }
}

impl FromStr for InversionConfig {
    type Err = Error;

    /// Parse `gs:16` or `talbot:32`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, n) = s.split_once(':').unwrap_or((s, ""));
        let parse_n = |default: usize| -> Result<usize> {
            if n.is_empty() {
                Ok(default)
            } else {
                n.parse().map_err(|_| Error::Parse(format!("bad inversion order {n:?}")))
            }
        };
        match name {
            "gs" | "stehfest" => Self::gaver_stehfest(parse_n(16)?),
            "talbot" => Self::talbot(parse_n(32)?),
            other => Err(Error::Parse(format!("unknown inversion method {other:?}"))),
        }
    }
}

/// A Laplace transform `F(z)` known on the real axis and optionally in the
/// complex plane.
pub trait LaplaceTransform {
    fn eval_real(&self, z: f64) -> Result<f64>;

    /// Analytic continuation; `None` when only real-axis values exist.
    fn eval_complex(&self, _z: Complex64) -> Option<Result<Complex64>> {
        None
    }
}

/// Transform available only on the real axis.
pub struct RealTransform<F>(pub F);

impl<F: Fn(f64) -> f64> LaplaceTransform for RealTransform<F> {
    fn eval_real(&self, z: f64) -> Result<f64> {
        Ok((self.0)(z))
    }
}

/// Transform given by one analytic formula, evaluated through its complex
/// form on the real axis as well.
pub struct AnalyticTransform<F>(pub F);

impl<F: Fn(Complex64) -> Complex64> LaplaceTransform for AnalyticTransform<F> {
    fn eval_real(&self, z: f64) -> Result<f64> {
        Ok((self.0)(Complex64::new(z, 0.0)).re)
    }

    fn eval_complex(&self, z: Complex64) -> Option<Result<Complex64>> {
        Some(Ok((self.0)(z)))
    }
}

/// Transform built from `Φ`: `real(z, Φ(z))` and, for kinds with an analytic
/// continuation, `complex(z, Φ(z))`.
pub struct PhiTransform<'a, R, C> {
    pub phi: &'a BernsteinFunction,
    pub real: R,
    pub complex: C,
}

impl<R, C> LaplaceTransform for PhiTransform<'_, R, C>
where
    R: Fn(f64, f64) -> f64,
    C: Fn(Complex64, Complex64) -> Complex64,
{
    fn eval_real(&self, z: f64) -> Result<f64> {
        let p = self.phi.eval_phi(z)?;
        Ok((self.real)(z, p))
    }

    fn eval_complex(&self, z: Complex64) -> Option<Result<Complex64>> {
        self.phi.eval_phi_complex(z).map(|p| Ok((self.complex)(z, p)))
    }
}

/// Stehfest weights `V_k`, `k = 1..=n`.
pub fn stehfest_weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    let fact = |m: usize| (1..=m).fold(1.0f64, |acc, i| acc * i as f64);
    (1..=n)
        .map(|k| {
            let lo = (k + 1) / 2;
            let hi = k.min(half);
            let s: f64 = (lo..=hi)
                .map(|j| {
                    (j as f64).powi(half as i32) * fact(2 * j)
                        / (fact(half - j) * fact(j) * fact(j - 1) * fact(k - j) * fact(2 * j - k))
                })
                .sum();
            if (k + half) % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect()
}

/// Invert `transform` at `t > 0`.
pub fn invert(transform: &impl LaplaceTransform, t: f64, cfg: &InversionConfig) -> Result<f64> {
    cfg.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain("invert", format!("t = {t} must be positive")));
    }
    let c = cfg.abscissa_shift;
    let inner = match cfg.method {
        InversionMethod::GaverStehfest { order } => gaver_stehfest(transform, t, c, order)?,
        InversionMethod::FixedTalbot { nodes } => fixed_talbot(transform, t, c, nodes)?,
    };
    let value = (c * t).exp() * inner;
    if !value.is_finite() {
        return Err(Error::Inversion {
            t,
            msg: format!("result {value} not finite (shift {c})"),
        });
    }
    Ok(value)
}

fn gaver_stehfest(transform: &impl LaplaceTransform, t: f64, c: f64, order: usize) -> Result<f64> {
    let ln2_t = std::f64::consts::LN_2 / t;
    let mut acc = 0.0;
    for (k, v) in stehfest_weights(order).into_iter().enumerate() {
        let z = c + (k + 1) as f64 * ln2_t;
        let fz = transform.eval_real(z)?;
        if !fz.is_finite() {
            return Err(Error::Inversion {
                t,
                msg: format!("transform returned {fz} at z = {z}"),
            });
        }
        acc += v * fz;
    }
    Ok(acc * ln2_t)
}

fn fixed_talbot(transform: &impl LaplaceTransform, t: f64, c: f64, m: usize) -> Result<f64> {
    let r = 2.0 * m as f64 / (5.0 * t);
    let eval = |s: Complex64| -> Result<Complex64> {
        let z = s + c;
        match transform.eval_complex(z) {
            Some(v) => v,
            None => Err(Error::Inversion {
                t,
                msg: "fixed Talbot needs an analytic continuation of the transform".into(),
            }),
        }
    };
    let f_r = eval(Complex64::new(r, 0.0))?.re;
    let mut acc = 0.5 * f_r * (r * t).exp();
    for k in 1..m {
        let theta = k as f64 * std::f64::consts::PI / m as f64;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let fs = eval(s)?;
        let term = ((s * t).exp() * fs * Complex64::new(1.0, sigma)).re;
        if !term.is_finite() {
            return Err(Error::Inversion {
                t,
                msg: format!("Talbot node {k} produced {term} at z = {}", s + c),
            });
        }
        acc += term;
    }
    Ok(acc * r / m as f64)
}

/// Maximum bisection steps for [`phi_inverse`].
const BISECTION_CAP: usize = 200;

/// `Φ⁻¹(λ)` for `λ > 0` by bracket doubling from 1 and bisection to
/// `1e-12` relative width.
pub fn phi_inverse(phi: &BernsteinFunction, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain("phi_inverse", format!("lambda = {lambda} must be positive")));
    }
    let f = |x: f64| phi.eval_phi(x);
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(1.0)? < lambda {
        lo = 1.0;
        hi = 2.0;
        loop {
            let v = f(hi)?;
            if v >= lambda {
                break;
            }
            if hi > 1e300 {
                return Err(Error::UnboundedAbscissa { lambda, sup_phi: v });
            }
            lo = hi;
            hi *= 2.0;
        }
    } else {
        // Shrink the lower end so that lo > 0 whenever Φ(0⁺) < λ.
        let mut x = 0.5;
        while x > 1e-300 {
            if f(x)? < lambda {
                lo = x;
                break;
            }
            hi = x;
            x *= 0.5;
        }
    }
    for _ in 0..BISECTION_CAP {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid)? < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Abscissa of convergence of the eigenfunction transform
/// `Φ(z)/(z(Φ(z) − λ))`: `Φ⁻¹(λ)` for `λ > 0` and `0` otherwise.
pub fn abscissa_for_eigen(phi: &BernsteinFunction, lambda: f64) -> Result<f64> {
    if lambda <= 0.0 {
        Ok(0.0)
    } else {
        phi_inverse(phi, lambda)
    }
}
