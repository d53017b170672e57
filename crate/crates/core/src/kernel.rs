//! Kernel tables and the discrete operators `I^Φ_t` and `∂^Φ_t`.
//!
//! The potential density `u_Φ` and the Lévy tail `ν̄_Φ` are both singular at
//! the origin, so neither is ever sampled there. The table stores exact cell
//! integrals
//!
//! ```text
//! W_j = ∫_{jh}^{(j+1)h} u_Φ(s) ds,     V_j = ∫_{jh}^{(j+1)h} ν̄_Φ(s) ds,
//! ```
//!
//! and the operators use product integration with the cell average of the
//! smooth factor:
//!
//! ```text
//! (I f)(t_i) ≈ Σ_{j<i} W_{i−1−j} (f_j + f_{j+1}) / 2
//! (∂ f)(t_i) ≈ Σ_{j<i} V_{i−1−j} (f_{j+1} − f_j) / h
//! ```
//!
//! For the stable kind every weight is closed form. Otherwise `W_0` comes from
//! inverting `1/(zΦ(z))` at `h`, the remaining `W_j` from 8-point
//! Gauss–Legendre quadrature of `u_Φ` (inverted from `1/Φ(z)`) over the cell,
//! and `U_Φ` at the nodes is the running sum of the `W_j`. Differencing
//! inverted values of `U_Φ` instead would amplify the inversion noise by a
//! factor of `N` and break the monotonicity of `W_j` far from the origin.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::bernstein::BernsteinFunction;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::laplace::{invert, InversionConfig, PhiTransform};
use crate::special::gamma;

/// Largest relative correction the monotone projection of the weights may
/// make before the table is rejected.
const MONOTONE_REPAIR_LIMIT: f64 = 1e-4;

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// 8-point Gauss–Legendre rule on `[a, b]`.
fn gauss_legendre_8(a: f64, b: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
        acc += w * (f(mid - half * x)? + f(mid + half * x)?);
    }
    Ok(acc * half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    grid: Grid,
    /// `W_j`, `j = 0..N`.
    pub u_cell: Vec<f64>,
    /// `U_Φ(t_i)`, `i = 0..=N`.
    pub u_node: Vec<f64>,
    /// `ν̄_Φ(t_i)` for `i = 1..=N` (index `i − 1`). Empty for tables read
    /// back from CSV.
    pub nu_tail_node: Vec<f64>,
    /// `V_j`, `j = 0..N`.
    pub nu_cell: Vec<f64>,
    pub beta: f64,
    pub c_assump: f64,
    pub t0: f64,
    /// Fitted envelope constant: `max_j W_j / ∫_{cell j} s^{β−1} ds`.
    pub c_fit: f64,
    /// Fitted potential envelope: `max_i U_Φ(t_i) / t_i^β`.
    pub c_u_fit: f64,
    /// Largest relative change made when projecting `W` and `V` onto
    /// nonincreasing sequences (zero for closed-form tables).
    pub monotone_repair: f64,
    pub label: String,
}

/// Project onto a nonincreasing sequence by a running minimum. Returns the
/// largest relative change.
fn monotone_project(xs: &mut [f64]) -> f64 {
    let mut repair: f64 = 0.0;
    for j in 1..xs.len() {
        if xs[j] > xs[j - 1] {
            repair = repair.max((xs[j] - xs[j - 1]) / xs[j - 1].abs().max(f64::MIN_POSITIVE));
            xs[j] = xs[j - 1];
        }
    }
    repair
}

fn check_weights(name: &str, xs: &[f64]) -> Result<()> {
    for (j, &w) in xs.iter().enumerate() {
        if !w.is_finite() || w < -1e-12 {
            return Err(Error::KernelConsistency {
                cell: j,
                msg: format!("{name}_{j} = {w} is negative or not finite"),
            });
        }
    }
    Ok(())
}

/// `∫_a^b s^{β−1} ds`.
fn power_cell(a: f64, b: f64, beta: f64) -> f64 {
    (b.powf(beta) - a.powf(beta)) / beta
}

impl KernelTable {
    pub fn build(phi: &BernsteinFunction, grid: Grid, cfg: &InversionConfig) -> Result<Self> {
        build_kernel_table(phi, grid, cfg)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step(&self) -> f64 {
        self.grid.step()
    }

    /// `ν̄_Φ(t_i)` for `i ≥ 1`.
    pub fn nu_tail_at(&self, i: usize) -> Option<f64> {
        i.checked_sub(1).and_then(|k| self.nu_tail_node.get(k).copied())
    }

    /// `∫₀^{t_i} ν̄_Φ`, the running sum of `V_j`.
    pub fn nu_integrated(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.nu_cell.iter().map(|v| {
                acc += v;
                acc
            }))
            .collect()
    }

    /// `U_Φ` as a grid function.
    pub fn potential(&self) -> GridFunction {
        GridFunction::scalar(self.grid, self.u_node.clone()).expect("table has N + 1 nodes")
    }

    fn check_grid(&self, f: &GridFunction) -> Result<usize> {
        let g = f.grid();
        let step_ok = (g.step() - self.step()).abs() <= 1e-12 * self.step();
        if !step_ok || g.cells() > self.grid.cells() {
            return Err(Error::Shape(format!(
                "function grid (T = {}, N = {}) is not a prefix of the kernel grid (T = {}, N = {})",
                g.t_end(),
                g.cells(),
                self.grid.t_end(),
                self.grid.cells()
            )));
        }
        Ok(g.cells())
    }

    /// Discrete `Σ_{j<i} W_{i−1−j} c_j` for per-cell values `c` (`cells × dim`,
    /// cell-major), returning `(cells + 1) × dim` node values with a zero
    /// first row.
    pub fn convolve_cells(&self, cell_values: &[f64], dim: usize) -> Vec<f64> {
        convolve(&self.u_cell, cell_values, dim)
    }

    /// Generalized fractional integral of `f` on the kernel grid or any
    /// prefix of it.
    pub fn frac_integral(&self, f: &GridFunction) -> Result<GridFunction> {
        let cells = self.check_grid(f)?;
        let d = f.dim();
        let avg: Vec<f64> = (0..cells)
            .flat_map(|j| {
                let (a, b) = (f.at(j), f.at(j + 1));
                (0..d).map(move |c| 0.5 * (a[c] + b[c]))
            })
            .collect();
        GridFunction::new(*f.grid(), d, self.convolve_cells(&avg, d))
    }

    /// Generalized Caputo derivative of `f`. The value at `t = 0` repeats
    /// the first interior value.
    pub fn caputo_derivative(&self, f: &GridFunction) -> Result<GridFunction> {
        let cells = self.check_grid(f)?;
        let d = f.dim();
        let h = self.step();
        let slopes: Vec<f64> = (0..cells)
            .flat_map(|j| {
                let (a, b) = (f.at(j), f.at(j + 1));
                (0..d).map(move |c| (b[c] - a[c]) / h)
            })
            .collect();
        let mut out = convolve(&self.nu_cell, &slopes, d);
        let first: Vec<f64> = out[d..2 * d].to_vec();
        out[..d].copy_from_slice(&first);
        GridFunction::new(*f.grid(), d, out)
    }

    /// Sup-norm errors of `I ∂ f − (f − f(0))` and `∂ I f − f`.
    ///
    /// The discrete `∂ I` reproduces `f` only away from the origin: its error
    /// at node `i` is about `0.27 |f(0)| i^{-3/2}` for a half-order kernel,
    /// independent of `h`. Both the full sup over nodes `i ≥ 1` and the sup
    /// past the first [`BOUNDARY_LAYER_NODES`] nodes are reported.
    pub fn check_inversion_identity(&self, f: &GridFunction) -> Result<InversionIdentityReport> {
        let f0 = f.at(0).to_vec();
        let shifted = f.sub(&GridFunction::constant(*f.grid(), &f0))?;
        let int_of_deriv = self.frac_integral(&self.caputo_derivative(f)?)?.sub(&shifted)?;
        let deriv_of_int = self.caputo_derivative(&self.frac_integral(f)?)?.sub(f)?;
        // The derivative at t = 0 is a convention, so compare from node 1.
        let sup_from = |g: &GridFunction, i0: usize| g.node_norms().into_iter().skip(i0).fold(0.0, f64::max);
        Ok(InversionIdentityReport {
            integral_of_derivative: sup_from(&int_of_deriv, 1),
            derivative_of_integral: sup_from(&deriv_of_int, 1),
            derivative_of_integral_past_layer: sup_from(&deriv_of_int, BOUNDARY_LAYER_NODES + 1),
        })
    }

    /// The table on the grid with twice the step. Cell weights are integrals
    /// over cells, so merging pairs of cells is exact.
    pub fn coarsen(&self) -> Result<KernelTable> {
        let grid = Grid::new(self.grid.t_end(), self.grid.cells() / 2)?;
        if self.grid.cells() % 2 != 0 {
            return Err(Error::Shape(format!("cannot halve a grid of {} cells", self.grid.cells())));
        }
        let pairs = |xs: &[f64]| xs.chunks(2).map(|p| p[0] + p[1]).collect::<Vec<_>>();
        let u_cell = pairs(&self.u_cell);
        let nodes = grid.nodes();
        let u_node: Vec<f64> = self.u_node.iter().step_by(2).copied().collect();
        let c_fit = u_cell
            .iter()
            .enumerate()
            .map(|(j, w)| w / power_cell(nodes[j], nodes[j + 1], self.beta))
            .fold(0.0, f64::max);
        let c_u_fit = (1..nodes.len()).map(|i| u_node[i] / nodes[i].powf(self.beta)).fold(0.0, f64::max);
        Ok(KernelTable {
            grid,
            u_cell,
            u_node,
            nu_tail_node: self.nu_tail_node.iter().skip(1).step_by(2).copied().collect(),
            nu_cell: pairs(&self.nu_cell),
            beta: self.beta,
            c_assump: self.c_assump,
            t0: self.t0,
            c_fit,
            c_u_fit,
            monotone_repair: self.monotone_repair,
            label: self.label.clone(),
        })
    }

    /// Compare the fitted envelope constant on `(0, t0)` with the declared
    /// `c_assump`.
    pub fn assumption_check(&self) -> AssumptionCheck {
        let h = self.step();
        let local = self
            .u_cell
            .iter()
            .enumerate()
            .take_while(|(j, _)| (*j as f64 + 1.0) * h <= self.t0 * (1.0 + 1e-12))
            .map(|(j, w)| w / power_cell(j as f64 * h, (j as f64 + 1.0) * h, self.beta))
            .fold(0.0, f64::max);
        AssumptionCheck {
            beta: self.beta,
            c_declared: self.c_assump,
            c_fitted: local,
            holds: local <= self.c_assump * (1.0 + 1e-6),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# label={}", self.label)?;
        writeln!(out, "# T={}", self.grid.t_end())?;
        writeln!(out, "# N={}", self.grid.cells())?;
        writeln!(out, "# beta={}", self.beta)?;
        writeln!(out, "# c_assump={}", self.c_assump)?;
        writeln!(out, "# t0={}", self.t0)?;
        writeln!(out, "# c_fit={}", self.c_fit)?;
        writeln!(out, "# c_u_fit={}", self.c_u_fit)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["i", "t_i", "W", "U", "nu_tail_integrated"]).map_err(csv_err)?;
        let nu_int = self.nu_integrated();
        for i in 0..self.grid.len() {
            let w_i = self.u_cell.get(i).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                i.to_string(),
                self.grid.node(i).to_string(),
                w_i,
                self.u_node[i].to_string(),
                nu_int[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a table written by [`KernelTable::write_csv`]. Node values of
    /// `ν̄_Φ` are not part of the format and come back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<f64> {
            meta.get(k)
                .ok_or_else(|| Error::Parse(format!("kernel CSV lacks '# {k}=' header")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("header {k}: {e}")))
        };
        let n = get("N")? as usize;
        let grid = Grid::new(get("T")?, n)?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut u_cell = Vec::with_capacity(n);
        let mut u_node = Vec::with_capacity(n + 1);
        let mut nu_int = Vec::with_capacity(n + 1);
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("value {s:?}: {e}")));
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != 5 {
                return Err(Error::Parse(format!("expected 5 columns, got {}", rec.len())));
            }
            if !rec[2].is_empty() {
                u_cell.push(num(&rec[2])?);
            }
            u_node.push(num(&rec[3])?);
            nu_int.push(num(&rec[4])?);
        }
        if u_node.len() != n + 1 || u_cell.len() != n {
            return Err(Error::Parse(format!(
                "expected {} rows and {n} cell weights, got {} and {}",
                n + 1,
                u_node.len(),
                u_cell.len()
            )));
        }
        let nu_cell = nu_int.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            grid,
            u_cell,
            u_node,
            nu_tail_node: Vec::new(),
            nu_cell,
            beta: get("beta")?,
            c_assump: get("c_assump")?,
            t0: get("t0")?,
            c_fit: get("c_fit")?,
            c_u_fit: get("c_u_fit")?,
            monotone_repair: 0.0,
            label: meta.get("label").cloned().unwrap_or_default(),
        })
    }
}

/// `out[i] = Σ_{j<i} w[i−1−j] · c[j]` per component.
fn convolve(weights: &[f64], cell_values: &[f64], dim: usize) -> Vec<f64> {
    let cells = cell_values.len() / dim;
    debug_assert!(weights.len() >= cells);
    let mut out = vec![0.0; (cells + 1) * dim];
    out[dim..].par_chunks_mut(dim).enumerate().for_each(|(k, row)| {
        // Node i = k + 1 sees cells 0..=k.
        for c in 0..dim {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += weights[k - j] * cell_values[j * dim + c];
            }
            row[c] = acc;
        }
    });
    out
}

/// Leading nodes where the discrete Caputo derivative of a function with a
/// nonzero jump in slope at the origin carries its `O(1)` start-up error.
pub const BOUNDARY_LAYER_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InversionIdentityReport {
    /// `‖I ∂ f − (f − f(0))‖_∞` over nodes `i ≥ 1`.
    pub integral_of_derivative: f64,
    /// `‖∂ I f − f‖_∞` over nodes `i ≥ 1`.
    pub derivative_of_integral: f64,
    /// `‖∂ I f − f‖_∞` over nodes past the boundary layer.
    pub derivative_of_integral_past_layer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub beta: f64,
    pub c_declared: f64,
    pub c_fitted: f64,
    pub holds: bool,
}

pub fn build_kernel_table(phi: &BernsteinFunction, grid: Grid, cfg: &InversionConfig) -> Result<KernelTable> {
    cfg.validate()?;
    if phi.a != 0.0 || phi.b != 0.0 {
        return Err(Error::Hypothesis(format!(
            "kernel tables need a = b = 0 (got a = {}, b = {})",
            phi.a, phi.b
        )));
    }
    if !phi.flags.levy_mass_infinite {
        return Err(Error::Hypothesis(
            "Lévy measure has finite mass, so no potential density exists".into(),
        ));
    }
    if cfg.is_talbot() && !phi.is_catalog() {
        return Err(Error::InvalidParameter(
            "fixed Talbot needs an analytic continuation; use Gaver-Stehfest for custom kinds".into(),
        ));
    }
    let n = grid.cells();
    let h = grid.step();
    let nodes = grid.nodes();

    let mut u_cell = match phi.stable_alpha() {
        Some(alpha) => {
            let g = gamma(alpha + 1.0);
            nodes.windows(2).map(|w| (w[1].powf(alpha) - w[0].powf(alpha)) / g).collect()
        }
        None => potential_cells_by_inversion(phi, &nodes, cfg)?,
    };
    check_weights("W", &u_cell)?;
    let mut repair = monotone_project(&mut u_cell);

    let mut nu_cell: Vec<f64> = match phi.integrated_levy_tail(h) {
        Some(_) => {
            let integ: Vec<f64> = nodes
                .iter()
                .map(|&t| phi.integrated_levy_tail(t).expect("closed form exists"))
                .collect();
            integ.windows(2).map(|w| w[1] - w[0]).collect()
        }
        None => tail_cells_by_quadrature(phi, &nodes, cfg)?,
    };
    check_weights("V", &nu_cell)?;
    repair = repair.max(monotone_project(&mut nu_cell));
    if repair > MONOTONE_REPAIR_LIMIT {
        return Err(Error::KernelConsistency {
            cell: 0,
            msg: format!(
                "kernel weights needed a relative monotone correction of {repair:e}; \
                 the inversion is too noisy or Phi is not special"
            ),
        });
    }

    let mut acc = 0.0;
    let u_node: Vec<f64> = std::iter::once(0.0)
        .chain(u_cell.iter().map(|w| {
            acc += w;
            acc
        }))
        .collect();
    let nu_tail_node = nodes[1..]
        .iter()
        .map(|&t| phi.levy_tail(t))
        .collect::<Result<Vec<_>>>()?;

    let beta = phi.beta;
    let c_fit = u_cell
        .iter()
        .enumerate()
        .map(|(j, w)| w / power_cell(nodes[j], nodes[j + 1], beta))
        .fold(0.0, f64::max);
    let c_u_fit = (1..=n).map(|i| u_node[i] / nodes[i].powf(beta)).fold(0.0, f64::max);

    Ok(KernelTable {
        grid,
        u_cell,
        u_node,
        nu_tail_node,
        nu_cell,
        beta,
        c_assump: phi.c_assump,
        t0: phi.t0,
        c_fit,
        c_u_fit,
        monotone_repair: repair,
        label: phi.label(),
    })
}

fn potential_cells_by_inversion(phi: &BernsteinFunction, nodes: &[f64], cfg: &InversionConfig) -> Result<Vec<f64>> {
    let potential = PhiTransform {
        phi,
        real: |z: f64, p: f64| 1.0 / (z * p),
        complex: |z: num_complex::Complex64, p: num_complex::Complex64| (z * p).inv(),
    };
    let density = PhiTransform {
        phi,
        real: |_z: f64, p: f64| 1.0 / p,
        complex: |_z, p: num_complex::Complex64| p.inv(),
    };
    let w0 = invert(&potential, nodes[1], cfg)?;
    let rest: Result<Vec<f64>> = nodes[1..]
        .par_windows(2)
        .map(|w| gauss_legendre_8(w[0], w[1], |s| invert(&density, s, cfg)))
        .collect();
    let mut cells = Vec::with_capacity(nodes.len() - 1);
    cells.push(w0);
    cells.extend(rest?);
    Ok(cells)
}

fn tail_cells_by_quadrature(phi: &BernsteinFunction, nodes: &[f64], cfg: &InversionConfig) -> Result<Vec<f64>> {
    // ∫₀^h ν̄ from the pair Φ(z)/z², the rest from the tail itself.
    let integrated = PhiTransform {
        phi,
        real: |z: f64, p: f64| p / (z * z),
        complex: |z: num_complex::Complex64, p| p / (z * z),
    };
    let v0 = invert(&integrated, nodes[1], cfg)?;
    let rest: Result<Vec<f64>> = nodes[1..]
        .par_windows(2)
        .map(|w| gauss_legendre_8(w[0], w[1], |s| phi.levy_tail(s)))
        .collect();
    let mut cells = Vec::with_capacity(nodes.len() - 1);
    cells.push(v0);
    cells.extend(rest?);
    Ok(cells)
}
