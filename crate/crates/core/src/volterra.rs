//! Picard iteration for `∂^Φ_t f = F(t, f)`, `f(0) = f₀`, in its integral
//! form `f = f₀ + I^Φ_t F(·, f)`.
//!
//! The horizon `T′` is the largest grid node with `C_R̃ U_Φ(T′) < R`, which
//! keeps every iterate inside the ball `B_R(f₀)`. Progress is monitored in the
//! Bielecki norm `‖f‖_τ = max |f(t)| e^{−τt}` with `τ` chosen so that the
//! contraction constant of the Picard map is at most `1/2`. Iterates that
//! leave `B_R(f₀)` abort the solve instead of being projected back.
//!
//! The right-hand side is evaluated once per cell, at the midpoint time and
//! the cell average of the iterate, which matches the product integration of
//! [`KernelTable::frac_integral`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernel::KernelTable;
use crate::special::gamma;

/// `F(t, y)` written into `out`.
pub type RhsFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `R ↦ C_R` or `R ↦ L_R`.
pub type RadiusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct IvpProblem {
    pub rhs: RhsFn,
    pub f0: Vec<f64>,
    pub t_end: f64,
    /// `C_R`: bound on `|F(t, y)|` for `|y| ≤ R`.
    pub bound_c: RadiusFn,
    /// `L_R`: Lipschitz constant of `F(t, ·)` on `|y| ≤ R`.
    pub lip_l: RadiusFn,
    pub label: String,
}

impl fmt::Debug for IvpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IvpProblem")
            .field("label", &self.label)
            .field("f0", &self.f0)
            .field("t_end", &self.t_end)
            .finish()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn frobenius(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Right-hand sides available from problem files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BuiltinRhs {
    Zero,
    /// `F(t, y) = A y`.
    Linear { matrix: Vec<Vec<f64>> },
    /// `F(t, y) = A y + ξ`.
    Affine { matrix: Vec<Vec<f64>>, xi: Vec<f64> },
    /// `F(t, y)_i = r y_i (1 − y_i)`.
    Logistic {
        #[serde(default = "unit")]
        rate: f64,
    },
    /// `F(t, y)_i = c y_i^p` for an integer `p ≥ 1`.
    Power {
        #[serde(default = "unit")]
        coeff: f64,
        exponent: u32,
    },
    /// State-independent forcing, piecewise linear through `(t_k, values_k)`.
    Table { t: Vec<f64>, values: Vec<Vec<f64>> },
}

fn unit() -> f64 {
    1.0
}

fn interpolate(ts: &[f64], values: &[Vec<f64>], t: f64, out: &mut [f64]) {
    let k = ts.partition_point(|&s| s <= t);
    if k == 0 {
        out.copy_from_slice(&values[0]);
    } else if k == ts.len() {
        out.copy_from_slice(&values[ts.len() - 1]);
    } else {
        let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
        for (o, (a, b)) in out.iter_mut().zip(values[k - 1].iter().zip(&values[k])) {
            *o = (1.0 - w) * a + w * b;
        }
    }
}

impl BuiltinRhs {
    fn check_dim(&self, d: usize) -> Result<()> {
        let square = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
        let ok = match self {
            BuiltinRhs::Linear { matrix } => square(matrix),
            BuiltinRhs::Affine { matrix, xi } => square(matrix) && xi.len() == d,
            BuiltinRhs::Table { t, values } => {
                !t.is_empty()
                    && t.len() == values.len()
                    && values.iter().all(|v| v.len() == d)
                    && t.windows(2).all(|w| w[1] > w[0])
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("right-hand side {self:?} does not fit dimension {d}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinRhs::Zero => "zero",
            BuiltinRhs::Linear { .. } => "linear",
            BuiltinRhs::Affine { .. } => "affine",
            BuiltinRhs::Logistic { .. } => "logistic",
            BuiltinRhs::Power { .. } => "power",
            BuiltinRhs::Table { .. } => "table",
        }
    }
}

impl IvpProblem {
    pub fn new(rhs: RhsFn, f0: Vec<f64>, t_end: f64, bound_c: RadiusFn, lip_l: RadiusFn) -> Result<Self> {
        if f0.is_empty() {
            return Err(Error::Shape("initial datum must have dimension at least 1".into()));
        }
        if !(t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon T = {t_end} must be positive")));
        }
        Ok(Self {
            rhs,
            f0,
            t_end,
            bound_c,
            lip_l,
            label: "custom".into(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.f0.len()
    }

    /// Problem with a built-in right-hand side and exact `C_R`, `L_R`
    /// metadata on the ball `|y| ≤ R`.
    pub fn from_builtin(rhs: BuiltinRhs, f0: Vec<f64>, t_end: f64) -> Result<Self> {
        let d = f0.len();
        rhs.check_dim(d)?;
        let label = rhs.name().to_string();
        let (f, c, l): (RhsFn, RadiusFn, RadiusFn) = match rhs {
            BuiltinRhs::Zero => (
                Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                Arc::new(|_| 0.0),
                Arc::new(|_| 0.0),
            ),
            BuiltinRhs::Linear { matrix } => {
                let a = frobenius(&matrix);
                (
                    Arc::new(move |_, y: &[f64], out: &mut [f64]| {
                        for (o, row) in out.iter_mut().zip(&matrix) {
                            *o = row.iter().zip(y).map(|(m, v)| m * v).sum();
                        }
                    }),
                    Arc::new(move |r| a * r),
                    Arc::new(move |_| a),
                )
            }
            BuiltinRhs::Affine { matrix, xi } => {
                let a = frobenius(&matrix);
                let x = norm(&xi);
                (
                    Arc::new(move |_, y: &[f64], out: &mut [f64]| {
                        for ((o, row), s) in out.iter_mut().zip(&matrix).zip(&xi) {
                            *o = row.iter().zip(y).map(|(m, v)| m * v).sum::<f64>() + s;
                        }
                    }),
                    Arc::new(move |r| a * r + x),
                    Arc::new(move |_| a),
                )
            }
            BuiltinRhs::Logistic { rate } => (
                Arc::new(move |_, y: &[f64], out: &mut [f64]| {
                    for (o, v) in out.iter_mut().zip(y) {
                        *o = rate * v * (1.0 - v);
                    }
                }),
                Arc::new(move |r| rate.abs() * r * (1.0 + r)),
                Arc::new(move |r| rate.abs() * (1.0 + 2.0 * r)),
            ),
            BuiltinRhs::Power { coeff, exponent } => {
                if exponent == 0 {
                    return Err(Error::InvalidParameter("power exponent must be at least 1".into()));
                }
                let p = exponent as i32;
                (
                    Arc::new(move |_, y: &[f64], out: &mut [f64]| {
                        for (o, v) in out.iter_mut().zip(y) {
                            *o = coeff * v.powi(p);
                        }
                    }),
                    Arc::new(move |r| coeff.abs() * r.powi(p)),
                    Arc::new(move |r| coeff.abs() * p as f64 * r.powi(p - 1)),
                )
            }
            BuiltinRhs::Table { t, values } => {
                let sup = values.iter().map(|v| norm(v)).fold(0.0, f64::max);
                (
                    Arc::new(move |s, _, out: &mut [f64]| interpolate(&t, &values, s, out)),
                    Arc::new(move |_| sup),
                    Arc::new(|_| 0.0),
                )
            }
        };
        Ok(Self::new(f, f0, t_end, c, l)?.with_label(label))
    }
}

/// Problem file layout:
///
/// ```text
/// d = 1
/// T = 1.0
/// R = 1.0
/// f0 = [0.1]
/// [rhs]
/// kind = "logistic"
/// rate = 1.0
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// Optional declared dimension, checked against `f0`.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub f0: Vec<f64>,
    pub rhs: BuiltinRhs,
}

impl ProblemSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(d) = spec.d {
            if d != spec.f0.len() {
                return Err(Error::Shape(format!("declared d = {d} but f0 has {} components", spec.f0.len())));
            }
        }
        Ok(spec)
    }

    pub fn problem(&self) -> Result<IvpProblem> {
        IvpProblem::from_builtin(self.rhs.clone(), self.f0.clone(), self.t_end)
    }
}

/// Output of [`select_horizon`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Horizon {
    /// Number of grid cells in `[0, T′]`.
    pub cells: usize,
    pub t_prime: f64,
    /// `R̃ = R + |f₀|`.
    pub r_tilde: f64,
    pub c_r: f64,
}

/// Cells of the kernel grid that lie inside `[0, T]` of the problem.
fn usable_cells(problem: &IvpProblem, kt: &KernelTable) -> usize {
    let h = kt.step();
    let n = ((problem.t_end / h) * (1.0 + 1e-12)).floor() as usize;
    n.min(kt.grid().cells())
}

/// Largest grid-aligned `T′ ≤ T` with `C_R̃ U_Φ(T′) < R`.
pub fn select_horizon(problem: &IvpProblem, kt: &KernelTable, radius: f64) -> Result<Horizon> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius R = {radius} must be positive")));
    }
    let r_tilde = radius + norm(&problem.f0);
    let c_r = (problem.bound_c)(r_tilde);
    let max_cells = usable_cells(problem, kt);
    // U_node is nondecreasing, so the admissible nodes form a prefix.
    let cells = kt.u_node[..=max_cells].partition_point(|&u| c_r * u < radius) - 1;
    if cells == 0 {
        return Err(Error::HorizonTooCoarse {
            c_r,
            r: radius,
            h: kt.step(),
        });
    }
    Ok(Horizon {
        cells,
        t_prime: kt.grid().node(cells),
        r_tilde,
        c_r,
    })
}

/// Bielecki weight `τ` making
/// `C L (1/(p(β−1)+1))^{1/p} T′^{(p(β−1)+1)/p} (1/(p′τ))^{1/p′} = 1/2`
/// with `p = (2−β)/(2(1−β))`, its conjugate `p′`, and `C` the fitted
/// envelope constant of the table.
pub fn pick_bielecki_tau(kt: &KernelTable, lip: f64, t_prime: f64) -> f64 {
    let k0 = lemma_constant(kt.beta, kt.c_fit, lip, t_prime);
    let (_, q) = holder_pair(kt.beta);
    (2.0 * k0).powf(q) / q
}

/// `p = (2−β)/(2(1−β))` and `p′ = p/(p−1)`.
fn holder_pair(beta: f64) -> (f64, f64) {
    let p = (2.0 - beta) / (2.0 * (1.0 - beta));
    (p, p / (p - 1.0))
}

/// `C L (1/(p(β−1)+1))^{1/p} T′^{(p(β−1)+1)/p}`.
fn lemma_constant(beta: f64, c: f64, lip: f64, t_prime: f64) -> f64 {
    let (p, _) = holder_pair(beta);
    let e = p * (beta - 1.0) + 1.0;
    c * lip * (1.0 / e).powf(1.0 / p) * t_prime.powf(e / p)
}

/// Theoretical contraction constant of the Picard map in `‖·‖_τ`.
pub fn contraction_constant(kt: &KernelTable, lip: f64, t_prime: f64, tau: f64) -> f64 {
    let (_, q) = holder_pair(kt.beta);
    lemma_constant(kt.beta, kt.c_fit, lip, t_prime) * (1.0 / (q * tau)).powf(1.0 / q)
}

#[derive(Debug, Clone)]
pub struct PicardOptions {
    /// Confinement radius `R` around `f₀`.
    pub radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Number of cells to solve on; `None` selects `T′` by [`select_horizon`].
    pub horizon_cells: Option<usize>,
    /// Bielecki weight; `None` uses [`pick_bielecki_tau`] with `L_R̃`.
    pub tau: Option<f64>,
    /// Starting iterate; `None` starts from `f ≡ f₀`.
    pub initial: Option<GridFunction>,
}

impl PicardOptions {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            tol: 1e-12,
            max_iter: 500,
            horizon_cells: None,
            tau: None,
            initial: None,
        }
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }

    pub fn horizon_cells(mut self, cells: usize) -> Self {
        self.horizon_cells = Some(cells);
        self
    }

    pub fn tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn initial(mut self, f: GridFunction) -> Self {
        self.initial = Some(f);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardState {
    pub horizon_cells: usize,
    pub t_prime: f64,
    pub iteration_count: usize,
    pub bielecki_tau: f64,
    /// `‖f^{m+1} − f^m‖_τ`.
    pub successive_norms: Vec<f64>,
    /// `‖f^{m+1} − f^m‖_∞`.
    pub successive_sup_norms: Vec<f64>,
    /// Ratios of consecutive entries of `successive_norms`.
    pub contraction_ratio_estimates: Vec<f64>,
    /// Contraction constant guaranteed by the choice of `τ` (`1/2` unless
    /// `τ` was supplied).
    pub theoretical_constant: f64,
    pub radius: f64,
    /// `L_R̃` used for `τ`.
    pub lipschitz: f64,
}

/// Per-cell right-hand side values at the midpoint time and cell average.
fn cell_rhs(problem: &IvpProblem, grid: &Grid, f: &GridFunction, from: usize, to: usize) -> Vec<f64> {
    let d = problem.dim();
    let h = grid.step();
    let mut out = vec![0.0; (to - from) * d];
    out.par_chunks_mut(d).enumerate().for_each(|(k, row)| {
        let j = from + k;
        let (a, b) = (f.at(j), f.at(j + 1));
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        (problem.rhs)((j as f64 + 0.5) * h, &mid, row);
    });
    out
}

/// `sup_i |f_i − f₀|` and where it is attained.
fn distance_from(f: &GridFunction, f0: &[f64], from: usize) -> (f64, usize) {
    (from..f.len())
        .map(|i| (norm(&f.at(i).iter().zip(f0).map(|(a, b)| a - b).collect::<Vec<_>>()), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
}

/// One Picard sweep `f ↦ f₀ + I F(·, f)` on the nodes `from..=cells`, with
/// the contribution of cells before `from` supplied as `history`.
fn sweep(problem: &IvpProblem, kt: &KernelTable, f: &GridFunction, from: usize, history: &[f64]) -> Result<GridFunction> {
    let d = problem.dim();
    let grid = *f.grid();
    let cells = grid.cells();
    let rhs = cell_rhs(problem, &grid, f, from, cells);
    let mut values = f.as_slice().to_vec();
    if from == 0 {
        values[..d].copy_from_slice(&problem.f0);
    }
    // Node i ≥ from+1 receives Σ_{from ≤ j < i} W_{i−1−j} F_j from the
    // active cells.
    values[(from + 1) * d..]
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(k, row)| {
            for c in 0..d {
                let mut acc = history[(from + 1 + k) * d + c];
                for j in 0..=k {
                    acc += kt.u_cell[k - j] * rhs[j * d + c];
                }
                row[c] = problem.f0[c] + acc;
            }
        });
    GridFunction::new(grid, d, values)
}

/// Picard iteration on `[0, T′]`.
pub fn picard_solve(problem: &IvpProblem, kt: &KernelTable, opts: &PicardOptions) -> Result<(GridFunction, PicardState)> {
    let d = problem.dim();
    let horizon = select_horizon(problem, kt, opts.radius);
    let cells = match opts.horizon_cells {
        Some(c) if c >= 1 && c <= usable_cells(problem, kt) => c,
        Some(c) => {
            return Err(Error::InvalidParameter(format!(
                "horizon of {c} cells outside 1..={}",
                usable_cells(problem, kt)
            )))
        }
        None => horizon?.cells,
    };
    let grid = kt.grid().prefix(cells)?;
    let r_tilde = opts.radius + norm(&problem.f0);
    let lip = (problem.lip_l)(r_tilde);
    let t_prime = grid.t_end();
    let (tau, theoretical) = match opts.tau {
        Some(tau) => (tau, contraction_constant(kt, lip, t_prime, tau)),
        None => {
            let tau = pick_bielecki_tau(kt, lip, t_prime);
            (tau, if lip > 0.0 { 0.5 } else { 0.0 })
        }
    };
    let mut f = match &opts.initial {
        Some(init) => {
            if init.dim() != d || init.grid().cells() < cells {
                return Err(Error::Shape("initial iterate does not cover the horizon".into()));
            }
            init.truncate(cells)?
        }
        None => GridFunction::constant(grid, &problem.f0),
    };
    let history = vec![0.0; grid.len() * d];
    let mut state = PicardState {
        horizon_cells: cells,
        t_prime,
        iteration_count: 0,
        bielecki_tau: tau,
        successive_norms: Vec::new(),
        successive_sup_norms: Vec::new(),
        contraction_ratio_estimates: Vec::new(),
        theoretical_constant: theoretical,
        radius: opts.radius,
        lipschitz: lip,
    };
    iterate(problem, kt, &mut f, 0, &history, opts, &mut state)?;
    Ok((f, state))
}

fn iterate(
    problem: &IvpProblem,
    kt: &KernelTable,
    f: &mut GridFunction,
    from: usize,
    history: &[f64],
    opts: &PicardOptions,
    state: &mut PicardState,
) -> Result<()> {
    let tau = state.bielecki_tau;
    for m in 1..=opts.max_iter {
        let next = sweep(problem, kt, f, from, history)?;
        let (distance, at) = distance_from(&next, &problem.f0, from);
        if distance >= opts.radius {
            return Err(Error::Confinement {
                iteration: m,
                distance,
                radius: opts.radius,
                t: next.grid().node(at),
            });
        }
        let diff = next.sub(f)?;
        let bn = diff.bielecki_norm(tau);
        let sn = diff.sup_norm();
        if let Some(&prev) = state.successive_norms.last() {
            if prev > 0.0 {
                state.contraction_ratio_estimates.push(bn / prev);
            }
        }
        state.successive_norms.push(bn);
        state.successive_sup_norms.push(sn);
        state.iteration_count += 1;
        *f = next;
        // The sup norm dominates the τ-norm, so this also meets tol in ‖·‖_τ.
        if sn < opts.tol {
            return Ok(());
        }
    }
    let k = state.contraction_ratio_estimates.len();
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        ratios: state.contraction_ratio_estimates[k.saturating_sub(8)..].to_vec(),
    })
}

/// Extend a converged solution by `extra_cells` cells. The convolution over
/// the already solved part is computed once and held fixed; only the new
/// nodes are iterated, starting from the last known value.
pub fn continue_solution(
    problem: &IvpProblem,
    kt: &KernelTable,
    prior: &GridFunction,
    extra_cells: usize,
    opts: &PicardOptions,
) -> Result<(GridFunction, PicardState)> {
    let d = problem.dim();
    let m = prior.grid().cells();
    let total = (m + extra_cells).min(usable_cells(problem, kt));
    if total <= m {
        return Err(Error::InvalidParameter("continuation must add at least one cell".into()));
    }
    if prior.dim() != d {
        return Err(Error::Shape("prior solution dimension does not match the problem".into()));
    }
    let grid = kt.grid().prefix(total)?;
    let last = prior.at(m).to_vec();
    let mut values = prior.as_slice().to_vec();
    for _ in m..total {
        values.extend_from_slice(&last);
    }
    let mut f = GridFunction::new(grid, d, values)?;

    // History: Σ_{j<m} W_{i−1−j} F_j for every node past m.
    let past = cell_rhs(problem, &grid, prior, 0, m);
    let mut history = vec![0.0; grid.len() * d];
    history[(m + 1) * d..]
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(k, row)| {
            let i = m + 1 + k;
            for c in 0..d {
                row[c] = (0..m).map(|j| kt.u_cell[i - 1 - j] * past[j * d + c]).sum();
            }
        });

    let r_tilde = opts.radius + norm(&problem.f0);
    let lip = (problem.lip_l)(r_tilde);
    let seg = grid.t_end() - prior.grid().t_end();
    let tau = opts.tau.unwrap_or_else(|| pick_bielecki_tau(kt, lip, seg));
    let mut state = PicardState {
        horizon_cells: total,
        t_prime: grid.t_end(),
        iteration_count: 0,
        bielecki_tau: tau,
        successive_norms: Vec::new(),
        successive_sup_norms: Vec::new(),
        contraction_ratio_estimates: Vec::new(),
        theoretical_constant: contraction_constant(kt, lip, seg, tau),
        radius: opts.radius,
        lipschitz: lip,
    };
    iterate(problem, kt, &mut f, m, &history, opts, &mut state)?;
    Ok((f, state))
}

/// Solve on the whole usable grid: first on `[0, T′]`, then by repeated
/// continuation in segments of `T′`.
pub fn solve_global(problem: &IvpProblem, kt: &KernelTable, opts: &PicardOptions) -> Result<(GridFunction, Vec<PicardState>)> {
    let total = usable_cells(problem, kt);
    let (mut f, first) = picard_solve(problem, kt, opts)?;
    let chunk = first.horizon_cells;
    let mut states = vec![first];
    while f.grid().cells() < total {
        let extra = chunk.min(total - f.grid().cells());
        let (next, st) = continue_solution(problem, kt, &f, extra, opts)?;
        f = next;
        states.push(st);
    }
    Ok((f, states))
}

/// `‖f − (f₀ + I F(·, f))‖_∞`.
pub fn fixed_point_residual(problem: &IvpProblem, kt: &KernelTable, f: &GridFunction) -> Result<f64> {
    let history = vec![0.0; f.len() * problem.dim()];
    sweep(problem, kt, f, 0, &history)?.sup_distance(f)
}

/// Empirical Hölder constant `max_{i≠j} |f_i − f_j| / |t_i − t_j|^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub l_est: f64,
    pub pair: (usize, usize),
}

pub fn verify_holder(f: &GridFunction, beta: f64) -> HolderEstimate {
    let g = f.grid();
    let n = f.len();
    let d = f.dim();
    let (l_est, pair) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (0.0f64, (i, i));
            for j in i + 1..n {
                let dist: f64 = (0..d).map(|c| (f.at(j)[c] - f.at(i)[c]).powi(2)).sum::<f64>().sqrt();
                let q = dist / (g.node(j) - g.node(i)).powf(beta);
                if q > best.0 {
                    best = (q, (i, j));
                }
            }
            best
        })
        .reduce(|| (0.0, (0, 0)), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    HolderEstimate { l_est, pair }
}

/// Hölder estimates across a sequence of refinements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderRefinement {
    pub estimates: Vec<(usize, f64)>,
    /// `max / min − 1` over the estimates.
    pub spread: f64,
    /// Whether the estimate grew at every refinement.
    pub growing: bool,
}

pub fn holder_refinement(estimates: Vec<(usize, f64)>) -> HolderRefinement {
    let max = estimates.iter().map(|e| e.1).fold(f64::MIN, f64::max);
    let min = estimates.iter().map(|e| e.1).fold(f64::MAX, f64::min);
    let growing = estimates.len() > 1 && estimates.windows(2).all(|w| w[1].1 > w[0].1 * (1.0 + 1e-3));
    HolderRefinement {
        spread: if min > 0.0 { max / min - 1.0 } else { 0.0 },
        estimates,
        growing,
    }
}

/// Result of [`neumann_affine_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannSolution {
    pub f: GridFunction,
    /// Sup norms of the summed terms.
    pub term_norms: Vec<f64>,
    pub warning: Option<String>,
}

/// `f = f₀ + Σ_k (I∘A)^k I(ξ + A f₀)`, the Neumann series for
/// `f = f₀ + I(A f + ξ)`.
pub fn neumann_affine_solve(kt: &KernelTable, linmap: &[Vec<f64>], xi: &[f64], f0: &[f64], terms: usize) -> Result<NeumannSolution> {
    let d = f0.len();
    if terms < 1 {
        return Err(Error::InvalidParameter("at least one Neumann term is required".into()));
    }
    if linmap.len() != d || linmap.iter().any(|r| r.len() != d) || xi.len() != d {
        return Err(Error::Shape(format!("affine data does not fit dimension {d}")));
    }
    let grid = *kt.grid();
    let apply = |g: &GridFunction| -> Result<GridFunction> {
        let mut vals = vec![0.0; g.len() * d];
        for i in 0..g.len() {
            let y = g.at(i);
            for (r, row) in linmap.iter().enumerate() {
                vals[i * d + r] = row.iter().zip(y).map(|(a, b)| a * b).sum();
            }
        }
        GridFunction::new(grid, d, vals)
    };
    let source: Vec<f64> = linmap
        .iter()
        .zip(xi)
        .map(|(row, x)| row.iter().zip(f0).map(|(a, b)| a * b).sum::<f64>() + x)
        .collect();
    let mut term = kt.frac_integral(&GridFunction::constant(grid, &source))?;
    let mut total = GridFunction::constant(grid, f0);
    let mut term_norms = Vec::new();
    for _ in 0..terms {
        let n = term.sup_norm();
        total = total.add(&term)?;
        term_norms.push(n);
        if n <= 1e-15 * total.sup_norm().max(1e-300) {
            break;
        }
        term = kt.frac_integral(&apply(&term)?)?;
    }
    let warning = term_norms
        .iter()
        .enumerate()
        .skip(3)
        .find(|(k, &n)| n >= term_norms[k - 1] && n > 0.0)
        .map(|(k, _)| format!("Neumann term norms stopped decreasing at k = {k}; horizon too long for this map"));
    Ok(NeumannSolution {
        f: total,
        term_norms,
        warning,
    })
}

/// Heuristic `L_R` from random difference quotients in the ball `|y| ≤ R`.
/// This is an estimate, not a bound.
pub fn estimate_lipschitz(problem: &IvpProblem, radius: f64, samples: usize, seed: u64) -> f64 {
    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v).max(1e-300);
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        v.into_iter().map(|x| x * r / n).collect()
    };
    let mut best: f64 = 0.0;
    let (mut fa, mut fb) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..samples {
        let t = problem.t_end * rng.random::<f64>();
        let a = point(&mut rng);
        let b = point(&mut rng);
        (problem.rhs)(t, &a, &mut fa);
        (problem.rhs)(t, &b, &mut fb);
        let num = norm(&fa.iter().zip(&fb).map(|(x, y)| x - y).collect::<Vec<_>>());
        let den = norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
        if den > 1e-12 {
            best = best.max(num / den);
        }
    }
    best
}

/// `T′` solving `U_Φ(T′) = R / C` for the stable kernel, for reference.
pub fn stable_horizon(alpha: f64, c_r: f64, radius: f64) -> f64 {
    (radius / c_r * gamma(alpha + 1.0)).powf(1.0 / alpha)
}
