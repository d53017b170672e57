//! Generalized Grönwall bounds for `x ≤ a + g I^Φ x` and numerical checks of
//! them.
//!
//! With `B f = g · I^Φ f` the three bounds are
//!
//! * `x ≤ Σ_k B^k a`,
//! * `x ≤ a + C Γ(β+1) g(t) ∫₀ᵗ E′_β(C Γ(β) g(t) (t−s)^β) (t−s)^{β−1} a(s) ds`,
//! * `x ≤ a · e_Φ(·; g(T))` when `a` is nondecreasing,
//!
//! where `C` is the fitted envelope constant of the kernel table. The
//! integrand of the second bound is an exact derivative in `s`, so on each
//! cell it integrates to a difference of `E_β` values; `a` is taken at its
//! larger endpoint value on the cell, which keeps the discrete bound above
//! the continuous one.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernel::KernelTable;
use crate::phi_exp::{phi_exp_series, phi_exp_series_curve, ConvolutionPowers};
use crate::special::{gamma, ln_gamma, MittagLefflerTable};
use crate::volterra::{picard_solve, IvpProblem, PicardOptions, RadiusFn};

/// Slack on the certificate `x ≤ a + g I x`.
pub const CERTIFICATE_SLACK: f64 = 1e-10;
/// Absolute part of the slack used when comparing bounds.
pub const BOUND_SLACK: f64 = 1e-8;
/// Default cap on the number of powers of `B`.
pub const DEFAULT_SERIES_TERMS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GronwallFlags {
    pub a_nonneg: bool,
    pub g_nonneg: bool,
    pub g_nondecreasing: bool,
    pub a_nondecreasing: bool,
}

/// A triple `(x, a, g)` with `a, g ≥ 0` and `g` nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallInstance {
    pub x: GridFunction,
    pub a: GridFunction,
    pub g: GridFunction,
    pub flags: GronwallFlags,
}

fn nondecreasing(v: &[f64]) -> bool {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.windows(2).all(|w| w[1] >= w[0] - 1e-14 * scale)
}

fn check_scalar(f: &GridFunction, name: &str) -> Result<()> {
    if f.dim() != 1 {
        return Err(Error::Shape(format!("{name} must be scalar, got dimension {}", f.dim())));
    }
    Ok(())
}

impl GronwallInstance {
    pub fn new(x: GridFunction, a: GridFunction, g: GridFunction) -> Result<Self> {
        for (f, name) in [(&x, "x"), (&a, "a"), (&g, "g")] {
            check_scalar(f, name)?;
        }
        x.check_compatible(&a)?;
        x.check_compatible(&g)?;
        let flags = GronwallFlags {
            a_nonneg: a.as_slice().iter().all(|&v| v >= 0.0),
            g_nonneg: g.as_slice().iter().all(|&v| v >= 0.0),
            g_nondecreasing: nondecreasing(g.as_slice()),
            a_nondecreasing: nondecreasing(a.as_slice()),
        };
        if !(flags.a_nonneg && flags.g_nonneg && flags.g_nondecreasing) {
            return Err(Error::Hypothesis(format!(
                "Grönwall instance needs a, g ≥ 0 and g nondecreasing (flags {flags:?})"
            )));
        }
        Ok(Self { x, a, g, flags })
    }

    pub fn grid(&self) -> &Grid {
        self.x.grid()
    }

    /// `max_i x_i − a_i − g_i (I x)_i`.
    pub fn certificate_gap(&self, kt: &KernelTable) -> Result<f64> {
        let bx = apply_b(kt, &self.g, &self.x)?;
        Ok((0..self.x.len())
            .map(|i| self.x.value(i) - self.a.value(i) - bx.value(i))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Errors unless `x ≤ a + g I x + 1e-10` at every node.
    pub fn certify(&self, kt: &KernelTable) -> Result<()> {
        let gap = self.certificate_gap(kt)?;
        if gap > CERTIFICATE_SLACK {
            return Err(Error::Hypothesis(format!("x exceeds a + g I x by {gap:e}")));
        }
        Ok(())
    }

    /// The same instance sampled on every other node.
    pub fn coarsen(&self) -> Result<Self> {
        Self::new(self.x.coarsen()?, self.a.coarsen()?, self.g.coarsen()?)
    }
}

/// `B f = g · I^Φ f`.
pub fn apply_b(kt: &KernelTable, g: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    check_scalar(g, "g")?;
    g.check_compatible(f)?;
    kt.frac_integral(f)?.zip_with(g, |v, w| v * w)
}

/// `B^k f`.
pub fn apply_b_power(kt: &KernelTable, g: &GridFunction, f: &GridFunction, k: usize) -> Result<GridFunction> {
    let mut out = f.clone();
    for _ in 0..k {
        out = apply_b(kt, g, &out)?;
    }
    Ok(out)
}

/// `Σ_{k > after} x^k / Γ(kβ + 1)`, summed in log space.
fn ml_tail(beta: f64, x: f64, after: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_x = x.ln();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for k in after + 1..after + 100_000 {
        let kf = k as f64;
        let t = (kf * ln_x - ln_gamma(kf * beta + 1.0)).exp();
        sum += t;
        if !sum.is_finite() {
            return f64::INFINITY;
        }
        if t <= prev && t <= 1e-17 * sum {
            break;
        }
        prev = t;
    }
    sum
}

/// Output of [`series_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBound {
    /// `Σ_{k<terms} B^k a`.
    pub values: GridFunction,
    pub terms: usize,
    /// Bound on the omitted tail from the `B^k` envelope.
    pub tail_bound: f64,
}

/// `Σ_k B^k a`, stopped once the current term is below `tol` relative to
/// the partial sum and the envelope `‖a‖ Σ_{k>K} (CΓ(β)g(T)T^β)^k / Γ(kβ+1)`
/// certifies the tail to the same level.
pub fn series_bound(kt: &KernelTable, g: &GridFunction, a: &GridFunction, k_max: usize, tol: f64) -> Result<SeriesBound> {
    check_scalar(a, "a")?;
    let n = a.len() - 1;
    let kappa = kt.c_fit * gamma(kt.beta) * g.value(n) * a.grid().t_end().powf(kt.beta);
    let a_sup = a.sup_norm();
    let mut sum = a.clone();
    let mut term = a.clone();
    let mut tail = ml_tail(kt.beta, kappa, 0) * a_sup;
    for k in 1..=k_max {
        let s = sum.sup_norm();
        if term.sup_norm() <= tol * s && tail <= tol * s.max(f64::MIN_POSITIVE) {
            return Ok(SeriesBound { values: sum, terms: k, tail_bound: tail });
        }
        if tail == 0.0 && term.sup_norm() == 0.0 {
            return Ok(SeriesBound { values: sum, terms: k, tail_bound: 0.0 });
        }
        term = apply_b(kt, g, &term)?;
        sum = sum.add(&term)?;
        tail = ml_tail(kt.beta, kappa, k) * a_sup;
    }
    let s = sum.sup_norm();
    if tail <= tol * s.max(f64::MIN_POSITIVE) || tail == 0.0 {
        return Ok(SeriesBound { values: sum, terms: k_max + 1, tail_bound: tail });
    }
    Err(Error::Truncation {
        terms: k_max + 1,
        tail,
        required: tol * s,
    })
}

/// Discretized Mittag-Leffler bound.
pub fn ml_bound(kt: &KernelTable, g: &GridFunction, a: &GridFunction) -> Result<GridFunction> {
    check_scalar(a, "a")?;
    g.check_compatible(a)?;
    let beta = kt.beta;
    let table = MittagLefflerTable::new(beta)?;
    let h = a.grid().step();
    let c = kt.c_fit * gamma(beta);
    let av = a.as_slice();
    let cell_max: Vec<f64> = av.windows(2).map(|w| w[0].max(w[1])).collect();
    let values: Result<Vec<f64>> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let kappa = c * g.value(i);
            if kappa == 0.0 || i == 0 {
                return Ok(av[i]);
            }
            // Cell j = i − k spans lags ((k−1)h, kh].
            let mut prev = 1.0;
            let mut acc = 0.0;
            for k in 1..=i {
                let e = table.eval_nonneg(kappa * (k as f64 * h).powf(beta))?;
                acc += cell_max[i - k] * (e - prev);
                prev = e;
            }
            Ok(av[i] + acc)
        })
        .collect();
    GridFunction::scalar(*a.grid(), values?)
}

/// `a(t_i) e_Φ(t_i; g(T))`.
pub fn monotone_bound(cp: &ConvolutionPowers, g: &GridFunction, a: &GridFunction) -> Result<GridFunction> {
    check_scalar(a, "a")?;
    g.check_compatible(a)?;
    if !nondecreasing(a.as_slice()) {
        return Err(Error::Hypothesis("the exponential bound needs a nondecreasing a".into()));
    }
    if !cp.grid().same_as(a.grid()) {
        return Err(Error::Shape("convolution powers live on a different grid".into()));
    }
    let lambda = g.value(g.len() - 1);
    let e = phi_exp_series_curve(cp, lambda)?;
    a.zip_with(&e, |x, y| x * y)
}

/// Result of [`check_instance`]. Margins are `bound − bounded` per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    pub flags: GronwallFlags,
    pub series_terms: usize,
    pub series_tail_bound: f64,
    /// `1e-8 + 2 |series_N − series_{N/2}|`.
    pub slack: f64,
    pub margin_series: Vec<f64>,
    pub margin_ml: Vec<f64>,
    pub margin_monotone: Option<Vec<f64>>,
    pub min_margin_series: f64,
    pub min_margin_ml: f64,
    pub min_margin_monotone: Option<f64>,
    pub x_le_series: bool,
    pub series_le_ml: bool,
    pub x_le_monotone: Option<bool>,
}

impl GronwallReport {
    pub fn all_pass(&self) -> bool {
        self.x_le_series && self.series_le_ml && self.x_le_monotone.unwrap_or(true)
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Check `x ≤ Σ B^k a ≤ ML bound` and, for nondecreasing `a`,
/// `x ≤ a e_Φ(·; g(T))`.
pub fn check_instance(inst: &GronwallInstance, kt: &KernelTable, cp: &ConvolutionPowers) -> Result<GronwallReport> {
    let series = series_bound(kt, &inst.g, &inst.a, DEFAULT_SERIES_TERMS, 1e-14)?;
    let quad = if inst.grid().cells() % 2 == 0 && inst.grid().cells() >= 4 {
        let coarse_kt = kt.coarsen()?;
        let coarse = inst.coarsen()?;
        let cs = series_bound(&coarse_kt, &coarse.g, &coarse.a, DEFAULT_SERIES_TERMS, 1e-14)?;
        (0..coarse.a.len())
            .map(|i| (series.values.value(2 * i) - cs.values.value(i)).abs())
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let slack = BOUND_SLACK + 2.0 * quad;
    let ml = ml_bound(kt, &inst.g, &inst.a)?;
    let margin_series: Vec<f64> = series.values.sub(&inst.x)?.into_values();
    let margin_ml: Vec<f64> = ml.sub(&series.values)?.into_values();
    let margin_monotone = if inst.flags.a_nondecreasing {
        Some(monotone_bound(cp, &inst.g, &inst.a)?.sub(&inst.x)?.into_values())
    } else {
        None
    };
    let min_series = min_of(&margin_series);
    let min_ml = min_of(&margin_ml);
    let min_mono = margin_monotone.as_deref().map(min_of);
    Ok(GronwallReport {
        flags: inst.flags,
        series_terms: series.terms,
        series_tail_bound: series.tail_bound,
        slack,
        x_le_series: min_series >= -slack,
        series_le_ml: min_ml >= -slack,
        x_le_monotone: min_mono.map(|m| m >= -slack),
        min_margin_series: min_series,
        min_margin_ml: min_ml,
        min_margin_monotone: min_mono,
        margin_series,
        margin_ml,
        margin_monotone,
    })
}

/// Solve `x = r a + q B x` by fixed-point iteration. With `r = q = 1` this is
/// the equality case of the inequality.
pub fn solve_b_equation(kt: &KernelTable, g: &GridFunction, a: &GridFunction, r: f64, q: f64) -> Result<GridFunction> {
    let base = a.scale(r);
    let mut x = base.clone();
    for _ in 0..DEFAULT_SERIES_TERMS {
        let next = base.add(&apply_b(kt, g, &x)?.scale(q))?;
        let change = next.sup_distance(&x)?;
        x = next;
        if change <= 1e-15 * x.sup_norm().max(1e-300) {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        iterations: DEFAULT_SERIES_TERMS,
        ratios: Vec::new(),
    })
}

/// Equality instance `x = a + B x`.
pub fn saturated_instance(kt: &KernelTable, a: GridFunction, g: GridFunction) -> Result<GronwallInstance> {
    let x = solve_b_equation(kt, &g, &a, 1.0, 1.0)?;
    GronwallInstance::new(x, a, g)
}

/// Positive piecewise-linear function through `knots` random values.
fn random_spline(rng: &mut ChaCha8Rng, grid: Grid, knots: usize, lo: f64, hi: f64, monotone: bool) -> GridFunction {
    let mut ys: Vec<f64> = (0..knots).map(|_| rng.random_range(lo..hi)).collect();
    if monotone {
        ys.sort_by(f64::total_cmp);
    }
    let t_end = grid.t_end();
    GridFunction::from_fn(grid, |t| {
        let s = (t / t_end * (knots - 1) as f64).min((knots - 1) as f64);
        let k = (s.floor() as usize).min(knots - 2);
        let w = s - k as f64;
        (1.0 - w) * ys[k] + w * ys[k + 1]
    })
}

/// Positive piecewise-linear function through `knots` values drawn
/// uniformly from `[lo, hi)` with a generator seeded by `seed`; sorted when
/// `monotone` is set.
pub fn random_positive_spline(seed: u64, grid: Grid, knots: usize, lo: f64, hi: f64, monotone: bool) -> Result<GridFunction> {
    if knots < 2 || !(0.0 <= lo && lo < hi) {
        return Err(Error::InvalidParameter(format!("spline needs at least two knots and 0 <= lo < hi (got {knots}, {lo}, {hi})")));
    }
    Ok(random_spline(&mut ChaCha8Rng::seed_from_u64(seed), grid, knots, lo, hi, monotone))
}

/// Random valid instance: `a` and `g` positive random splines (`g`
/// nondecreasing, `a` nondecreasing for half the seeds) and
/// `x = r a + q B x` with `r, q ∈ [0, 1]`, which satisfies the inequality
/// because `B` is monotone and `x ≥ 0`.
pub fn random_instance(kt: &KernelTable, seed: u64) -> Result<GronwallInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = *kt.grid();
    let monotone_a = rng.random::<bool>();
    let a = random_spline(&mut rng, grid, 6, 0.1, 2.0, monotone_a);
    let g = random_spline(&mut rng, grid, 6, 0.0, 2.0, true);
    let r = rng.random_range(0.0..=1.0);
    let q = rng.random_range(0.0..=1.0);
    let x = solve_b_equation(kt, &g, &a, r, q)?;
    GronwallInstance::new(x, a, g)
}

/// Run [`check_instance`] on `count` random instances whose seeds derive
/// from `master_seed`. Results come back in seed order.
pub fn random_instance_sweep(kt: &KernelTable, cp: &ConvolutionPowers, master_seed: u64, count: usize) -> Result<Vec<(u64, GronwallReport)>> {
    let mut seeder = ChaCha8Rng::seed_from_u64(master_seed);
    let seeds: Vec<u64> = (0..count).map(|_| seeder.random()).collect();
    seeds
        .into_par_iter()
        .map(|s| {
            let inst = random_instance(kt, s)?;
            inst.certify(kt)?;
            Ok((s, check_instance(&inst, kt, cp)?))
        })
        .collect()
}

/// `max_{i, k ≤ k_max} B^k 1 − g^k u_k*`; nonpositive when the power bound
/// holds.
pub fn power_bound_excess(kt: &KernelTable, cp: &ConvolutionPowers, g: &GridFunction, k_max: usize) -> Result<f64> {
    let mut bk = GridFunction::constant(*g.grid(), &[1.0]);
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=k_max.min(cp.k_max()) {
        bk = apply_b(kt, g, &bk)?;
        for i in 0..bk.len() {
            worst = worst.max(bk.value(i) - g.value(i).powi(k as i32) * cp.u_star[k][i]);
        }
    }
    Ok(worst)
}

/// `max_i B^k(f₁ f₂) − f₁ B^k f₂`; nonpositive when the product bound holds.
pub fn product_bound_excess(kt: &KernelTable, g: &GridFunction, f1: &GridFunction, f2: &GridFunction, k: usize) -> Result<f64> {
    let lhs = apply_b_power(kt, g, &f1.zip_with(f2, |x, y| x * y)?, k)?;
    let rhs = apply_b_power(kt, g, f2, k)?.zip_with(f1, |x, y| x * y)?;
    Ok(lhs.sub(&rhs)?.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Envelope `(CΓ(β)g(t))^k t^{kβ} sup|f| / Γ(kβ+1)` for `|B^k f|`.
pub fn power_envelope(kt: &KernelTable, g: &GridFunction, f_sup: f64, k: usize) -> GridFunction {
    let c = kt.c_fit * gamma(kt.beta);
    let kf = k as f64;
    let lg = ln_gamma(kf * kt.beta + 1.0);
    let vals = (0..g.len())
        .map(|i| {
            let x = c * g.value(i) * g.grid().node(i).powf(kt.beta);
            if x <= 0.0 {
                if k == 0 { f_sup } else { 0.0 }
            } else {
                f_sup * (kf * x.ln() - lg).exp()
            }
        })
        .collect();
    GridFunction::scalar(*g.grid(), vals).expect("one value per node")
}

/// One row of a continuity experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityRow {
    pub delta_norm: f64,
    /// `sup_t |f_δ(t) − f(t)|`.
    pub deviation: f64,
    /// Bound at `T′`.
    pub bound: f64,
    /// `deviation / |δ|`.
    pub ratio: f64,
    /// Smallest `bound(t) − deviation(t)` over the nodes.
    pub min_margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub horizon_cells: usize,
    pub t_prime: f64,
    pub lipschitz: f64,
    /// `e_Φ(T′; L_R̃)`.
    pub growth: f64,
    pub rows: Vec<ContinuityRow>,
}

impl ContinuityReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative allowance for quadrature and iteration error in the continuity
/// bounds.
const CONTINUITY_EPS: f64 = 1e-6;

/// Largest number of cells with `C_R̃ U_Φ(t) < R` for `R̃ = R + |f₀| + 1`.
fn common_horizon(problem: &IvpProblem, kt: &KernelTable, radius: f64) -> Result<(usize, f64)> {
    let r_tilde = radius + vec_norm(&problem.f0) + 1.0;
    let c = (problem.bound_c)(r_tilde);
    let max_cells = (((problem.t_end / kt.step()) * (1.0 + 1e-12)).floor() as usize).min(kt.grid().cells());
    let cells = kt.u_node[..=max_cells].partition_point(|&u| c * u < radius) - 1;
    if cells == 0 {
        return Err(Error::HorizonTooCoarse { c_r: c, r: radius, h: kt.step() });
    }
    Ok((cells, r_tilde))
}

fn node_deviation(a: &GridFunction, b: &GridFunction) -> Result<Vec<f64>> {
    Ok(a.sub(b)?.node_norms())
}

/// Perturb the initial datum by each `δ` (with `|δ| ≤ 1`), solve on a
/// common horizon and compare the deviation with
/// `|δ| e_Φ(t; L_R̃)`.
pub fn continuity_experiment_initial(
    problem: &IvpProblem,
    kt: &KernelTable,
    cp: &ConvolutionPowers,
    radius: f64,
    deltas: &[Vec<f64>],
) -> Result<ContinuityReport> {
    let (cells, r_tilde) = common_horizon(problem, kt, radius)?;
    let lip = (problem.lip_l)(r_tilde);
    let opts = PicardOptions::new(radius).horizon_cells(cells);
    let (base, _) = picard_solve(problem, kt, &opts)?;
    let growth: Vec<f64> = (0..=cells)
        .map(|i| phi_exp_series(cp, lip, i).map(|s| s.value))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(deltas.len());
    for delta in deltas {
        let dn = vec_norm(delta);
        if delta.len() != problem.dim() || dn > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "perturbation {delta:?} must have dimension {} and norm at most 1",
                problem.dim()
            )));
        }
        let mut p = problem.clone();
        for (f, d) in p.f0.iter_mut().zip(delta) {
            *f += d;
        }
        let (f, _) = picard_solve(&p, kt, &opts)?;
        let dev = node_deviation(&f, &base)?;
        let min_margin = dev
            .iter()
            .zip(&growth)
            .map(|(d, e)| dn * e * (1.0 + CONTINUITY_EPS) + 2.0 * opts.tol - d)
            .fold(f64::INFINITY, f64::min);
        let deviation = dev.iter().copied().fold(0.0, f64::max);
        rows.push(ContinuityRow {
            delta_norm: dn,
            deviation,
            bound: dn * growth[cells],
            ratio: if dn > 0.0 { deviation / dn } else { 0.0 },
            min_margin,
            holds: min_margin >= 0.0,
        });
    }
    Ok(ContinuityReport {
        horizon_cells: cells,
        t_prime: kt.grid().node(cells),
        lipschitz: lip,
        growth: growth[cells],
        rows,
    })
}

/// A right-hand side depending on a parameter `v ∈ ℝ^m`.
#[derive(Clone)]
pub struct ParamFamily {
    pub build: Arc<dyn Fn(&[f64]) -> Result<IvpProblem> + Send + Sync>,
    /// `L̃_R`: Lipschitz constant of `v ↦ F(t, y; v)` for `|y| ≤ R`.
    pub param_lip: RadiusFn,
}

/// Perturb the parameter by each `δ`, solve on the horizon of the base
/// problem and compare the deviation with `L̃ |δ| U_Φ(t) e_Φ(t; L_R̃)`.
pub fn continuity_experiment_parameter(
    family: &ParamFamily,
    kt: &KernelTable,
    cp: &ConvolutionPowers,
    radius: f64,
    v0: &[f64],
    deltas: &[Vec<f64>],
) -> Result<ContinuityReport> {
    let base_problem = (family.build)(v0)?;
    let (cells, r_tilde) = common_horizon(&base_problem, kt, radius)?;
    let lip = (base_problem.lip_l)(r_tilde);
    let lip_v = (family.param_lip)(r_tilde);
    let opts = PicardOptions::new(radius).horizon_cells(cells);
    let (base, _) = picard_solve(&base_problem, kt, &opts)?;
    let growth: Vec<f64> = (0..=cells)
        .map(|i| phi_exp_series(cp, lip, i).map(|s| s.value))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(deltas.len());
    for delta in deltas {
        if delta.len() != v0.len() {
            return Err(Error::Shape(format!("parameter perturbation {delta:?} does not match dimension {}", v0.len())));
        }
        let dn = vec_norm(delta);
        let v: Vec<f64> = v0.iter().zip(delta).map(|(a, b)| a + b).collect();
        let (f, _) = picard_solve(&(family.build)(&v)?, kt, &opts)?;
        let dev = node_deviation(&f, &base)?;
        let bound_at = |i: usize| lip_v * dn * kt.u_node[i] * growth[i];
        let min_margin = dev
            .iter()
            .enumerate()
            .map(|(i, d)| bound_at(i) * (1.0 + CONTINUITY_EPS) + 2.0 * opts.tol - d)
            .fold(f64::INFINITY, f64::min);
        let deviation = dev.iter().copied().fold(0.0, f64::max);
        rows.push(ContinuityRow {
            delta_norm: dn,
            deviation,
            bound: bound_at(cells),
            ratio: if dn > 0.0 { deviation / dn } else { 0.0 },
            min_margin,
            holds: min_margin >= 0.0,
        });
    }
    Ok(ContinuityReport {
        horizon_cells: cells,
        t_prime: kt.grid().node(cells),
        lipschitz: lip,
        growth: growth[cells],
        rows,
    })
}

/// Sup-norm difference `h = f₁ − f₂` of two solves of the same problem, one
/// started from `f ≡ f₀` and one from a displaced iterate. Zero up to the
/// iteration tolerance when the solution is unique.
pub fn uniqueness_gap(problem: &IvpProblem, kt: &KernelTable, opts: &PicardOptions, displacement: f64) -> Result<f64> {
    let (f1, st) = picard_solve(problem, kt, opts)?;
    let grid = kt.grid().prefix(st.horizon_cells)?;
    let start: Vec<f64> = problem.f0.iter().map(|v| v + displacement).collect();
    let opts2 = opts.clone().horizon_cells(st.horizon_cells).initial(GridFunction::constant(grid, &start));
    let (f2, _) = picard_solve(problem, kt, &opts2)?;
    f1.sub(&f2).map(|h| h.sup_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernstein::BernsteinFunction;
    use crate::laplace::InversionConfig;
    use crate::phi_exp::{auto_k_max, convolution_powers};
    use crate::special::mittag_leffler;
    use crate::volterra::BuiltinRhs;
    use approx::assert_relative_eq;

    fn table(n: usize) -> KernelTable {
        let phi = BernsteinFunction::stable(0.5).unwrap();
        KernelTable::build(&phi, Grid::new(1.0, n).unwrap(), &InversionConfig::default()).unwrap()
    }

    fn ones(kt: &KernelTable) -> GridFunction {
        GridFunction::constant(*kt.grid(), &[1.0])
    }

    #[test]
    fn b_examples() {
        let kt = table(64);
        let one = ones(&kt);
        let zero = GridFunction::zeros(*kt.grid(), 1);
        let b1 = apply_b(&kt, &one, &one).unwrap();
        for i in 0..=64 {
            assert_relative_eq!(b1.value(i), kt.u_node[i], max_relative = 1e-14);
        }
        assert!(apply_b(&kt, &one, &zero).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(apply_b(&kt, &zero, &one).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let other = GridFunction::constant(Grid::new(2.0, 64).unwrap(), &[1.0]);
        assert!(apply_b(&kt, &one, &other).is_err());
    }

    #[test]
    fn series_examples() {
        let kt = table(1024);
        let one = ones(&kt);
        let zero = GridFunction::zeros(*kt.grid(), 1);
        let s = series_bound(&kt, &one, &zero, 100, 1e-14).unwrap();
        assert!(s.values.as_slice().iter().all(|&v| v == 0.0));
        let s = series_bound(&kt, &zero, &one, 100, 1e-14).unwrap();
        assert_eq!(s.values, one);
        let s = series_bound(&kt, &one, &one, 200, 1e-14).unwrap();
        assert!((s.values.value(1024) - 5.008980080762283).abs() <= 1e-2);
    }

    #[test]
    fn ml_examples() {
        let kt = table(512);
        let one = ones(&kt);
        let zero = GridFunction::zeros(*kt.grid(), 1);
        assert!(ml_bound(&kt, &one, &zero).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(ml_bound(&kt, &zero, &one).unwrap(), one);
        let ml = ml_bound(&kt, &one, &one).unwrap();
        let s = series_bound(&kt, &one, &one, 200, 1e-14).unwrap();
        for i in 0..=512 {
            let t = kt.grid().node(i);
            // With κ = 1 the bound is E_{1/2}(t^{1/2}) exactly.
            assert_relative_eq!(ml.value(i), mittag_leffler(0.5, t.sqrt()).unwrap(), max_relative = 1e-12);
            assert!(ml.value(i) >= s.values.value(i) - 1e-8 - 1e-3);
        }
    }

    #[test]
    fn monotone_examples() {
        let kt = table(512);
        let cp = convolution_powers(&kt, auto_k_max(&kt, 1.0)).unwrap();
        let one = ones(&kt);
        let zero = GridFunction::zeros(*kt.grid(), 1);
        assert_eq!(monotone_bound(&cp, &zero, &one).unwrap(), one);
        let m = monotone_bound(&cp, &one, &one).unwrap();
        let s = series_bound(&kt, &one, &one, 200, 1e-14).unwrap();
        assert!(m.sup_distance(&s.values).unwrap() <= 1e-9);
        let a = GridFunction::from_fn(*kt.grid(), |t| 1.0 + t);
        let m = monotone_bound(&cp, &one, &a).unwrap();
        for i in [128, 256, 512] {
            let t = kt.grid().node(i);
            assert!((m.value(i) - (1.0 + t) * mittag_leffler(0.5, t.sqrt()).unwrap()).abs() <= 2e-2);
        }
        let down = GridFunction::from_fn(*kt.grid(), |t| 2.0 - t);
        assert!(matches!(monotone_bound(&cp, &one, &down), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn instance_validation() {
        let g = Grid::new(1.0, 8).unwrap();
        let one = GridFunction::constant(g, &[1.0]);
        let dec = GridFunction::from_fn(g, |t| 1.0 - t);
        assert!(GronwallInstance::new(one.clone(), one.clone(), dec).is_err());
        let neg = GridFunction::constant(g, &[-1.0]);
        assert!(GronwallInstance::new(one.clone(), neg, one.clone()).is_err());
    }

    #[test]
    fn saturated_and_trivial_instances() {
        let kt = table(512);
        let cp = convolution_powers(&kt, auto_k_max(&kt, 1.0)).unwrap();
        let inst = saturated_instance(&kt, ones(&kt), ones(&kt)).unwrap();
        inst.certify(&kt).unwrap();
        let rep = check_instance(&inst, &kt, &cp).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.margin_series.iter().all(|m| m.abs() <= 1e-10));

        let zero = GridFunction::zeros(*kt.grid(), 1);
        let inst = GronwallInstance::new(zero, GridFunction::from_fn(*kt.grid(), |t| 1.0 + t), ones(&kt)).unwrap();
        let rep = check_instance(&inst, &kt, &cp).unwrap();
        assert!(rep.all_pass() && rep.min_margin_series >= 1.0);
    }

    #[test]
    fn random_instances_pass() {
        let kt = table(256);
        let cp = convolution_powers(&kt, auto_k_max(&kt, 2.0)).unwrap();
        let reps = random_instance_sweep(&kt, &cp, 11, 12).unwrap();
        assert!(reps.iter().all(|(_, r)| r.all_pass()));
        assert!(reps.iter().any(|(_, r)| r.x_le_monotone.is_some()));
        let again = random_instance_sweep(&kt, &cp, 11, 12).unwrap();
        assert_eq!(reps, again);
    }

    #[test]
    fn operator_lemmas() {
        let kt = table(256);
        let cp = convolution_powers(&kt, 8).unwrap();
        let g = GridFunction::from_fn(*kt.grid(), |t| 0.5 + t * t);
        assert!(power_bound_excess(&kt, &cp, &g, 6).unwrap() <= 1e-14);
        let f1 = GridFunction::from_fn(*kt.grid(), |t| t.sqrt());
        let f2 = GridFunction::from_fn(*kt.grid(), |t| 2.0 + (5.0 * t).sin());
        for k in 1..=4 {
            assert!(product_bound_excess(&kt, &g, &f1, &f2, k).unwrap() <= 1e-14);
        }
        for k in 1..=10 {
            let bk = apply_b_power(&kt, &g, &f2, k).unwrap();
            let env = power_envelope(&kt, &g, f2.sup_norm(), k);
            for i in 0..=256 {
                assert!(bk.value(i) <= env.value(i) * (1.0 + 1e-6) + 1e-15, "k={k} i={i}");
            }
        }
    }

    #[test]
    fn continuity_initial_linear() {
        let kt = table(1024);
        let cp = convolution_powers(&kt, auto_k_max(&kt, 1.0)).unwrap();
        let p = IvpProblem::from_builtin(BuiltinRhs::Linear { matrix: vec![vec![-1.0]] }, vec![1.0], 1.0).unwrap();
        let rep = continuity_experiment_initial(&p, &kt, &cp, 1.0, &[vec![0.0], vec![0.1]]).unwrap();
        assert_eq!(rep.rows[0].deviation, 0.0);
        assert!(rep.all_hold());
        assert!(rep.rows[1].deviation < rep.rows[1].bound);
    }

    #[test]
    fn continuity_parameter_affine() {
        let kt = table(1024);
        let cp = convolution_powers(&kt, auto_k_max(&kt, 1.0)).unwrap();
        let family = ParamFamily {
            build: Arc::new(|v: &[f64]| {
                IvpProblem::from_builtin(
                    BuiltinRhs::Affine {
                        matrix: vec![vec![-1.0]],
                        xi: vec![v[0]],
                    },
                    vec![1.0],
                    1.0,
                )
            }),
            param_lip: Arc::new(|_| 1.0),
        };
        let rep = continuity_experiment_parameter(&family, &kt, &cp, 1.0, &[0.0], &[vec![0.0], vec![0.05]]).unwrap();
        assert_eq!(rep.rows[0].deviation, 0.0);
        assert!(rep.all_hold(), "{rep:?}");
    }

    #[test]
    fn uniqueness_probe() {
        let kt = table(512);
        let p = IvpProblem::from_builtin(BuiltinRhs::Logistic { rate: 1.0 }, vec![0.1], 1.0).unwrap();
        let gap = uniqueness_gap(&p, &kt, &PicardOptions::new(1.0), 0.5).unwrap();
        assert!(gap <= 1e-10, "{gap:e}");
    }
}
