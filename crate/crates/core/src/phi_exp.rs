//! The `Φ`-exponential `e_Φ(t; λ)`, the eigenfunction of `∂^Φ_t` with
//! `e_Φ(0; λ) = 1`.
//!
//! Two deterministic routes are provided:
//!
//! * the convolution-power series `Σ λ^k u_k*(t)`, with `u_0* = 1` and
//!   `u_{k+1}* = I^Φ_t u_k*`, truncated once the tail bound
//!   `u_k*(t) ≤ C₁ C₂^{k−1} β (Γ(β) t^β)^k / Γ(kβ + 1)` drops below `1e-10` of
//!   the partial sum;
//! * inversion of `Φ(z) / (z (Φ(z) − λ))` with the contour shifted past the
//!   pole at `Φ⁻¹(λ)`.
//!
//! For `λ < 0` the series alternates. When the ratio `Σ|terms| / |sum|`
//! exceeds `1e6` the series is refused with [`Error::Cancellation`] and
//! [`phi_exp`] switches to the inversion route.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bernstein::BernsteinFunction;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernel::{KernelTable, BOUNDARY_LAYER_NODES};
use crate::laplace::{abscissa_for_eigen, invert, InversionConfig, PhiTransform};
use crate::special::{gamma, ln_gamma, CompensatedSum};

pub use crate::special::{mittag_leffler, mittag_leffler_derivative, MittagLefflerTable};

pub const DEFAULT_K_MAX: usize = 64;

/// Required ratio of certified tail to partial sum.
pub const SERIES_TAIL_TOL: f64 = 1e-10;

/// Largest tolerated `Σ|terms| / |sum|` for alternating series.
pub const MAX_CANCELLATION: f64 = 1e6;

/// Hard cap on the number of majorant terms examined for a tail bound.
const MAJORANT_MAX_TERMS: usize = 20_000;

/// Upper bounds `u_k*(t) ≤ C₁ C₂^{k−1} β (Γ(β) t^β)^k / Γ(kβ + 1)` with
/// `C₁` bounding `U_Φ(t)/t^β` and `C₂` bounding `u_Φ(t)/t^{β−1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Majorant {
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Majorant {
    pub fn from_table(kt: &KernelTable) -> Self {
        Self {
            beta: kt.beta,
            c1: kt.c_u_fit,
            c2: kt.c_fit,
        }
    }

    /// Bound on `u_k*(t)` for `k ≥ 1`.
    pub fn term(&self, k: usize, t: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        let kf = k as f64;
        let ln = self.c1.ln() + (kf - 1.0) * self.c2.ln() + self.beta.ln() + kf * (gamma(self.beta).ln() + self.beta * t.ln())
            - ln_gamma(kf * self.beta + 1.0);
        ln.exp()
    }

    /// `Σ_{k > after} |λ|^k · term(k, t)`.
    pub fn tail(&self, lambda: f64, t: f64, after: usize) -> f64 {
        if lambda == 0.0 || t <= 0.0 {
            return 0.0;
        }
        // |λ|^k term(k) = (C₁β/C₂) x^k / Γ(kβ+1), x = |λ| C₂ Γ(β) t^β.
        let ln_x = (lambda.abs() * self.c2 * gamma(self.beta)).ln() + self.beta * t.ln();
        let ln_pref = (self.c1 * self.beta / self.c2).ln();
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for k in after + 1..after + 1 + MAJORANT_MAX_TERMS {
            let kf = k as f64;
            let a = (ln_pref + kf * ln_x - ln_gamma(kf * self.beta + 1.0)).exp();
            sum += a;
            if a <= prev && a <= 1e-17 * sum {
                return sum;
            }
            prev = a;
        }
        f64::INFINITY
    }

    /// Smallest `K` such that the tail after `K` falls below `rel_tol · floor`,
    /// where `floor` is a lower bound on the magnitude of the sum.
    pub fn terms_needed(&self, lambda: f64, t: f64, rel_tol: f64, floor: f64) -> usize {
        (0..MAJORANT_MAX_TERMS)
            .find(|&k| self.tail(lambda, t, k) < rel_tol * floor)
            .unwrap_or(MAJORANT_MAX_TERMS)
    }
}

/// Number of convolution powers the majorant asks for to certify
/// `e_Φ(t; λ)` on the whole table to `SERIES_TAIL_TOL`, never below
/// [`DEFAULT_K_MAX`]. For `λ < 0` the sum is only known to be positive, so a
/// floor of `1e-2` on its size is assumed; the per-node rule in
/// [`phi_exp_series`] remains the actual certificate.
pub fn auto_k_max(kt: &KernelTable, lambda: f64) -> usize {
    let floor = if lambda >= 0.0 { 1.0 } else { 1e-2 };
    let m = Majorant::from_table(kt);
    m.terms_needed(lambda, kt.grid().t_end(), SERIES_TAIL_TOL, floor)
        .max(DEFAULT_K_MAX)
}

/// `u_k*` on the kernel grid for `k = 0..=K_max`.
#[derive(Debug, Clone)]
pub struct ConvolutionPowers {
    grid: Grid,
    pub u_star: Vec<Vec<f64>>,
    pub majorant: Majorant,
}

pub fn convolution_powers(kt: &KernelTable, k_max: usize) -> Result<ConvolutionPowers> {
    if k_max < 1 {
        return Err(Error::InvalidParameter("K_max must be at least 1".into()));
    }
    let grid = *kt.grid();
    let mut u_star = Vec::with_capacity(k_max + 1);
    let mut current = GridFunction::constant(grid, &[1.0]);
    u_star.push(current.as_slice().to_vec());
    for _ in 0..k_max {
        current = kt.frac_integral(&current)?;
        u_star.push(current.as_slice().to_vec());
    }
    Ok(ConvolutionPowers {
        grid,
        u_star,
        majorant: Majorant::from_table(kt),
    })
}

impl ConvolutionPowers {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.u_star.len() - 1
    }

    /// Largest ratio `u_k*(t_i) / majorant_k(t_i)` over `1 ≤ k ≤ k_max` at
    /// node `i`.
    ///
    /// The majorant bounds the exact convolution powers. Within a few cells
    /// of the origin the discrete powers decay only geometrically in `k`
    /// while the majorant decays like `1/Γ(kβ + 1)`, so the ratio is large
    /// there even though both are negligibly small.
    pub fn majorant_ratio_at(&self, i: usize, k_max: usize) -> f64 {
        let t = self.grid.node(i);
        self.u_star
            .iter()
            .enumerate()
            .take(k_max + 1)
            .skip(1)
            .map(|(k, row)| row[i] / self.majorant.term(k, t))
            .fold(0.0, f64::max)
    }
}

/// A certified partial sum of the convolution-power series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    /// Number of terms summed (`k = 0..terms`).
    pub terms: usize,
    /// Majorant bound on the omitted tail.
    pub tail_bound: f64,
    /// `Σ|terms| / |sum|`; 1 for series without cancellation.
    pub cancellation: f64,
}

/// `e_Φ(t_i; λ)` by the convolution-power series at node `t_index`.
pub fn phi_exp_series(cp: &ConvolutionPowers, lambda: f64, t_index: usize) -> Result<SeriesValue> {
    if t_index >= cp.grid.len() {
        return Err(Error::Shape(format!("node {t_index} outside the grid")));
    }
    if lambda == 0.0 || t_index == 0 {
        return Ok(SeriesValue {
            value: 1.0,
            terms: 1,
            tail_bound: 0.0,
            cancellation: 1.0,
        });
    }
    let t = cp.grid.node(t_index);
    let ln_abs = lambda.abs().ln();
    let mut acc = CompensatedSum::new();
    let mut tail = f64::INFINITY;
    for (k, row) in cp.u_star.iter().enumerate() {
        // λ^k alone overflows long before λ^k u_k* does.
        let u = row[t_index];
        if k > 0 && u < f64::MIN_POSITIVE {
            // The power underflowed while the tail is still uncertified.
            return Err(Error::Truncation {
                terms: k,
                tail,
                required: SERIES_TAIL_TOL * acc.total().abs(),
            });
        }
        let term = if u > 0.0 { (k as f64 * ln_abs + u.ln()).exp() } else { 0.0 };
        if !term.is_finite() {
            return Err(Error::Truncation {
                terms: k,
                tail: f64::INFINITY,
                required: 0.0,
            });
        }
        acc.add(if lambda < 0.0 && k % 2 == 1 { -term } else { term });
        tail = cp.majorant.tail(lambda, t, k);
        let partial = acc.total();
        // The majorant bounds the exact powers only; the discrete ones can
        // decay more slowly, so the last computed term must be small too.
        if tail < SERIES_TAIL_TOL * partial.abs() && term <= SERIES_TAIL_TOL * partial.abs() {
            let cancellation = acc.abs_total() / partial.abs();
            if cancellation > MAX_CANCELLATION {
                return Err(Error::Cancellation { ratio: cancellation });
            }
            return Ok(SeriesValue {
                value: partial,
                terms: k + 1,
                tail_bound: tail,
                cancellation,
            });
        }
    }
    let partial = acc.total();
    if lambda < 0.0 && acc.abs_total() > MAX_CANCELLATION * partial.abs() {
        return Err(Error::Cancellation {
            ratio: acc.abs_total() / partial.abs(),
        });
    }
    Err(Error::Truncation {
        terms: cp.u_star.len(),
        tail,
        required: SERIES_TAIL_TOL * partial.abs(),
    })
}

/// The whole curve `e_Φ(·; λ)` by the series.
pub fn phi_exp_series_curve(cp: &ConvolutionPowers, lambda: f64) -> Result<GridFunction> {
    let values: Result<Vec<f64>> = (0..cp.grid.len())
        .into_par_iter()
        .map(|i| phi_exp_series(cp, lambda, i).map(|s| s.value))
        .collect();
    GridFunction::scalar(cp.grid, values?)
}

/// Result of the inversion route.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceEigenValue {
    pub value: f64,
    /// Contour shift actually used.
    pub shift: f64,
    /// Abscissa `Φ⁻¹(λ)` of the pole (zero for `λ ≤ 0`).
    pub pole: f64,
    pub warning: Option<String>,
}

/// `e_Φ(t; λ)` by inverting `Φ(z) / (z (Φ(z) − λ))`.
///
/// The contour is placed at `max(shift from cfg, Φ⁻¹(λ))`, so the inverted
/// function `e^{−Φ⁻¹(λ) t} e_Φ(t; λ)` stays bounded and the inversion error is
/// not multiplied by an exponential in `t`. The sample
/// points closest to the pole lie at `shift + ln 2 / t` (Gaver–Stehfest) or
/// `shift + 4M/(5t)` (Talbot); a warning is attached when that gap is below
/// `Φ⁻¹(λ) / 2`.
pub fn phi_exp_laplace(phi: &BernsteinFunction, lambda: f64, t: f64, cfg: &InversionConfig) -> Result<LaplaceEigenValue> {
    if !(t > 0.0) {
        return Err(Error::domain("phi_exp_laplace", format!("t = {t} must be positive")));
    }
    if lambda == 0.0 {
        return Ok(LaplaceEigenValue {
            value: 1.0,
            shift: cfg.abscissa_shift,
            pole: 0.0,
            warning: None,
        });
    }
    let pole = abscissa_for_eigen(phi, lambda)?;
    let shift = cfg.abscissa_shift.max(pole);
    let tr = PhiTransform {
        phi,
        real: move |z: f64, p: f64| p / (z * (p - lambda)),
        complex: move |z: Complex64, p: Complex64| p / (z * (p - lambda)),
    };
    let value = invert(&tr, t, &cfg.with_shift(shift))?;
    let nearest = shift - pole
        + match cfg.method {
            crate::laplace::InversionMethod::GaverStehfest { .. } => std::f64::consts::LN_2 / t,
            crate::laplace::InversionMethod::FixedTalbot { nodes } => 0.8 * nodes as f64 / t,
        };
    let warning = (pole > 0.0 && nearest < 0.5 * pole).then(|| {
        format!("nearest transform sample is {nearest:e} from the pole at {pole:e}; result may be ill-conditioned")
    });
    Ok(LaplaceEigenValue {
        value,
        shift,
        pole,
        warning,
    })
}

/// Which route produced a value from [`phi_exp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Series,
    Laplace,
}

/// `e_Φ(t_i; λ)` by the series, falling back to inversion when the series
/// loses too many digits to cancellation or cannot certify its tail.
pub fn phi_exp(
    phi: &BernsteinFunction,
    cp: &ConvolutionPowers,
    lambda: f64,
    t_index: usize,
    cfg: &InversionConfig,
) -> Result<(f64, Route)> {
    match phi_exp_series(cp, lambda, t_index) {
        Ok(s) => Ok((s.value, Route::Series)),
        Err(Error::Cancellation { .. } | Error::Truncation { .. }) => {
            let t = cp.grid.node(t_index);
            phi_exp_laplace(phi, lambda, t, cfg).map(|v| (v.value, Route::Laplace))
        }
        Err(e) => Err(e),
    }
}

/// Sup norm of `∂^Φ_t e − λ e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenResidual {
    /// Over all nodes `i ≥ 1`.
    pub sup_all: f64,
    /// Over nodes past the start-up layer of the discrete derivative.
    pub sup_past_layer: f64,
    /// `‖e‖_∞`, for relative comparisons.
    pub norm: f64,
}

pub fn eigen_residual(kt: &KernelTable, lambda: f64, e: &GridFunction) -> Result<EigenResidual> {
    let d = kt.caputo_derivative(e)?;
    let r: Vec<f64> = (0..e.len()).map(|i| (d.value(i) - lambda * e.value(i)).abs()).collect();
    let sup_from = |i0: usize| r.iter().skip(i0).copied().fold(0.0, f64::max);
    Ok(EigenResidual {
        sup_all: sup_from(1),
        sup_past_layer: sup_from(BOUNDARY_LAYER_NODES + 1),
        norm: e.sup_norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gamma;
    use approx::assert_relative_eq;

    const E_HALF_ONE: f64 = 5.008980080762283;
    const E_HALF_MINUS_ONE: f64 = 0.427583576155807;

    fn stable_powers(alpha: f64, n: usize, k_max: usize) -> (KernelTable, ConvolutionPowers) {
        let phi = BernsteinFunction::stable(alpha).unwrap();
        let kt = KernelTable::build(&phi, Grid::new(1.0, n).unwrap(), &InversionConfig::default()).unwrap();
        let cp = convolution_powers(&kt, k_max).unwrap();
        (kt, cp)
    }

    #[test]
    fn first_powers() {
        let (kt, cp) = stable_powers(0.5, 64, 3);
        assert!(cp.u_star[0].iter().all(|&v| v == 1.0));
        for (a, b) in cp.u_star[1].iter().zip(&kt.u_node) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn third_power_stable_half() {
        let (_, cp) = stable_powers(0.5, 4096, 3);
        assert!((cp.u_star[3][4096] - 1.0 / gamma(2.5)).abs() <= 2e-3);
    }

    #[test]
    fn powers_nonnegative_nondecreasing() {
        let (_, cp) = stable_powers(0.3, 256, 10);
        for row in &cp.u_star {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn series_examples() {
        let (_, cp) = stable_powers(0.5, 4096, 64);
        assert_eq!(phi_exp_series(&cp, 0.0, 4096).unwrap().value, 1.0);
        let v = phi_exp_series(&cp, 1.0, 4096).unwrap();
        assert!((v.value - E_HALF_ONE).abs() <= 1e-3, "{v:?}");
        assert!(v.tail_bound < 1e-10 * v.value);
        let v = phi_exp_series(&cp, -1.0, 4096).unwrap();
        assert!((v.value - E_HALF_MINUS_ONE).abs() <= 1e-3, "{v:?}");
    }

    #[test]
    fn series_reports_truncation() {
        let (_, cp) = stable_powers(0.5, 64, 4);
        match phi_exp_series(&cp, 1.0, 64) {
            Err(Error::Truncation { terms, tail, .. }) => {
                assert_eq!(terms, 5);
                assert!(tail > 0.0);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn series_refuses_heavy_cancellation_and_falls_back() {
        let phi = BernsteinFunction::stable(0.5).unwrap();
        let kt = KernelTable::build(&phi, Grid::new(1.0, 256).unwrap(), &InversionConfig::default()).unwrap();
        let cp = convolution_powers(&kt, 400).unwrap();
        assert!(matches!(phi_exp_series(&cp, -8.0, 256), Err(Error::Cancellation { .. })));
        let (v, route) = phi_exp(&phi, &cp, -8.0, 256, &InversionConfig::default()).unwrap();
        assert_eq!(route, Route::Laplace);
        // E_{1/2}(−z) = e^{z²} erfc(z); the direct series refuses z = −8.
        assert!(mittag_leffler(0.5, -8.0).is_err());
        let oracle = 64f64.exp() * statrs::function::erf::erfc(8.0);
        assert_relative_eq!(v, oracle, max_relative = 1e-4);
    }

    #[test]
    fn laplace_examples() {
        let st = BernsteinFunction::stable(0.5).unwrap();
        let gs = InversionConfig::default();
        assert_eq!(phi_exp_laplace(&st, 0.0, 1.0, &gs).unwrap().value, 1.0);
        let v = phi_exp_laplace(&st, 1.0, 1.0, &gs).unwrap();
        assert!((v.value - E_HALF_ONE).abs() <= 1e-4);
        assert_relative_eq!(v.pole, 1.0, max_relative = 1e-10);
        assert!(v.warning.is_none());
    }

    #[test]
    fn tempered_routes_agree() {
        let te = BernsteinFunction::tempered(0.5, 1.0).unwrap();
        let kt = KernelTable::build(&te, Grid::new(1.0, 4096).unwrap(), &InversionConfig::default()).unwrap();
        // The generic majorant is loose for tempered kernels: 64 terms do not
        // certify the tail, the adaptive count does.
        assert!(matches!(
            phi_exp_series(&convolution_powers(&kt, 64).unwrap(), -1.0, 4096),
            Err(Error::Truncation { .. })
        ));
        let cp = convolution_powers(&kt, auto_k_max(&kt, -1.0)).unwrap();
        let s = phi_exp_series(&cp, -1.0, 4096).unwrap().value;
        let l = phi_exp_laplace(&te, -1.0, 1.0, &InversionConfig::default()).unwrap().value;
        assert!((s - l).abs() <= 1e-3, "series {s}, laplace {l}");
    }

    #[test]
    fn eigen_residual_examples() {
        let (kt, cp) = stable_powers(0.5, 4096, 64);
        let g = *kt.grid();
        let r = eigen_residual(&kt, 0.0, &GridFunction::constant(g, &[1.0])).unwrap();
        assert_eq!(r.sup_all, 0.0);
        for lambda in [-1.0, 1.0] {
            let e = phi_exp_series_curve(&cp, lambda).unwrap();
            let r = eigen_residual(&kt, lambda, &e).unwrap();
            assert!(r.sup_past_layer <= 5e-2 * r.norm, "{lambda}: {r:?}");
        }
    }

    #[test]
    fn monotone_in_time() {
        let (_, cp) = stable_powers(0.5, 512, 64);
        let up = phi_exp_series_curve(&cp, 1.0).unwrap();
        assert!(up.as_slice().windows(2).all(|w| w[1] >= w[0]));
        let down = phi_exp_series_curve(&cp, -1.0).unwrap();
        assert!(down.as_slice().windows(2).all(|w| w[1] <= w[0]));
        assert!(down.as_slice().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn majorant_is_exact_for_stable() {
        let (kt, cp) = stable_powers(0.5, 1024, 8);
        let m = Majorant::from_table(&kt);
        for k in 1..=8 {
            assert_relative_eq!(m.term(k, 1.0), 1.0 / gamma(0.5 * k as f64 + 1.0), max_relative = 1e-8);
        }
        let r = cp.majorant_ratio_at(1024, 8);
        assert!(r <= 1.0 + 5e-3, "{r}");
    }

    #[test]
    fn terms_needed_grows_with_lambda() {
        let m = Majorant {
            beta: 0.3,
            c1: 1.0 / gamma(1.3),
            c2: 1.0 / gamma(0.3),
        };
        let k1 = m.terms_needed(1.0, 1.0, 1e-10, 1.0);
        let k2 = m.terms_needed(2.0, 1.0, 1e-10, 1.0);
        assert!(k2 > k1 && k1 > 10);
        assert!(m.tail(2.0, 1.0, k2) < 1e-10);
    }
}
