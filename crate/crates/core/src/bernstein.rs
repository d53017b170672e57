//! Bernstein functions described by their Lévy–Khintchine data.
//!
//! Catalog kinds (stable, tempered stable, finite stable mixtures) carry
//! closed forms for `Φ`, the Lévy tail `ν̄_Φ(t) = ν_Φ(t, ∞)` and its running
//! integral. Custom kinds supply `Φ` and `ν̄_Φ` as callables; the toolkit never
//! integrates a raw Lévy density to recover `Φ`.
//!
//! Every function also records the potential-density envelope
//! `u_Φ(t) ≤ C t^{β-1}` on `(0, t₀)` as plain data (`beta`, `c_assump`, `t0`).
//! For catalog kinds these are set analytically; for custom kinds they are an
//! input contract, checked empirically by [`crate::kernel::KernelTable`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::special::{gamma, gamma_p, gamma_q};

/// Scalar callable shared between threads.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Bernstein function supplied by the user.
#[derive(Clone)]
pub struct CustomPhi {
    pub name: String,
    pub phi: ScalarFn,
    pub levy_tail: ScalarFn,
    pub levy_density: Option<ScalarFn>,
}

impl fmt::Debug for CustomPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPhi")
            .field("name", &self.name)
            .field("levy_density", &self.levy_density.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PhiKind {
    /// `Φ(λ) = λ^α`.
    Stable { alpha: f64 },
    /// `Φ(λ) = (λ + θ)^α − θ^α`.
    TemperedStable { alpha: f64, theta: f64 },
    /// `Φ(λ) = Σ wᵢ λ^{αᵢ}`.
    StableMixture { weights: Vec<f64>, alphas: Vec<f64> },
    Custom(CustomPhi),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiFlags {
    pub is_special: bool,
    pub levy_mass_infinite: bool,
    pub levy_abs_continuous: bool,
}

impl PhiFlags {
    const CATALOG: PhiFlags = PhiFlags {
        is_special: true,
        levy_mass_infinite: true,
        levy_abs_continuous: true,
    };
}

#[derive(Debug, Clone)]
pub struct BernsteinFunction {
    kind: PhiKind,
    /// Killing rate `a_Φ`.
    pub a: f64,
    /// Drift `b_Φ`.
    pub b: f64,
    /// Envelope exponent `β` in `u_Φ(t) ≤ C t^{β-1}`.
    pub beta: f64,
    /// Envelope constant `C`.
    pub c_assump: f64,
    /// Radius `t₀` on which the envelope is asserted.
    pub t0: f64,
    pub flags: PhiFlags,
}

fn check_order(name: &str, alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {alpha} must lie in (0, 1)")))
    }
}

/// Envelope constant for the tempered stable potential density on `(0, t0)`.
///
/// Uses `U(t) ≤ e/Φ(1/t)` and `u(t) ≤ U(t)/t`, together with
/// `t^α Φ(1/t) = (1 + θt)^α − (θt)^α`, which decreases in `t`.
fn tempered_envelope(alpha: f64, theta: f64, t0: f64) -> f64 {
    let x = theta * t0;
    std::f64::consts::E / ((1.0 + x).powf(alpha) - x.powf(alpha))
}

fn mixture_envelope(weights: &[f64], alphas: &[f64]) -> (f64, f64) {
    let (i_max, &beta) = alphas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty mixture");
    (beta, std::f64::consts::E / weights[i_max])
}

impl BernsteinFunction {
    pub const DEFAULT_T0: f64 = 1.0;

    pub fn stable(alpha: f64) -> Result<Self> {
        check_order("alpha", alpha)?;
        Ok(Self {
            kind: PhiKind::Stable { alpha },
            a: 0.0,
            b: 0.0,
            beta: alpha,
            c_assump: 1.0 / gamma(alpha),
            t0: Self::DEFAULT_T0,
            flags: PhiFlags::CATALOG,
        })
    }

    pub fn tempered(alpha: f64, theta: f64) -> Result<Self> {
        check_order("alpha", alpha)?;
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta = {theta} must be positive")));
        }
        let t0 = Self::DEFAULT_T0;
        Ok(Self {
            kind: PhiKind::TemperedStable { alpha, theta },
            a: 0.0,
            b: 0.0,
            beta: alpha,
            c_assump: tempered_envelope(alpha, theta, t0),
            t0,
            flags: PhiFlags::CATALOG,
        })
    }

    pub fn mixture(weights: Vec<f64>, alphas: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != alphas.len() {
            return Err(Error::InvalidParameter(
                "mixture needs matching, nonempty weight and order lists".into(),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!("mixture weight {w} must be positive")));
        }
        for &a in &alphas {
            check_order("mixture order", a)?;
        }
        let (beta, c) = mixture_envelope(&weights, &alphas);
        Ok(Self {
            kind: PhiKind::StableMixture { weights, alphas },
            a: 0.0,
            b: 0.0,
            beta,
            c_assump: c,
            t0: Self::DEFAULT_T0,
            flags: PhiFlags::CATALOG,
        })
    }

    /// A user-supplied `Φ`. The envelope data and flags are taken on trust
    /// here and checked numerically once a kernel table is built.
    pub fn custom(custom: CustomPhi, beta: f64, c_assump: f64, t0: f64, flags: PhiFlags) -> Result<Self> {
        check_order("beta", beta)?;
        if !(c_assump > 0.0 && t0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "envelope constants must be positive (C = {c_assump}, t0 = {t0})"
            )));
        }
        Ok(Self {
            kind: PhiKind::Custom(custom),
            a: 0.0,
            b: 0.0,
            beta,
            c_assump,
            t0,
            flags,
        })
    }

    /// Re-derive the analytic envelope for a new radius `t0`.
    pub fn with_t0(mut self, t0: f64) -> Result<Self> {
        if !(t0 > 0.0) {
            return Err(Error::InvalidParameter(format!("t0 = {t0} must be positive")));
        }
        self.t0 = t0;
        if let PhiKind::TemperedStable { alpha, theta } = self.kind {
            self.c_assump = tempered_envelope(alpha, theta, t0);
        }
        Ok(self)
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    pub fn is_catalog(&self) -> bool {
        !matches!(self.kind, PhiKind::Custom(_))
    }

    /// Stable index when `Φ(λ) = λ^α`.
    pub fn stable_alpha(&self) -> Option<f64> {
        match self.kind {
            PhiKind::Stable { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Canonical short label, e.g. `stable:0.5`.
    pub fn label(&self) -> String {
        match &self.kind {
            PhiKind::Stable { alpha } => format!("stable:{alpha}"),
            PhiKind::TemperedStable { alpha, theta } => format!("tempered:{alpha},{theta}"),
            PhiKind::StableMixture { weights, alphas } => {
                let parts: Vec<String> = weights
                    .iter()
                    .zip(alphas)
                    .map(|(w, a)| format!("{w}@{a}"))
                    .collect();
                format!("mixture:{}", parts.join("+"))
            }
            PhiKind::Custom(c) => format!("custom:{}", c.name),
        }
    }

    /// `Φ(λ)` for `λ > 0`.
    pub fn eval_phi(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::domain("eval_phi", format!("lambda = {lambda} must be positive")));
        }
        Ok(self.phi_unchecked(lambda))
    }

    pub(crate) fn phi_unchecked(&self, lambda: f64) -> f64 {
        let core = match &self.kind {
            PhiKind::Stable { alpha } => lambda.powf(*alpha),
            PhiKind::TemperedStable { alpha, theta } => tempered_phi(*alpha, *theta, lambda),
            PhiKind::StableMixture { weights, alphas } => weights
                .iter()
                .zip(alphas)
                .map(|(w, a)| w * lambda.powf(*a))
                .sum(),
            PhiKind::Custom(c) => (c.phi)(lambda),
        };
        self.a + self.b * lambda + core
    }

    /// Analytic continuation of `Φ` off the real axis (principal branch),
    /// available for catalog kinds only.
    pub fn eval_phi_complex(&self, z: Complex64) -> Option<Complex64> {
        let core = match &self.kind {
            PhiKind::Stable { alpha } => z.powf(*alpha),
            PhiKind::TemperedStable { alpha, theta } => (z + theta).powf(*alpha) - theta.powf(*alpha),
            PhiKind::StableMixture { weights, alphas } => weights
                .iter()
                .zip(alphas)
                .map(|(w, a)| z.powf(*a) * w)
                .sum(),
            PhiKind::Custom(_) => return None,
        };
        Some(core + self.a + z * self.b)
    }

    /// Conjugate `Φ*(λ) = λ / Φ(λ)`.
    pub fn eval_conjugate(&self, lambda: f64) -> Result<f64> {
        let phi = self.eval_phi(lambda)?;
        if phi <= 0.0 {
            return Err(Error::domain(
                "eval_conjugate",
                format!("Phi({lambda}) = {phi}, conjugate undefined"),
            ));
        }
        Ok(lambda / phi)
    }

    /// Lévy tail `ν̄_Φ(t) = ν_Φ(t, ∞)` for `t > 0`.
    pub fn levy_tail(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::domain("levy_tail", format!("t = {t} must be positive")));
        }
        Ok(match &self.kind {
            PhiKind::Stable { alpha } => t.powf(-alpha) / gamma(1.0 - alpha),
            PhiKind::TemperedStable { alpha, theta } => tempered_tail(*alpha, *theta, t),
            PhiKind::StableMixture { weights, alphas } => weights
                .iter()
                .zip(alphas)
                .map(|(w, a)| w * t.powf(-a) / gamma(1.0 - a))
                .sum(),
            PhiKind::Custom(c) => (c.levy_tail)(t),
        })
    }

    /// Closed-form `∫₀ᵗ ν̄_Φ(s) ds` (Laplace pair `Φ(z)/z²`), where one exists.
    pub fn integrated_levy_tail(&self, t: f64) -> Option<f64> {
        if t <= 0.0 {
            return Some(0.0);
        }
        match &self.kind {
            PhiKind::Stable { alpha } => Some(t.powf(1.0 - alpha) / gamma(2.0 - alpha)),
            PhiKind::TemperedStable { alpha, theta } => Some(tempered_integrated_tail(*alpha, *theta, t)),
            PhiKind::StableMixture { weights, alphas } => Some(
                weights
                    .iter()
                    .zip(alphas)
                    .map(|(w, a)| w * t.powf(1.0 - a) / gamma(2.0 - a))
                    .sum(),
            ),
            PhiKind::Custom(_) => None,
        }
    }

    /// Closed-form `U_Φ(t) = ∫₀ᵗ u_Φ`, available only in the stable case.
    pub fn potential_closed_form(&self, t: f64) -> Option<f64> {
        self.stable_alpha()
            .map(|alpha| if t <= 0.0 { 0.0 } else { t.powf(alpha) / gamma(alpha + 1.0) })
    }

    /// `Φ'(0⁺)`, finite for tempered kinds (mean jump size of the subordinator).
    pub fn phi_prime_at_zero(&self) -> Option<f64> {
        match self.kind {
            PhiKind::TemperedStable { alpha, theta } => Some(alpha * theta.powf(alpha - 1.0)),
            _ => None,
        }
    }

    /// Check the Bernstein sign conditions `(−1)^n Φ^{(n)} ≤ 0` for
    /// `n = 1..=order` by central finite differences on `lambda_grid`.
    pub fn validate(&self, lambda_grid: &[f64], order: usize) -> BernsteinReport {
        validate_bernstein(self, lambda_grid, order)
    }
}

fn tempered_phi(alpha: f64, theta: f64, lambda: f64) -> f64 {
    // (λ+θ)^α − θ^α loses digits for λ ≪ θ; write it as θ^α((1+x)^α − 1).
    let x = lambda / theta;
    theta.powf(alpha) * (alpha * x.ln_1p()).exp_m1()
}

/// `ν̄(t) = [t^{-α} e^{-θt} − θ^α Γ(1−α, θt)] / Γ(1−α)` for the Lévy density
/// `α/Γ(1−α) x^{-1-α} e^{-θx}`.
fn tempered_tail(alpha: f64, theta: f64, t: f64) -> f64 {
    let a = 1.0 - alpha;
    let x = theta * t;
    t.powf(-alpha) * (-x).exp() / gamma(a) - theta.powf(alpha) * gamma_q(a, x)
}

/// Running integral of [`tempered_tail`]:
/// `θ^{α−1} P(1−α, θt) − θ^α [t Q(1−α, θt) + (1−α)/θ · P(2−α, θt)]`.
fn tempered_integrated_tail(alpha: f64, theta: f64, t: f64) -> f64 {
    let a = 1.0 - alpha;
    let x = theta * t;
    theta.powf(alpha - 1.0) * gamma_p(a, x)
        - theta.powf(alpha) * (t * gamma_q(a, x) + a / theta * gamma_p(a + 1.0, x))
}

/// Result of [`BernsteinFunction::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinReport {
    /// `derivatives[i][n-1]` estimates `Φ^{(n)}(λᵢ)`.
    pub derivatives: Vec<Vec<f64>>,
    pub violations: Vec<SignViolation>,
    /// Points where `Φ` itself was negative or not finite.
    pub negative_values: Vec<f64>,
}

impl BernsteinReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.negative_values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignViolation {
    pub lambda: f64,
    pub order: usize,
    pub estimate: f64,
    /// Rounding-noise level below which a wrong sign is not reported.
    pub tolerance: f64,
}

pub const MAX_VALIDATION_ORDER: usize = 6;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn validate_bernstein(phi: &BernsteinFunction, lambda_grid: &[f64], order: usize) -> BernsteinReport {
    let order = order.min(MAX_VALIDATION_ORDER);
    let mut derivatives = Vec::with_capacity(lambda_grid.len());
    let mut violations = Vec::new();
    let mut negative_values = Vec::new();

    for &lambda in lambda_grid {
        match phi.eval_phi(lambda) {
            Ok(v) if v >= 0.0 && v.is_finite() => {}
            _ => negative_values.push(lambda),
        }
        let mut row = Vec::with_capacity(order);
        for n in 1..=order {
            // The stencil spans n·h around λ and must stay inside (0, ∞).
            let h = (1e-3 * lambda).max(1e-6).min(lambda / (n as f64 + 1.0));
            let mut acc = 0.0;
            let mut scale = 0.0f64;
            for k in 0..=n {
                let x = lambda + (n as f64 / 2.0 - k as f64) * h;
                let fx = phi.phi_unchecked(x);
                let c = binomial(n, k);
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * c * fx;
                scale += c * fx.abs();
            }
            let d = acc / h.powi(n as i32);
            let tolerance = 8.0 * f64::EPSILON * scale / h.powi(n as i32);
            row.push(d);
            // Bernstein: odd derivatives ≥ 0, even derivatives ≤ 0.
            let wrong_sign = if n % 2 == 1 { d < 0.0 } else { d > 0.0 };
            if wrong_sign && d.abs() > tolerance {
                violations.push(SignViolation {
                    lambda,
                    order: n,
                    estimate: d,
                    tolerance,
                });
            }
        }
        derivatives.push(row);
    }
    BernsteinReport {
        derivatives,
        violations,
        negative_values,
    }
}

impl FromStr for BernsteinFunction {
    type Err = Error;

    /// Parse `stable:α`, `tempered:α,θ` or `mixture:w₁@α₁+w₂@α₂+…`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected <kind>:<params>, got {s:?}")))?;
        let num = |x: &str| -> Result<f64> {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {x:?} in {s:?}")))
        };
        match kind.trim() {
            "stable" => BernsteinFunction::stable(num(params)?),
            "tempered" => {
                let (a, t) = params
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("tempered needs alpha,theta in {s:?}")))?;
                BernsteinFunction::tempered(num(a)?, num(t)?)
            }
            "mixture" => {
                let mut weights = Vec::new();
                let mut alphas = Vec::new();
                for part in params.split('+') {
                    let (w, a) = part
                        .split_once('@')
                        .ok_or_else(|| Error::Parse(format!("mixture term {part:?} needs weight@alpha")))?;
                    weights.push(num(w)?);
                    alphas.push(num(a)?);
                }
                BernsteinFunction::mixture(weights, alphas)
            }
            other => Err(Error::Parse(format!("unknown Bernstein kind {other:?}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogConfig {
    kind: String,
    alpha: Option<f64>,
    theta: Option<f64>,
    weights: Option<Vec<f64>>,
    alphas: Option<Vec<f64>>,
    beta: Option<f64>,
    c_assump: Option<f64>,
    t0: Option<f64>,
}

impl BernsteinFunction {
    /// Load a catalog entry from key-value text:
    ///
    /// ```text
    /// kind = "tempered"
    /// alpha = 0.5
    /// theta = 1.0
    /// t0 = 2.0          # optional
    /// c_assump = 3.0    # optional override, must not undercut the analytic value
    /// beta = 0.5        # optional, must match the analytic exponent
    /// ```
    pub fn from_config_str(text: &str) -> Result<Self> {
        let cfg: CatalogConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Parse(format!("catalog entry of kind {:?} needs {name}", cfg.kind)))
        };
        let mut phi = match cfg.kind.as_str() {
            "stable" => BernsteinFunction::stable(need(cfg.alpha, "alpha")?)?,
            "tempered" => BernsteinFunction::tempered(need(cfg.alpha, "alpha")?, need(cfg.theta, "theta")?)?,
            "mixture" => BernsteinFunction::mixture(
                cfg.weights.clone().ok_or_else(|| Error::Parse("mixture needs weights".into()))?,
                cfg.alphas.clone().ok_or_else(|| Error::Parse("mixture needs alphas".into()))?,
            )?,
            other => return Err(Error::Parse(format!("unknown Bernstein kind {other:?}"))),
        };
        if let Some(t0) = cfg.t0 {
            phi = phi.with_t0(t0)?;
        }
        if let Some(beta) = cfg.beta {
            if (beta - phi.beta).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "beta = {beta} contradicts the analytic exponent {} for {}",
                    phi.beta,
                    phi.label()
                )));
            }
        }
        if let Some(c) = cfg.c_assump {
            if c < phi.c_assump * (1.0 - 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "c_assump = {c} is below the analytic envelope {} for {}",
                    phi.c_assump,
                    phi.label()
                )));
            }
            phi.c_assump = c;
        }
        Ok(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lambda_squared() -> BernsteinFunction {
        BernsteinFunction::custom(
            CustomPhi {
                name: "square".into(),
                phi: Arc::new(|l| l * l),
                levy_tail: Arc::new(|_| 0.0),
                levy_density: None,
            },
            0.5,
            1.0,
            1.0,
            PhiFlags {
                is_special: false,
                levy_mass_infinite: false,
                levy_abs_continuous: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn eval_phi_examples() {
        let st = BernsteinFunction::stable(0.5).unwrap();
        assert_relative_eq!(st.eval_phi(4.0).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(st.eval_phi(1e-12).unwrap(), 1e-6, max_relative = 1e-12);
        let te = BernsteinFunction::tempered(0.5, 1.0).unwrap();
        assert_relative_eq!(te.eval_phi(3.0).unwrap(), 1.0, max_relative = 1e-14);
        let mix = BernsteinFunction::mixture(vec![0.3, 0.7], vec![0.4, 0.8]).unwrap();
        assert_relative_eq!(
            mix.eval_phi(2.0).unwrap(),
            0.3 * 2f64.powf(0.4) + 0.7 * 2f64.powf(0.8),
            max_relative = 1e-15
        );
    }

    #[test]
    fn eval_phi_rejects_nonpositive() {
        let st = BernsteinFunction::stable(0.5).unwrap();
        assert!(matches!(st.eval_phi(0.0), Err(Error::Domain { .. })));
        assert!(matches!(st.eval_phi(-1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn conjugate_examples() {
        let st = BernsteinFunction::stable(0.5).unwrap();
        assert_relative_eq!(st.eval_conjugate(4.0).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(st.eval_conjugate(1.0).unwrap(), 1.0, max_relative = 1e-15);
        let te = BernsteinFunction::tempered(0.5, 1.0).unwrap();
        assert_relative_eq!(te.eval_conjugate(3.0).unwrap(), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn conjugate_of_zero_phi_is_domain_error() {
        let zero = BernsteinFunction::custom(
            CustomPhi {
                name: "zero".into(),
                phi: Arc::new(|_| 0.0),
                levy_tail: Arc::new(|_| 0.0),
                levy_density: None,
            },
            0.5,
            1.0,
            1.0,
            PhiFlags::CATALOG,
        )
        .unwrap();
        assert!(matches!(zero.eval_conjugate(1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn stable_levy_tail_closed_form() {
        let st = BernsteinFunction::stable(0.5).unwrap();
        // t^{-1/2} / Γ(1/2) = 1/√(π t)
        assert_relative_eq!(st.levy_tail(1.0).unwrap(), 0.5641895835477563, max_relative = 1e-14);
        assert_relative_eq!(st.levy_tail(4.0).unwrap(), 0.28209479177387814, max_relative = 1e-14);
        assert!(st.levy_tail(0.0).is_err());
    }

    #[test]
    fn levy_tails_decrease_to_zero() {
        for phi in catalog() {
            let ts: Vec<f64> = (0..60).map(|i| 1e-3 * 1.3f64.powi(i)).collect();
            let vals: Vec<f64> = ts.iter().map(|&t| phi.levy_tail(t).unwrap()).collect();
            for w in vals.windows(2) {
                assert!(w[1] <= w[0], "{}: tail not monotone", phi.label());
            }
            assert!(*vals.last().unwrap() < 1e-2 * vals[0]);
        }
        let te = BernsteinFunction::tempered(0.5, 1.0).unwrap();
        assert!(te.levy_tail(60.0).unwrap() < 1e-25);
    }

    #[test]
    fn tempered_tail_matches_quadrature_of_density() {
        // ν̄(t) = ∫_t^∞ α/Γ(1−α) x^{−1−α} e^{−θx} dx, midpoint rule in log-space.
        let (alpha, theta) = (0.6, 1.7);
        let te = BernsteinFunction::tempered(alpha, theta).unwrap();
        for t in [0.05f64, 0.4, 2.0] {
            let (a, b, n) = (t.ln(), (t + 60.0).ln(), 200_000);
            let h = (b - a) / n as f64;
            let quad: f64 = (0..n)
                .map(|i| {
                    let x = (a + (i as f64 + 0.5) * h).exp();
                    alpha / gamma(1.0 - alpha) * x.powf(-alpha) * (-theta * x).exp() * h
                })
                .sum();
            assert_relative_eq!(te.levy_tail(t).unwrap(), quad, max_relative = 1e-8);
        }
    }

    #[test]
    fn integrated_tail_matches_quadrature_of_tail() {
        for phi in catalog() {
            let t = 0.7;
            // ∫₀ᵗ ν̄ with substitution s = t·w^{1/(1-β)} to tame the singularity.
            let p = 1.0 / (1.0 - phi.beta);
            let n = 200_000;
            let quad: f64 = (0..n)
                .map(|i| {
                    let w = (i as f64 + 0.5) / n as f64;
                    let s = t * w.powf(p);
                    phi.levy_tail(s).unwrap() * t * p * w.powf(p - 1.0) / n as f64
                })
                .sum();
            assert_relative_eq!(phi.integrated_levy_tail(t).unwrap(), quad, max_relative = 1e-6);
        }
    }

    #[test]
    fn validate_examples() {
        let st = BernsteinFunction::stable(0.5).unwrap();
        assert!(st.validate(&[0.5, 1.0, 2.0, 4.0], 3).is_clean());

        let rep = lambda_squared().validate(&[1.0, 2.0], 2);
        assert!(rep.violations.iter().all(|v| v.order == 2));
        assert_eq!(rep.violations.len(), 2);

        let te = BernsteinFunction::tempered(0.9, 2.0).unwrap();
        let rep = te.validate(&[1.0, 10.0], 4);
        assert!(rep.is_clean(), "{rep:?}");
    }

    #[test]
    fn validate_derivatives_match_analytic() {
        // Φ(λ) = (λ+θ)^α − θ^α: Φ^{(n)} = α(α−1)…(α−n+1)(λ+θ)^{α−n}.
        let (alpha, theta) = (0.9, 2.0);
        let te = BernsteinFunction::tempered(alpha, theta).unwrap();
        let rep = te.validate(&[1.0, 10.0], 4);
        for (row, lambda) in rep.derivatives.iter().zip([1.0, 10.0]) {
            let mut falling = 1.0;
            for (n, &d) in row.iter().enumerate() {
                falling *= alpha - n as f64;
                let exact = falling * (lambda + theta).powf(alpha - n as f64 - 1.0);
                // Order 4 at λ = 1 is within a factor of a few of the rounding floor.
                let tol = if n < 3 { 2e-4 } else { 0.1 };
                assert_relative_eq!(d, exact, max_relative = tol);
            }
        }
    }

    #[test]
    fn envelope_metadata() {
        let st = BernsteinFunction::stable(0.3).unwrap();
        assert_eq!(st.beta, 0.3);
        assert_relative_eq!(st.c_assump, 1.0 / gamma(0.3));
        let te = BernsteinFunction::tempered(0.5, 1.0).unwrap();
        assert_eq!(te.beta, 0.5);
        assert_eq!((te.a, te.b), (0.0, 0.0));
        assert!(te.flags.levy_mass_infinite);
        let wider = te.clone().with_t0(10.0).unwrap();
        assert!(wider.c_assump > te.c_assump);
        let mix = BernsteinFunction::mixture(vec![0.3, 0.7], vec![0.4, 0.8]).unwrap();
        assert_eq!(mix.beta, 0.8);
    }

    #[test]
    fn parses_cli_specs() {
        let st: BernsteinFunction = "stable:0.5".parse().unwrap();
        assert_eq!(st.stable_alpha(), Some(0.5));
        let te: BernsteinFunction = "tempered:0.5,1.0".parse().unwrap();
        assert_eq!(te.label(), "tempered:0.5,1");
        let mix: BernsteinFunction = "mixture:0.3@0.4+0.7@0.8".parse().unwrap();
        assert_eq!(mix.label(), "mixture:0.3@0.4+0.7@0.8");
        assert!("gamma:1".parse::<BernsteinFunction>().is_err());
        assert!("stable:1.5".parse::<BernsteinFunction>().is_err());
        assert!("tempered:0.5".parse::<BernsteinFunction>().is_err());
    }

    #[test]
    fn loads_config_text() {
        let phi = BernsteinFunction::from_config_str(
            "kind = \"tempered\"\nalpha = 0.5\ntheta = 1.0\nt0 = 2.0\n",
        )
        .unwrap();
        assert_eq!(phi.t0, 2.0);
        assert_relative_eq!(phi.c_assump, tempered_envelope(0.5, 1.0, 2.0));
        let err = BernsteinFunction::from_config_str("kind = \"stable\"\nalpha = 0.5\nbeta = 0.4\n");
        assert!(err.is_err());
        let err = BernsteinFunction::from_config_str("kind = \"stable\"\nalpha = 0.5\nc_assump = 0.1\n");
        assert!(err.is_err());
        let mix = BernsteinFunction::from_config_str(
            "kind = \"mixture\"\nweights = [0.3, 0.7]\nalphas = [0.4, 0.8]\n",
        )
        .unwrap();
        assert_eq!(mix.beta, 0.8);
    }

    #[test]
    fn complex_continuation_agrees_on_real_axis() {
        for phi in catalog() {
            for x in [0.1, 1.0, 7.0] {
                let z = phi.eval_phi_complex(Complex64::new(x, 0.0)).unwrap();
                assert_relative_eq!(z.re, phi.eval_phi(x).unwrap(), max_relative = 1e-12);
                assert!(z.im.abs() < 1e-14);
            }
        }
    }

    fn catalog() -> Vec<BernsteinFunction> {
        vec![
            BernsteinFunction::stable(0.5).unwrap(),
            BernsteinFunction::tempered(0.5, 1.0).unwrap(),
            BernsteinFunction::mixture(vec![0.3, 0.7], vec![0.4, 0.8]).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn phi_is_monotone_and_concave(alpha in 0.05f64..0.95, theta in 0.01f64..10.0, l1 in 1e-3f64..50.0, gap in 1e-3f64..50.0) {
            let te = BernsteinFunction::tempered(alpha, theta).unwrap();
            let l2 = l1 + gap;
            prop_assert!(te.eval_phi(l1).unwrap() <= te.eval_phi(l2).unwrap());
            let mid = 0.5 * (l1 + l2);
            let second = te.eval_phi(l1).unwrap() + te.eval_phi(l2).unwrap() - 2.0 * te.eval_phi(mid).unwrap();
            prop_assert!(second <= 1e-12 * te.eval_phi(l2).unwrap());
        }

        #[test]
        fn conjugate_identity(alpha in 0.05f64..0.95, lambda in 1e-6f64..1e6) {
            for phi in [BernsteinFunction::stable(alpha).unwrap(), BernsteinFunction::tempered(alpha, 0.7).unwrap()] {
                let prod = phi.eval_phi(lambda).unwrap() * phi.eval_conjugate(lambda).unwrap();
                prop_assert!((prod - lambda).abs() <= 1e-12 * lambda);
            }
        }

        #[test]
        fn tempered_tends_to_stable(alpha in 0.1f64..0.9, lambda in 0.1f64..10.0) {
            // Φ_θ(λ) − λ^α = O(θ^α) is not first order, but the difference
            // shrinks monotonically as θ → 0.
            let st = BernsteinFunction::stable(alpha).unwrap().eval_phi(lambda).unwrap();
            let d = |theta: f64| (BernsteinFunction::tempered(alpha, theta).unwrap().eval_phi(lambda).unwrap() - st).abs();
            prop_assert!(d(1e-4) < d(1e-2));
            prop_assert!(d(1e-8) <= 2.0 * 1e-8f64.powf(alpha).max(1e-8 * alpha * lambda.powf(alpha - 1.0)) + 1e-14);
        }
    }
}
