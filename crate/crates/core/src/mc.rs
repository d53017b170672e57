//! Monte Carlo for the subordinator `σ_Φ` and its inverse `L_Φ`.
//!
//! Paths of `σ_Φ` are built from i.i.d. increments over an operational time
//! step `dt`, and `L_Φ(t)` is read off as the first grid time `m·dt` with
//! `σ_Φ(m·dt) > t`. This overestimates `L_Φ(t)` by less than `dt`.
//!
//! Every path draws from its own ChaCha stream selected by the path index,
//! and per-path values are reduced by pairwise summation in index order, so
//! estimates do not depend on the number of worker threads.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bernstein::{BernsteinFunction, PhiKind};
use crate::error::{Error, Result};
use crate::special::{ln_gamma, pairwise_sum};

/// Paths stop with an error after this many increments.
pub const MAX_PATH_STEPS: usize = 50_000_000;
/// Smallest tolerated acceptance rate of the tempered rejection step.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    StablePositive { alpha: f64 },
    TemperedStable { alpha: f64, theta: f64 },
}

impl Sampler {
    /// Sampler for a catalog Bernstein function. Mixtures and custom kinds
    /// have no sampler.
    pub fn from_phi(phi: &BernsteinFunction) -> Result<Self> {
        match phi.kind() {
            PhiKind::Stable { alpha } => Ok(Sampler::StablePositive { alpha: *alpha }),
            PhiKind::TemperedStable { alpha, theta } => Ok(Sampler::TemperedStable {
                alpha: *alpha,
                theta: *theta,
            }),
            _ => Err(Error::MonteCarlo(format!("no path sampler for {}", phi.label()))),
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            Sampler::StablePositive { alpha } | Sampler::TemperedStable { alpha, .. } => alpha,
        }
    }

    /// Laplace exponent of the sampled law.
    pub fn phi(&self, lambda: f64) -> f64 {
        match *self {
            Sampler::StablePositive { alpha } => lambda.powf(alpha),
            Sampler::TemperedStable { alpha, theta } => (lambda + theta).powf(alpha) - theta.powf(alpha),
        }
    }

    fn validate(&self) -> Result<()> {
        let (alpha, theta) = match *self {
            Sampler::StablePositive { alpha } => (alpha, 0.0),
            Sampler::TemperedStable { alpha, theta } => (alpha, theta),
        };
        if !(alpha > 0.0 && alpha < 1.0) || !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!("sampler parameters out of range: {self:?}")));
        }
        Ok(())
    }

    /// Expected acceptance rate `e^{−dt θ^α}` of the tilting step.
    pub fn acceptance_rate(&self, dt: f64) -> f64 {
        match *self {
            Sampler::StablePositive { .. } => 1.0,
            Sampler::TemperedStable { alpha, theta } => (-dt * theta.powf(alpha)).exp(),
        }
    }

    /// One increment over operational time `dt`.
    pub fn sample<R: Rng>(&self, dt: f64, rng: &mut R) -> Result<f64> {
        match *self {
            Sampler::StablePositive { alpha } => Ok(sample_stable_increment(alpha, dt, rng)),
            Sampler::TemperedStable { alpha, theta } => sample_tempered_increment(alpha, theta, dt, rng),
        }
    }
}

/// Standard positive `α`-stable variable with `E[e^{−λS}] = e^{−λ^α}`, by
/// Kanter's representation from one uniform angle and one exponential.
fn standard_positive_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    loop {
        let u = PI * rng.random::<f64>();
        let e = -(1.0 - rng.random::<f64>()).ln();
        if u == 0.0 || e == 0.0 {
            continue;
        }
        let s = (alpha * u).sin() / u.sin().powf(1.0 / alpha) * ((1.0 - alpha) * u).sin().powf((1.0 - alpha) / alpha) / e.powf((1.0 - alpha) / alpha);
        if s > 0.0 && s.is_finite() {
            return s;
        }
    }
}

/// Increment of the `α`-stable subordinator over operational time `dt`.
pub fn sample_stable_increment<R: Rng>(alpha: f64, dt: f64, rng: &mut R) -> f64 {
    dt.powf(1.0 / alpha) * standard_positive_stable(alpha, rng)
}

/// Increment of the tempered stable subordinator over `dt`: a stable
/// increment `X` accepted with probability `e^{−θX}`.
pub fn sample_tempered_increment<R: Rng>(alpha: f64, theta: f64, dt: f64, rng: &mut R) -> Result<f64> {
    if theta == 0.0 {
        return Ok(sample_stable_increment(alpha, dt, rng));
    }
    let rate = (-dt * theta.powf(alpha)).exp();
    if rate < MIN_ACCEPTANCE {
        return Err(Error::MonteCarlo(format!(
            "tilting acceptance rate {rate:e} at dt = {dt}; use a smaller dt"
        )));
    }
    loop {
        let x = sample_stable_increment(alpha, dt, rng);
        if rng.random::<f64>() < (-theta * x).exp() {
            return Ok(x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    /// Operational time step of `σ_Φ`.
    pub dt: f64,
    /// Largest calendar time queried.
    pub t_max: f64,
    pub seed: u64,
    pub sampler: Sampler,
}

impl McConfig {
    pub fn new(sampler: Sampler, n_paths: usize, dt: f64, t_max: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_paths,
            dt,
            t_max,
            seed,
            sampler,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.n_paths < 100 {
            return Err(Error::InvalidParameter(format!("need at least 100 paths, got {}", self.n_paths)));
        }
        if !(self.dt > 0.0) || !(self.t_max > 0.0) || self.dt > self.t_max / 100.0 {
            return Err(Error::InvalidParameter(format!(
                "need 0 < dt ≤ t_max/100 (dt = {}, t_max = {})",
                self.dt, self.t_max
            )));
        }
        if self.sampler.acceptance_rate(self.dt) < MIN_ACCEPTANCE {
            return Err(Error::MonteCarlo(format!(
                "tilting acceptance rate {:e} at dt = {}; use a smaller dt",
                self.sampler.acceptance_rate(self.dt),
                self.dt
            )));
        }
        Ok(())
    }

    /// Generator of path `index`.
    pub fn path_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    /// Sample standard deviation over `√n_effective`.
    pub std_error: f64,
    pub n_effective: usize,
    pub warning: Option<String>,
}

impl McEstimate {
    fn exact(value: f64, n: usize) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_effective: n,
            warning: None,
        }
    }

    /// Mean and standard error of per-path samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::MonteCarlo("need at least two samples".into()));
        }
        let mean = pairwise_sum(samples) / n as f64;
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::MonteCarlo("non-finite accumulation; λ·t is too large for this sampler".into()));
        }
        Ok(Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            n_effective: n,
            warning: None,
        })
    }

    /// Whether `target` lies within `k` standard errors plus `allowance`.
    pub fn agrees_with(&self, target: f64, k: f64, allowance: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + allowance
    }
}

/// `L(t)` on the operational grid: the first `m·dt` with
/// `Σ_{j<m} X_j > t`.
pub fn inverse_passage(increments: &[f64], dt: f64, t: f64) -> Result<f64> {
    let mut sigma = 0.0;
    for (j, x) in increments.iter().enumerate() {
        sigma += x;
        if sigma > t {
            return Ok((j + 1) as f64 * dt);
        }
    }
    Err(Error::MonteCarlo(format!(
        "path of {} increments ends at σ = {sigma} ≤ t = {t}",
        increments.len()
    )))
}

/// First-passage times of path `index` for nondecreasing query times.
pub fn path_passages(cfg: &McConfig, index: usize, times: &[f64]) -> Result<Vec<f64>> {
    let mut rng = cfg.path_rng(index);
    let mut out = Vec::with_capacity(times.len());
    let mut sigma = 0.0;
    let mut steps = 0usize;
    for &t in times {
        while sigma <= t {
            if steps == MAX_PATH_STEPS {
                return Err(Error::MonteCarlo(format!(
                    "path {index} did not pass t = {t} within {MAX_PATH_STEPS} steps"
                )));
            }
            sigma += cfg.sampler.sample(cfg.dt, &mut rng)?;
            steps += 1;
        }
        out.push(steps as f64 * cfg.dt);
    }
    Ok(out)
}

fn check_time(cfg: &McConfig, t: f64) -> Result<()> {
    if !(0.0..=cfg.t_max).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, t_max = {}]", cfg.t_max)));
    }
    Ok(())
}

/// `L(t)` for every path, in path order.
pub fn passage_samples(cfg: &McConfig, t: f64) -> Result<Vec<f64>> {
    check_time(cfg, t)?;
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| path_passages(cfg, p, &[t]).map(|v| v[0]))
        .collect()
}

/// Estimate of `U_Φ(t) = E[L(t)]`.
pub fn estimate_potential(cfg: &McConfig, t: f64) -> Result<McEstimate> {
    McEstimate::from_samples(&passage_samples(cfg, t)?)
}

/// `|λ| dt e^{|λ| dt} value`: bound on the first-passage bias of
/// `E[e^{λL}]`.
pub fn phi_exp_bias_allowance(lambda: f64, dt: f64, value: f64) -> f64 {
    let x = lambda.abs() * dt;
    x * x.exp() * value.abs()
}

/// Estimate of `e_Φ(t; λ) = E[e^{λ L(t)}]`. For `λ > 0` a warning is attached
/// when the top 1% of samples carries more than half of the mean.
pub fn estimate_phi_exp_mc(cfg: &McConfig, lambda: f64, t: f64) -> Result<McEstimate> {
    if lambda == 0.0 {
        check_time(cfg, t)?;
        return Ok(McEstimate::exact(1.0, cfg.n_paths));
    }
    phi_exp_from_passages(&passage_samples(cfg, t)?, lambda)
}

/// [`estimate_phi_exp_mc`] on precomputed passage times.
pub fn phi_exp_from_passages(passages: &[f64], lambda: f64) -> Result<McEstimate> {
    if lambda == 0.0 {
        return Ok(McEstimate::exact(1.0, passages.len()));
    }
    let samples: Vec<f64> = passages.iter().map(|l| (lambda * l).exp()).collect();
    let mut est = McEstimate::from_samples(&samples)?;
    if lambda > 0.0 {
        let mut sorted = samples;
        sorted.sort_by(f64::total_cmp);
        let top = (sorted.len() / 100).max(1);
        let share = pairwise_sum(&sorted[sorted.len() - top..]) / pairwise_sum(&sorted);
        if share > 0.5 {
            est.warning = Some(format!(
                "heavy tail: top 1% of samples carries {:.0}% of the mean; use more paths",
                100.0 * share
            ));
        }
    }
    Ok(est)
}

/// `E[L(t)^k] / k!` for `k = 0..=k_max`.
pub fn estimate_moments(cfg: &McConfig, t: f64, k_max: usize) -> Result<Vec<McEstimate>> {
    if k_max > 6 {
        return Err(Error::InvalidParameter(format!("moments above order 6 are not estimated (got {k_max})")));
    }
    moments_from_passages(&passage_samples(cfg, t)?, k_max)
}

/// [`estimate_moments`] on precomputed passage times.
pub fn moments_from_passages(passages: &[f64], k_max: usize) -> Result<Vec<McEstimate>> {
    let mut out = vec![McEstimate::exact(1.0, passages.len())];
    for k in 1..=k_max {
        let fact = ln_gamma(k as f64 + 1.0).exp();
        let s: Vec<f64> = passages.iter().map(|x| x.powi(k as i32) / fact).collect();
        out.push(McEstimate::from_samples(&s)?);
    }
    Ok(out)
}

/// Sample mean of `((L + dt)^k − L^k)/k!`, which bounds the first-passage
/// bias of the `k`-th moment estimate.
pub fn moment_bias_allowance(passages: &[f64], dt: f64, k: usize) -> f64 {
    let fact = ln_gamma(k as f64 + 1.0).exp();
    let d: Vec<f64> = passages.iter().map(|x| ((x + dt).powi(k as i32) - x.powi(k as i32)) / fact).collect();
    pairwise_sum(&d) / passages.len() as f64
}

/// Estimate of `E[e^{−λ σ(s)}]` from one increment of size `s` per path;
/// the target is `e^{−s Φ(λ)}`.
pub fn estimate_subordinator_laplace(cfg: &McConfig, lambda: f64, s: f64) -> Result<McEstimate> {
    let samples: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = cfg.path_rng(p);
            cfg.sampler.sample(s, &mut rng).map(|x| (-lambda * x).exp())
        })
        .collect::<Result<_>>()?;
    McEstimate::from_samples(&samples)
}

/// Empirical `P(L(t) > s)` for each `s`, with binomial standard errors.
pub fn tail_probabilities(cfg: &McConfig, t: f64, levels: &[f64]) -> Result<Vec<McEstimate>> {
    Ok(tail_from_passages(&passage_samples(cfg, t)?, levels))
}

/// [`tail_probabilities`] on precomputed passage times.
pub fn tail_from_passages(passages: &[f64], levels: &[f64]) -> Vec<McEstimate> {
    let n = passages.len() as f64;
    levels
        .iter()
        .map(|&s| {
            let p = passages.iter().filter(|&&x| x > s).count() as f64 / n;
            McEstimate {
                value: p,
                std_error: (p * (1.0 - p) / n).sqrt(),
                n_effective: passages.len(),
                warning: None,
            }
        })
        .collect()
}

/// `e^{x t − s Φ(x)}`, the exponential bound on `P(L(t) > s)`.
pub fn tail_bound(sampler: &Sampler, x: f64, t: f64, s: f64) -> f64 {
    (x * t - s * sampler.phi(x)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{gamma, mittag_leffler};

    fn stable(n: usize, dt: f64, seed: u64) -> McConfig {
        McConfig::new(Sampler::StablePositive { alpha: 0.5 }, n, dt, 1.0, seed).unwrap()
    }

    #[test]
    fn stable_laplace_transform() {
        let cfg = McConfig::new(Sampler::StablePositive { alpha: 0.5 }, 100_000, 0.01, 1.0, 3).unwrap();
        let e = estimate_subordinator_laplace(&cfg, 1.0, 1.0).unwrap();
        assert!(e.agrees_with((-1.0f64).exp(), 3.0, 0.0), "{e:?}");
        let e = estimate_subordinator_laplace(&cfg, 1.0, 0.01).unwrap();
        assert!(e.agrees_with((-0.01f64).exp(), 3.0, 0.0), "{e:?}");
        let mut rng = cfg.path_rng(0);
        assert!((0..10_000).all(|_| sample_stable_increment(0.5, 0.01, &mut rng) > 0.0));
    }

    #[test]
    fn tempered_laplace_transform() {
        let sampler = Sampler::TemperedStable { alpha: 0.5, theta: 1.0 };
        let cfg = McConfig::new(sampler, 50_000, 0.01, 1.0, 5).unwrap();
        for lambda in [0.5, 1.0, 2.0] {
            let e = estimate_subordinator_laplace(&cfg, lambda, 0.01).unwrap();
            assert!(e.agrees_with((-0.01 * sampler.phi(lambda)).exp(), 3.0, 0.0), "{lambda}: {e:?}");
        }
        assert!(((-0.01 * sampler.phi(1.0)).exp() - 0.9958664311876518).abs() < 1e-12);
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_tempered_increment(0.5, 0.0, 0.1, &mut a).unwrap(), sample_stable_increment(0.5, 0.1, &mut b));
        }
        assert!(sample_tempered_increment(0.5, 100.0, 1.0, &mut a).is_err());
    }

    #[test]
    fn inverse_passage_examples() {
        assert_eq!(inverse_passage(&[0.1, 0.2, 0.3], 0.5, 0.0).unwrap(), 0.5);
        assert_eq!(inverse_passage(&[0.1, 0.2, 0.3], 0.5, 0.25).unwrap(), 1.0);
        assert!(inverse_passage(&[0.1, 0.2], 0.5, 1.0).is_err());
        let cfg = stable(200, 1e-3, 1);
        let p = path_passages(&cfg, 7, &[0.25, 0.5, 1.0]).unwrap();
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn potential_and_moments() {
        let cfg = stable(20_000, 1e-3, 9);
        let u = estimate_potential(&cfg, 1.0).unwrap();
        assert!(u.agrees_with(1.0 / gamma(1.5), 3.0, cfg.dt), "{u:?}");
        let m = estimate_moments(&cfg, 1.0, 2).unwrap();
        assert_eq!(m[0].value, 1.0);
        let l = passage_samples(&cfg, 1.0).unwrap();
        assert!(m[2].agrees_with(1.0, 3.0, moment_bias_allowance(&l, cfg.dt, 2)), "{:?}", m[2]);
        let tails = tail_from_passages(&l, &[2.0, 3.0]);
        assert!(tails[1].value <= tail_bound(&cfg.sampler, 4.0, 1.0, 3.0));
        assert!(tails[0].value >= tails[1].value);
        assert!(estimate_moments(&cfg, 1.0, 7).is_err());
    }

    #[test]
    fn phi_exp_estimates() {
        let cfg = stable(20_000, 1e-3, 11);
        assert_eq!(estimate_phi_exp_mc(&cfg, 0.0, 1.0).unwrap(), McEstimate::exact(1.0, 20_000));
        let e = estimate_phi_exp_mc(&cfg, -1.0, 1.0).unwrap();
        let target = mittag_leffler(0.5, -1.0).unwrap();
        assert!(e.agrees_with(target, 3.0, phi_exp_bias_allowance(-1.0, cfg.dt, target)), "{e:?}");
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let cfg = stable(500, 1e-3, 42);
        let a = estimate_potential(&cfg, 1.0).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_potential(&cfg, 1.0)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn config_validation() {
        let s = Sampler::StablePositive { alpha: 0.5 };
        assert!(McConfig::new(s, 99, 1e-3, 1.0, 0).is_err());
        assert!(McConfig::new(s, 100, 0.1, 1.0, 0).is_err());
        assert!(McConfig::new(Sampler::StablePositive { alpha: 1.0 }, 100, 1e-3, 1.0, 0).is_err());
        let mix = BernsteinFunction::mixture(vec![0.5, 0.5], vec![0.3, 0.7]).unwrap();
        assert!(Sampler::from_phi(&mix).is_err());
    }
}
