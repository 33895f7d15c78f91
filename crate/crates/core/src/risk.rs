//! Few-shot risk of a weighted min-norm interpolator.
//!
//! Three routes are available:
//!
//! * Monte Carlo: draw a task and `n2` samples, fit, and average
//!   `(beta_hat - beta)^T Sigma_F (beta_hat - beta) + sigma^2`.
//! * Closed form in the shrinkage profile `theta`: with `s = ||theta||^2` and
//!   `phi = 1 - theta`,
//!   - [`RiskVariant::Main`]: `(n2 sum phi_i^2 St_i + (s + 1) sigma_R^2) / (n2 - s)`
//!   - [`RiskVariant::Appendix`]: `(n2 sum phi_i^2 St_i + R sigma_R^2 s) / (n2 - s)`
//!
//!   where `St_i` are the top-`R` eigenvalues of the canonical task covariance
//!   and `sigma_R` the equivalent noise of the rank-`R` reduction.
//! * The finite-dimensional distributional characterization ([`dc_predict`]),
//!   which predicts the interpolator coordinate-wise from `(xi, gamma)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{gen_few_shot_stream, ProblemSpec};
use crate::error::{validation, Error, Result};
use crate::interpolator::{fit_weighted_min_norm, EigenWeighting};
use crate::linalg::{sqrt_spd, symmetrize, CovarianceModel};
use crate::rng::RngStream;

/// Upper limit for any single `theta_i`.
pub const THETA_MAX: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    MonteCarlo,
    AnalyticMain,
    AnalyticAppendix,
    Dc,
}

impl RiskMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RiskMethod::MonteCarlo => "monte_carlo",
            RiskMethod::AnalyticMain => "analytic_main",
            RiskMethod::AnalyticAppendix => "analytic_appendix",
            RiskMethod::Dc => "dc",
        }
    }
}

/// Which closed-form noise term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskVariant {
    Main,
    Appendix,
}

impl RiskVariant {
    /// Noise term of the numerator is `sigma_R^2 * (slope * s + intercept)`.
    pub fn noise_coefficients(self, r: usize) -> (f64, f64) {
        match self {
            RiskVariant::Main => (1.0, 1.0),
            RiskVariant::Appendix => (r as f64, 0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskVariant::Main => "main",
            RiskVariant::Appendix => "appendix",
        }
    }

    pub fn method(self) -> RiskMethod {
        match self {
            RiskVariant::Main => RiskMethod::AnalyticMain,
            RiskVariant::Appendix => RiskMethod::AnalyticAppendix,
        }
    }
}

impl std::str::FromStr for RiskVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(RiskVariant::Main),
            "appendix" => Ok(RiskVariant::Appendix),
            other => validation(format!("unknown risk variant '{other}' (expected main|appendix)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub method: RiskMethod,
    /// Zero for closed-form methods.
    pub stderr: f64,
}

/// Shrinkage profile `theta in [0, 1)^R` with `sum theta = n2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaProfile {
    theta: Vec<f64>,
    xi: f64,
    n2: usize,
}

impl ThetaProfile {
    /// Validates a profile directly; `xi` is pinned to 1.
    pub fn new(theta: Vec<f64>, n2: usize) -> Result<Self> {
        if n2 == 0 {
            return validation("n2 must be >= 1");
        }
        if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t <= THETA_MAX)) {
            return validation("every theta_i must lie in [0, 1)");
        }
        let sum: f64 = theta.iter().sum();
        if (sum - n2 as f64).abs() > 1e-8 * (n2 as f64).max(1.0) {
            return validation(format!("sum(theta) = {sum} but n2 = {n2}"));
        }
        Ok(Self { theta, xi: 1.0, n2 })
    }

    /// `theta_i = xi l_i / (1 + xi l_i)` with `xi` from [`solve_xi`].
    pub fn from_lambda_sq(lambda_sq: &[f64], n2: usize) -> Result<Self> {
        let xi = solve_xi(lambda_sq, n2)?;
        let theta = lambda_sq.iter().map(|l| theta_of(xi, *l)).collect();
        Ok(Self { theta, xi, n2 })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn r(&self) -> usize {
        self.theta.len()
    }

    /// `R / n2`.
    pub fn kappa(&self) -> f64 {
        self.r() as f64 / self.n2 as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum()
    }
}

fn theta_of(xi: f64, l: f64) -> f64 {
    let x = xi * l;
    x / (1.0 + x)
}

/// Unique `xi > 0` with `sum_i (1 + (xi l_i)^{-1})^{-1} = n2`.
pub fn solve_xi(lambda_sq: &[f64], n2: usize) -> Result<f64> {
    let r = lambda_sq.len();
    if n2 == 0 {
        return validation("n2 must be >= 1");
    }
    if n2 >= r {
        return validation(format!(
            "no fixed point: need n2 < R for theta_i < 1 (n2 = {n2}, R = {r})"
        ));
    }
    if lambda_sq.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return validation("all squared weights must be positive and finite");
    }
    let target = n2 as f64;
    let total = |xi: f64| lambda_sq.iter().map(|l| theta_of(xi, *l)).sum::<f64>();

    let mut lo = 1.0;
    let mut hi = 1.0;
    while total(lo) > target {
        lo *= 0.5;
    }
    while total(hi) < target {
        hi *= 2.0;
    }
    // bisection in log-space; the map is strictly increasing
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xi = if (total(lo) - target).abs() <= (total(hi) - target).abs() { lo } else { hi };
    let resid = (total(xi) - target).abs();
    if resid > 1e-10 * target {
        return Err(Error::NonConvergence {
            iterations: 400,
            residual: resid,
            best: vec![xi],
        });
    }
    Ok(xi)
}

/// `Sigma_F^{1/2} Sigma_T Sigma_F^{1/2}`, symmetrized.
pub fn canonical_cov(sigma_f: &CovarianceModel, sigma_t: &CovarianceModel) -> Result<CovarianceModel> {
    if sigma_f.dim() != sigma_t.dim() {
        return validation("covariances must share a dimension");
    }
    let root = sqrt_spd(sigma_f);
    CovarianceModel::new(symmetrize(&(&root * sigma_t.matrix() * &root)))
}

/// Rank-`R` reduction of the few-shot problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionResult {
    /// `d x R`, top-`R` eigenvectors of the canonical task covariance.
    pub basis_u1: DMatrix<f64>,
    /// `U1^T Sigma_F U1`.
    pub sigma_f_r: DMatrix<f64>,
    /// `U1^T Sigma_tilde_T U1` (diagonal up to round-off).
    pub sigma_ttil_r: DMatrix<f64>,
    /// Equivalent noise `sigma_R`.
    pub sigma_r: f64,
}

impl ReductionResult {
    pub fn r(&self) -> usize {
        self.basis_u1.ncols()
    }

    pub fn sigma_ttil_r_diag(&self) -> Vec<f64> {
        self.sigma_ttil_r.diagonal().iter().map(|v| v.max(0.0)).collect()
    }
}

/// Projects onto the top-`R` eigenspace of `sigma_ttil` and folds the discarded
/// signal into the noise: `sigma_R^2 = sigma^2 + tr(St) - tr(St^R)`.
pub fn compute_reduction(
    r: usize,
    sigma_f: &CovarianceModel,
    sigma_ttil: &CovarianceModel,
    sigma: f64,
) -> Result<ReductionResult> {
    let d = sigma_ttil.dim();
    if sigma_f.dim() != d {
        return validation("covariances must share a dimension");
    }
    if r == 0 || r > d {
        return validation(format!("R = {r} outside 1..={d}"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return validation("sigma must be finite and >= 0");
    }
    let u1 = sigma_ttil.eigvecs().columns(0, r).into_owned();
    let sigma_ttil_r = symmetrize(&(u1.transpose() * sigma_ttil.matrix() * &u1));
    let sigma_f_r = symmetrize(&(u1.transpose() * sigma_f.matrix() * &u1));
    // discarded mass from the tail eigenvalues directly; exact zero at R = d
    let tail: f64 = sigma_ttil.eigvals().iter().skip(r).sum();
    let sigma_r = (sigma * sigma + tail.max(0.0)).sqrt();
    Ok(ReductionResult {
        basis_u1: u1,
        sigma_f_r,
        sigma_ttil_r,
        sigma_r,
    })
}

fn closed_form(theta: &[f64], n2: usize, sigma_ttil_r: &[f64], sigma_r: f64, variant: RiskVariant) -> Result<f64> {
    if theta.len() != sigma_ttil_r.len() {
        return validation(format!(
            "theta has length {} but the reduced spectrum has length {}",
            theta.len(),
            sigma_ttil_r.len()
        ));
    }
    let n2f = n2 as f64;
    let s: f64 = theta.iter().map(|t| t * t).sum();
    let denom = n2f - s;
    if denom <= 1e-12 {
        return Err(Error::Divergence(format!(
            "n2 - ||theta||^2 = {denom:.3e} <= 0; risk formula is at its pole"
        )));
    }
    let bias: f64 = theta.iter().zip(sigma_ttil_r).map(|(t, st)| (1.0 - t).powi(2) * st).sum();
    let (slope, intercept) = variant.noise_coefficients(theta.len());
    Ok((n2f * bias + sigma_r * sigma_r * (slope * s + intercept)) / denom)
}

/// Closed-form risk of a shrinkage profile.
pub fn analytic_risk(
    theta: &ThetaProfile,
    sigma_ttil_r: &[f64],
    sigma_r: f64,
    variant: RiskVariant,
) -> Result<RiskEstimate> {
    Ok(RiskEstimate {
        value: closed_form(theta.theta(), theta.n2(), sigma_ttil_r, sigma_r, variant)?,
        method: variant.method(),
        stderr: 0.0,
    })
}

/// Same as [`analytic_risk`] on a raw slice, without the profile validation.
/// Used by the solvers, which move `theta` along the feasible set.
pub fn analytic_risk_raw(
    theta: &[f64],
    n2: usize,
    sigma_ttil_r: &[f64],
    sigma_r: f64,
    variant: RiskVariant,
) -> Result<f64> {
    closed_form(theta, n2, sigma_ttil_r, sigma_r, variant)
}

/// Closed-form risk of a diagonal weighting in the reduced coordinates.
pub fn analytic_risk_of_weights(
    lambda_sq: &[f64],
    n2: usize,
    sigma_ttil_r: &[f64],
    sigma_r: f64,
    variant: RiskVariant,
) -> Result<RiskEstimate> {
    let theta = ThetaProfile::from_lambda_sq(lambda_sq, n2)?;
    analytic_risk(&theta, sigma_ttil_r, sigma_r, variant)
}

/// Finite-dimensional distributional prediction of the interpolator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcPrediction {
    pub xi: f64,
    pub gamma: f64,
    /// `1 / (1 + (xi l_i)^{-1})`, equal to `theta_i`.
    pub shrink: Vec<f64>,
    /// `sqrt(kappa gamma) l_i^{-1/2} / (1 + (xi l_i)^{-1})`.
    pub noise_scale: Vec<f64>,
    /// `sum beta_i^2 (1 - theta_i)^2 + kappa gamma ||theta||^2`.
    pub risk: f64,
}

/// Distributional characterization for a problem whose effective feature
/// spectrum is `lambda_sq` and whose reduced task coefficients are `beta_r`.
pub fn dc_predict(lambda_sq: &[f64], beta_r: &[f64], n2: usize, sigma_r: f64) -> Result<DcPrediction> {
    if beta_r.len() != lambda_sq.len() {
        return validation("beta_r and lambda_sq must have the same length");
    }
    let r = lambda_sq.len();
    let xi = solve_xi(lambda_sq, n2)?;
    let kappa = r as f64 / n2 as f64;
    let shrink: Vec<f64> = lambda_sq.iter().map(|l| theta_of(xi, *l)).collect();
    let bias: f64 = shrink.iter().zip(beta_r).map(|(t, b)| b * b * (1.0 - t).powi(2)).sum();
    let s: f64 = shrink.iter().map(|t| t * t).sum();
    let denom = 1.0 - kappa / r as f64 * s;
    if denom <= 1e-12 {
        return Err(Error::Divergence(format!("gamma denominator {denom:.3e} <= 0")));
    }
    let gamma = (sigma_r * sigma_r + bias / r as f64) / denom;
    let noise_scale = lambda_sq
        .iter()
        .zip(&shrink)
        .map(|(l, t)| (kappa * gamma).sqrt() / l.sqrt() * t)
        .collect();
    let risk = bias + kappa * gamma * s;
    Ok(DcPrediction {
        xi,
        gamma,
        shrink,
        noise_scale,
        risk,
    })
}

fn trial_loss(spec: &ProblemSpec, ws: &[&EigenWeighting], n2: usize, stream: RngStream) -> Result<Vec<f64>> {
    let data = gen_few_shot_stream(spec, n2, stream)?;
    let noise = spec.noise_sd() * spec.noise_sd();
    ws.iter()
        .map(|w| {
            let beta_hat = fit_weighted_min_norm(&data.features, &data.labels, w)?;
            let err = beta_hat - &data.beta_star;
            Ok(err.dot(&(spec.feature_cov().matrix() * &err)) + noise)
        })
        .collect()
}

/// Per-trial losses for several weightings on shared few-shot draws.
/// `out[k][t]` is the loss of weighting `k` in trial `t`.
pub fn monte_carlo_losses(
    spec: &ProblemSpec,
    ws: &[&EigenWeighting],
    n2: usize,
    trials: usize,
    stream: RngStream,
) -> Result<Vec<Vec<f64>>> {
    for w in ws {
        if w.d() != spec.d() {
            return validation(format!("weighting has {} rows but d = {}", w.d(), spec.d()));
        }
    }
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| trial_loss(spec, ws, n2, stream.index(t as u64)))
        .collect::<Result<_>>()?;
    Ok((0..ws.len())
        .map(|k| per_trial.iter().map(|row| row[k]).collect())
        .collect())
}

/// Mean and standard error, summed in index order.
pub fn summarize(samples: &[f64]) -> RiskEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    RiskEstimate {
        value: mean,
        method: RiskMethod::MonteCarlo,
        stderr: (var / n).sqrt(),
    }
}

/// Monte Carlo risk for several weightings sharing each trial's task, design
/// and noise.
pub fn monte_carlo_risk_paired(
    spec: &ProblemSpec,
    ws: &[&EigenWeighting],
    n2: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<RiskEstimate>> {
    if trials < 2 {
        return validation("Monte Carlo needs at least 2 trials");
    }
    let losses = monte_carlo_losses(spec, ws, n2, trials, RngStream::new(seed).substream("monte-carlo"))?;
    Ok(losses.iter().map(|l| summarize(l)).collect())
}

pub fn monte_carlo_risk(
    spec: &ProblemSpec,
    w: &EigenWeighting,
    n2: usize,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    Ok(monte_carlo_risk_paired(spec, &[w], n2, trials, seed)?[0])
}

/// Monte Carlo risks of `(Sigma_F^{-1/2} Lambda, Sigma_T, Sigma_F)` and of
/// `(Lambda, Sigma_tilde_T, I)` under the same seed.
pub fn whitening_invariance_check(
    spec: &ProblemSpec,
    w: &EigenWeighting,
    n2: usize,
    trials: usize,
    seed: u64,
) -> Result<(RiskEstimate, RiskEstimate)> {
    let inv_root = spec.feature_cov().inv_sqrt()?;
    let original_w = EigenWeighting::new(&inv_root * w.matrix())?;
    let original = monte_carlo_risk(spec, &original_w, n2, trials, seed)?;
    let ttil = canonical_cov(spec.feature_cov(), spec.task_cov())?;
    let whitened_spec = ProblemSpec::new(CovarianceModel::identity(spec.d()), ttil, spec.noise_sd())?;
    let whitened = monte_carlo_risk(&whitened_spec, w, n2, trials, seed)?;
    Ok((original, whitened))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn canonical_examples() {
        let t = CovarianceModel::from_diag(&[3.0, 0.5]).unwrap();
        assert_relative_eq!(
            canonical_cov(&CovarianceModel::identity(2), &t).unwrap().matrix(),
            t.matrix(),
            epsilon = 1e-12
        );
        let f = CovarianceModel::from_diag(&[4.0, 1.0]).unwrap();
        let c = canonical_cov(&f, &CovarianceModel::identity(2)).unwrap();
        assert_relative_eq!(c.matrix(), f.matrix(), epsilon = 1e-12);
        let f = CovarianceModel::from_diag(&[0.25, 1.0]).unwrap();
        let t = CovarianceModel::from_diag(&[8.0, 0.1]).unwrap();
        let c = canonical_cov(&f, &t).unwrap();
        assert_relative_eq!(c.matrix()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.matrix()[(1, 1)], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn reduction_examples() {
        let f = CovarianceModel::identity(2);
        let t = CovarianceModel::from_diag(&[1.0, 0.1]).unwrap();
        let red = compute_reduction(1, &f, &t, 0.0).unwrap();
        assert_relative_eq!(red.sigma_r * red.sigma_r, 0.1, epsilon = 1e-12);
        let full = compute_reduction(2, &f, &t, 0.3).unwrap();
        assert_eq!(full.sigma_r, 0.3);

        let f = CovarianceModel::identity(100);
        let t = CovarianceModel::bilevel(20, 1.0, 80, 0.1).unwrap();
        let red = compute_reduction(50, &f, &t, 0.0).unwrap();
        assert_relative_eq!(red.sigma_r * red.sigma_r, 5.0, epsilon = 1e-10);
        assert_relative_eq!(red.sigma_ttil_r.trace(), 23.0, epsilon = 1e-10);
        // ties broken by coordinate index: U1 = first 50 coordinates
        for k in 0..50 {
            assert_relative_eq!(red.basis_u1[(k, k)], 1.0, epsilon = 1e-12);
        }
        assert!(compute_reduction(0, &f, &t, 0.0).is_err());
        assert!(compute_reduction(101, &f, &t, 0.0).is_err());
    }

    #[test]
    fn xi_examples() {
        let xi = solve_xi(&[1.0, 1.0], 1).unwrap();
        assert_relative_eq!(xi, 1.0, epsilon = 1e-10);
        let xi = solve_xi(&[1.0, 2.0], 1).unwrap();
        assert_relative_eq!(xi, 1.0 / 2f64.sqrt(), epsilon = 1e-9);
        let xi2 = solve_xi(&[2.0, 4.0], 1).unwrap();
        assert_relative_eq!(xi2, xi / 2.0, epsilon = 1e-9);
        // equal weights: closed form n2 / ((R - n2) l)
        let xi = solve_xi(&[0.5; 10], 4).unwrap();
        assert_relative_eq!(xi, 4.0 / (6.0 * 0.5), epsilon = 1e-9);
    }

    #[test]
    fn xi_errors() {
        assert!(matches!(solve_xi(&[1.0, 1.0], 2), Err(Error::Validation(_))));
        assert!(solve_xi(&[1.0, 0.0, 1.0], 1).is_err());
        assert!(solve_xi(&[1.0, -1.0, 1.0], 1).is_err());
    }

    #[test]
    fn analytic_examples() {
        let th = ThetaProfile::new(vec![0.5, 0.5], 1).unwrap();
        for v in [RiskVariant::Main, RiskVariant::Appendix] {
            assert_relative_eq!(analytic_risk(&th, &[1.0, 1.0], 0.0, v).unwrap().value, 1.0, epsilon = 1e-12);
        }
        let main = analytic_risk(&th, &[0.0, 0.0], 1.0, RiskVariant::Main).unwrap();
        let app = analytic_risk(&th, &[0.0, 0.0], 1.0, RiskVariant::Appendix).unwrap();
        assert_relative_eq!(main.value, 3.0, epsilon = 1e-12);
        assert_relative_eq!(app.value, 2.0, epsilon = 1e-12);
        assert_eq!(main.method, RiskMethod::AnalyticMain);
        assert_eq!(main.stderr, 0.0);
    }

    #[test]
    fn analytic_uniform_pin() {
        let (n2, r, c, sr) = (4usize, 10usize, 0.7, 0.9);
        let u = n2 as f64 / r as f64;
        let th = ThetaProfile::new(vec![u; r], n2).unwrap();
        let got = analytic_risk(&th, &vec![c; r], sr, RiskVariant::Main).unwrap().value;
        let n = n2 as f64;
        let rf = r as f64;
        let expected = (n * rf * c * (1.0 - n / rf).powi(2) + (n * n / rf + 1.0) * sr * sr) / (n - n * n / rf);
        assert_relative_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn analytic_pole_is_divergence() {
        assert!(matches!(
            analytic_risk_raw(&[1.0, 0.0], 1, &[1.0, 1.0], 0.0, RiskVariant::Main),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn theta_profile_validation() {
        assert!(ThetaProfile::new(vec![0.5, 0.6], 1).is_err());
        assert!(ThetaProfile::new(vec![1.0, 0.0], 1).is_err());
        assert!(ThetaProfile::new(vec![-0.1, 1.1], 1).is_err());
        let p = ThetaProfile::from_lambda_sq(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_relative_eq!(p.theta().iter().sum::<f64>(), 2.0, epsilon = 1e-10);
        assert_relative_eq!(p.kappa(), 1.5);
    }

    #[test]
    fn dc_examples() {
        let p = dc_predict(&[1.0, 2.0, 3.0], &[0.0; 3], 1, 0.0).unwrap();
        assert_eq!(p.gamma, 0.0);
        assert_eq!(p.risk, 0.0);
        let p = dc_predict(&[1.0; 5], &[1.0, -2.0, 0.5, 0.0, 3.0], 2, 0.4).unwrap();
        for s in &p.shrink {
            assert_relative_eq!(*s, p.shrink[0], epsilon = 1e-12);
        }
        let th = ThetaProfile::from_lambda_sq(&[1.0; 5], 2).unwrap();
        for (a, b) in p.shrink.iter().zip(th.theta()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn monte_carlo_zero_task_zero_noise() {
        let spec = ProblemSpec::new(CovarianceModel::identity(6), CovarianceModel::zeros(6), 0.0).unwrap();
        let r = monte_carlo_risk(&spec, &EigenWeighting::identity(6), 3, 10, 1).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.stderr, 0.0);
        assert!(monte_carlo_risk(&spec, &EigenWeighting::identity(6), 3, 1, 1).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic_and_above_noise() {
        let spec = ProblemSpec::new(CovarianceModel::identity(8), CovarianceModel::identity(8), 0.5).unwrap();
        let w = EigenWeighting::identity(8);
        let a = monte_carlo_risk(&spec, &w, 4, 50, 3).unwrap();
        let b = monte_carlo_risk(&spec, &w, 4, 50, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.value >= 0.25 - 3.0 * a.stderr);
    }

    #[test]
    fn whitening_identity_feature_cov_is_same_problem() {
        let spec = ProblemSpec::new(CovarianceModel::identity(5), CovarianceModel::from_diag(&[1.0, 0.5, 0.2, 0.1, 0.1]).unwrap(), 0.3).unwrap();
        let (a, b) = whitening_invariance_check(&spec, &EigenWeighting::identity(5), 2, 30, 9).unwrap();
        assert_relative_eq!(a.value, b.value, epsilon = 1e-10);
        let zero = ProblemSpec::new(CovarianceModel::from_diag(&[2.0, 1.0, 3.0]).unwrap(), CovarianceModel::zeros(3), 0.0).unwrap();
        let (a, b) = whitening_invariance_check(&zero, &EigenWeighting::identity(3), 1, 5, 9).unwrap();
        assert_eq!((a.value, b.value), (0.0, 0.0));
        let singular = ProblemSpec::new(CovarianceModel::from_diag(&[1.0, 0.0]).unwrap(), CovarianceModel::identity(2), 0.0).unwrap();
        assert!(whitening_invariance_check(&singular, &EigenWeighting::identity(2), 1, 5, 9).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn xi_residual_and_theta_sum(seed in 0u64..100_000, r in 2usize..40) {
            let mut rng = RngStream::new(seed).rng();
            let n2 = rng.random_range(1..r);
            let l: Vec<f64> = (0..r).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
            let p = ThetaProfile::from_lambda_sq(&l, n2).unwrap();
            let sum: f64 = p.theta().iter().sum();
            prop_assert!((sum - n2 as f64).abs() <= 1e-10 * n2 as f64);
        }

        #[test]
        fn sigma_r_monotone_in_r(seed in 0u64..100_000, d in 2usize..12) {
            let g = crate::linalg::standard_normal_matrix(d, d, RngStream::new(seed));
            let t = CovarianceModel::new(symmetrize(&(&g * g.transpose()))).unwrap();
            let f = CovarianceModel::identity(d);
            let sigma = 0.37;
            let mut prev = f64::INFINITY;
            for r in 1..=d {
                let red = compute_reduction(r, &f, &t, sigma).unwrap();
                prop_assert!(red.sigma_r <= prev);
                let lhs = red.sigma_r * red.sigma_r;
                let rhs = sigma * sigma + t.trace() - red.sigma_ttil_r.trace();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * t.trace().max(1.0));
                prev = red.sigma_r;
            }
            prop_assert_eq!(compute_reduction(d, &f, &t, sigma).unwrap().sigma_r, sigma);
        }

        #[test]
        fn analytic_linear_in_spectrum(seed in 0u64..100_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = RngStream::new(seed).rng();
            let r = 6;
            let n2 = 3;
            let l: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..5.0)).collect();
            let th = ThetaProfile::from_lambda_sq(&l, n2).unwrap();
            let s1: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..2.0)).collect();
            let s2: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..2.0)).collect();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
            let sr = 0.8;
            for v in [RiskVariant::Main, RiskVariant::Appendix] {
                let noise = analytic_risk(&th, &vec![0.0; r], sr, v).unwrap().value;
                let f = |s: &[f64]| analytic_risk(&th, s, sr, v).unwrap().value - noise;
                let lhs = f(&mix);
                let rhs = a * f(&s1) + b * f(&s2);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn dc_matches_appendix_in_expectation(seed in 0u64..100_000) {
            let mut rng = RngStream::new(seed).rng();
            let r = rng.random_range(3..30);
            let n2 = rng.random_range(1..r);
            let l: Vec<f64> = (0..r).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
            let st: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..3.0)).collect();
            let beta: Vec<f64> = st.iter().map(|v| v.sqrt()).collect();
            let sr = rng.random_range(0.0..2.0);
            let dc = dc_predict(&l, &beta, n2, sr).unwrap();
            let th = ThetaProfile::from_lambda_sq(&l, n2).unwrap();
            let app = analytic_risk(&th, &st, sr, RiskVariant::Appendix).unwrap().value;
            prop_assert!((dc.risk - app).abs() <= 1e-10 * app.abs().max(1.0));
        }
    }
}
