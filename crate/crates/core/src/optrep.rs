//! Optimal eigen-weighting.
//!
//! The closed-form risk depends on the weighting only through the shrinkage
//! profile `theta`, so the optimal representation is found in two steps:
//! minimize `f(theta)` over `{sum theta = n2, lo <= theta <= hi}`, then map
//! `theta` back to weights and lift them to a `d x R` matrix.
//!
//! Two solvers are provided. [`solve_pgd`] is projected gradient descent with
//! an exact projection onto the capped simplex. [`solve_fixed_point`] iterates
//! the stationarity conditions in `(C, V, S')` and is used as a cross-check.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{validation, Error, Result};
use crate::interpolator::EigenWeighting;
use crate::linalg::CovarianceModel;
use crate::risk::{analytic_risk_raw, compute_reduction, ReductionResult, RiskVariant, ThetaProfile, THETA_MAX};

const PGD_MAX_ITER: usize = 50_000;
const PGD_TOL: f64 = 1e-10;
const FP_MAX_ITER: usize = 20_000;
const FP_TOL: f64 = 1e-13;
const BOUNDARY_TOL: f64 = 1e-9;

/// State of the stationarity fixed point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktState {
    /// Multiplier, fixed by `sum phi = R - n2`.
    pub c: f64,
    /// `sum St_i phi_i^2`.
    pub v: f64,
    /// `sum theta_i^2`.
    pub s: f64,
    /// `1 - theta`.
    pub phi: Vec<f64>,
}

/// Box `lo <= theta_i <= 1 - (d - n2) lo / n2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustBox {
    pub theta_lower: f64,
    pub theta_upper: f64,
}

impl RobustBox {
    pub fn new(theta_lower: f64, d: usize, n2: usize, r: usize) -> Result<Self> {
        if n2 == 0 || n2 >= r || r > d {
            return validation(format!("need 1 <= n2 < R <= d (n2 = {n2}, R = {r}, d = {d})"));
        }
        let uniform = n2 as f64 / r as f64;
        if !(theta_lower > 0.0 && theta_lower <= uniform) {
            return validation(format!("theta_lower = {theta_lower} must lie in (0, n2/R = {uniform}]"));
        }
        let theta_upper = 1.0 - (d - n2) as f64 * theta_lower / n2 as f64;
        if theta_upper < uniform {
            return validation(format!(
                "box is infeasible: upper bound {theta_upper} < n2/R = {uniform}"
            ));
        }
        Ok(Self {
            theta_lower,
            theta_upper,
        })
    }
}

/// The minimization problem in `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaProblem {
    pub st: Vec<f64>,
    pub n2: usize,
    pub sigma_r: f64,
    pub variant: RiskVariant,
    pub lo: f64,
    pub hi: f64,
}

impl ThetaProblem {
    pub fn new(st: &[f64], n2: usize, sigma_r: f64, variant: RiskVariant, bx: Option<&RobustBox>) -> Result<Self> {
        let r = st.len();
        if n2 == 0 || n2 >= r {
            return validation(format!("need 1 <= n2 < R (n2 = {n2}, R = {r})"));
        }
        if st.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return validation("reduced task spectrum must be finite and >= 0");
        }
        if !(sigma_r.is_finite() && sigma_r >= 0.0) {
            return validation("sigma_R must be finite and >= 0");
        }
        let (lo, hi) = match bx {
            Some(b) => (b.theta_lower, b.theta_upper.min(THETA_MAX)),
            None => (0.0, THETA_MAX),
        };
        let uniform = n2 as f64 / r as f64;
        if lo > uniform || hi < uniform {
            return validation("box does not contain the uniform profile");
        }
        Ok(Self {
            st: st.to_vec(),
            n2,
            sigma_r,
            variant,
            lo,
            hi,
        })
    }

    pub fn r(&self) -> usize {
        self.st.len()
    }

    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        analytic_risk_raw(theta, self.n2, &self.st, self.sigma_r, self.variant)
    }

    /// `df/dtheta_i = 2 ((a sigma^2 + f) theta_i - n2 St_i phi_i) / (n2 - s)`.
    pub fn gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f = self.objective(theta)?;
        let s: f64 = theta.iter().map(|t| t * t).sum();
        let denom = self.n2 as f64 - s;
        let (a, _) = self.variant.noise_coefficients(self.r());
        let k = a * self.sigma_r * self.sigma_r + f;
        let g = theta
            .iter()
            .zip(&self.st)
            .map(|(t, st)| 2.0 * (k * t - self.n2 as f64 * st * (1.0 - t)) / denom)
            .collect();
        Ok((f, g))
    }

    /// Noise weight `nu` in the stationarity denominator `V + nu sigma^2 + D St_i`.
    pub fn nu(&self) -> f64 {
        let (a, b) = self.variant.noise_coefficients(self.r());
        (a * self.n2 as f64 + b) / self.n2 as f64
    }

    /// `df/dphi_i` written through the stationarity denominator:
    /// `(2/D) (n2 phi_i (V + nu sigma^2 + D St_i) / D - (a sigma^2 + f))`,
    /// with `D = R - n2 - S'`, `S' = sum phi^2`, `V = sum St phi^2`.
    pub fn grad_phi_stationarity_form(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let theta: Vec<f64> = phi.iter().map(|p| 1.0 - p).collect();
        let f = self.objective(&theta)?;
        let (a, _) = self.variant.noise_coefficients(self.r());
        let n2 = self.n2 as f64;
        let sp: f64 = phi.iter().map(|p| p * p).sum();
        let d = self.r() as f64 - n2 - sp;
        let v: f64 = phi.iter().zip(&self.st).map(|(p, st)| st * p * p).sum();
        let sr2 = self.sigma_r * self.sigma_r;
        Ok(phi
            .iter()
            .zip(&self.st)
            .map(|(p, st)| 2.0 / d * (n2 * p * (v + self.nu() * sr2 + d * st) / d - (a * sr2 + f)))
            .collect())
    }

    pub fn uniform(&self) -> Vec<f64> {
        vec![self.n2 as f64 / self.r() as f64; self.r()]
    }

    /// Euclidean projection onto `{sum theta = n2, lo <= theta <= hi}`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        project_capped_simplex(v, self.n2 as f64, self.lo, self.hi)
    }

    pub fn is_feasible(&self, theta: &[f64], tol: f64) -> bool {
        let sum: f64 = theta.iter().sum();
        (sum - self.n2 as f64).abs() <= tol
            && theta.iter().all(|t| *t >= self.lo - tol && *t <= self.hi + tol)
    }

    /// Relative spread of `df/dtheta_i` over coordinates strictly inside the box.
    pub fn multiplier_spread(&self, theta: &[f64]) -> Result<f64> {
        let (_, g) = self.gradient(theta)?;
        let interior: Vec<f64> = theta
            .iter()
            .zip(&g)
            .filter(|(t, _)| **t > self.lo + BOUNDARY_TOL && **t < self.hi - BOUNDARY_TOL)
            .map(|(_, g)| *g)
            .collect();
        if interior.len() < 2 {
            return Ok(0.0);
        }
        let max = interior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = interior.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = interior.iter().map(|g| g.abs()).fold(0.0, f64::max);
        Ok(if scale == 0.0 { 0.0 } else { (max - min) / scale })
    }
}

/// `clamp(v - tau, lo, hi)` with `tau` chosen so the entries sum to `total`.
pub fn project_capped_simplex(v: &[f64], total: f64, lo: f64, hi: f64) -> Vec<f64> {
    let sum_at = |tau: f64| v.iter().map(|x| (x - tau).clamp(lo, hi)).sum::<f64>();
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut a = vmin - hi;
    let mut b = vmax - lo;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if sum_at(mid) > total {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - 0.5 * (a + b)).clamp(lo, hi)).collect();
    // spread the last bit of round-off over the free coordinates
    let free: Vec<usize> = (0..out.len()).filter(|&i| out[i] > lo && out[i] < hi).collect();
    if !free.is_empty() {
        let resid = (total - out.iter().sum::<f64>()) / free.len() as f64;
        for i in free {
            out[i] = (out[i] + resid).clamp(lo, hi);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn pg_residual(p: &ThetaProblem, theta: &[f64], g: &[f64]) -> f64 {
    let step: Vec<f64> = theta.iter().zip(g).map(|(t, g)| t - g).collect();
    let proj = p.project(&step);
    let r = proj.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    // measured against the gradient scale so the stopping rule is unit-free
    r / g.iter().map(|v| v.abs()).fold(1.0, f64::max)
}

/// Spectral projected gradient: Barzilai-Borwein steps with a nonmonotone
/// Armijo test against the worst of the last few objective values.
pub fn solve_pgd(p: &ThetaProblem) -> Result<SolverReport> {
    const MEMORY: usize = 10;
    let mut theta = p.uniform();
    let (mut f, mut g) = p.gradient(&theta)?;
    let mut history = vec![f];
    let mut best = (f, theta.clone());
    let mut step = 1.0 / g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    let mut residual = pg_residual(p, &theta, &g);
    let mut stalls = 0;
    for it in 0..PGD_MAX_ITER {
        if residual <= PGD_TOL {
            return Ok(SolverReport {
                theta,
                objective: f,
                iterations: it,
                residual,
            });
        }
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-14 * f_ref.abs().max(1.0);
        let trial: Vec<f64> = theta.iter().zip(&g).map(|(x, g)| x - step * g).collect();
        let cand = p.project(&trial);
        let dir: Vec<f64> = cand.iter().zip(&theta).map(|(c, x)| c - x).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        let mut t = 1.0;
        let accepted = loop {
            let x: Vec<f64> = theta.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            if let Ok((fx, gx)) = p.gradient(&x) {
                if fx <= f_ref + 1e-4 * t * slope + slack {
                    break Some((x, fx, gx));
                }
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        let Some((next, fnext, gnext)) = accepted else {
            stalls += 1;
            if stalls > 3 {
                break;
            }
            step = 1.0 / g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
            continue;
        };
        let sdiff: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let ydiff: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = sdiff.iter().zip(&ydiff).map(|(a, b)| a * b).sum();
        let ss: f64 = sdiff.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { 1e12f64.min(step * 10.0) };
        theta = next;
        f = fnext;
        g = gnext;
        if f < best.0 {
            best = (f, theta.clone());
        }
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
        residual = pg_residual(p, &theta, &g);
    }
    Err(Error::NonConvergence {
        iterations: PGD_MAX_ITER,
        residual,
        best: best.1,
    })
}

/// `phi_i = C D^2 / (2 n2 (V + nu sigma^2 + D St_i))`, clamped to the box, with
/// `C` chosen so that `sum phi = R - n2`.
fn phi_from_state(p: &ThetaProblem, v: f64, sp: f64) -> Option<(f64, Vec<f64>)> {
    let r = p.r() as f64;
    let n2 = p.n2 as f64;
    let d = r - n2 - sp;
    if d <= 0.0 {
        return None;
    }
    let sr2 = p.sigma_r * p.sigma_r;
    let den: Vec<f64> = p.st.iter().map(|st| v + p.nu() * sr2 + d * st).collect();
    let dmin = den.iter().cloned().fold(f64::INFINITY, f64::min);
    // relative weights, largest = 1; a zero denominator takes the full weight
    let w: Vec<f64> = den
        .iter()
        .map(|x| if dmin <= 0.0 { if *x <= 0.0 { 1.0 } else { 0.0 } } else { dmin / x })
        .collect();
    let (plo, phi_hi) = (1.0 - p.hi, 1.0 - p.lo);
    let target = r - n2;
    let total = |t: f64| w.iter().map(|wi| (t * wi).clamp(plo, phi_hi)).sum::<f64>();
    let mut a = 0.0;
    let mut b = 1.0;
    while total(b) < target {
        b *= 2.0;
        if b > 1e300 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if total(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    let t = 0.5 * (a + b);
    let phi: Vec<f64> = w.iter().map(|wi| (t * wi).clamp(plo, phi_hi)).collect();
    let c = if dmin > 0.0 { t * 2.0 * n2 * dmin / (d * d) } else { f64::INFINITY };
    Some((c, phi))
}

fn state_of(p: &ThetaProblem, phi: &[f64]) -> (f64, f64) {
    let v = phi.iter().zip(&p.st).map(|(f, st)| st * f * f).sum();
    let sp = phi.iter().map(|f| f * f).sum();
    (v, sp)
}

fn theta_of_phi(phi: &[f64]) -> Vec<f64> {
    phi.iter().map(|f| 1.0 - f).collect()
}

fn iterate_state(p: &ThetaProblem, mut v: f64, mut sp: f64) -> (usize, f64, f64, f64, Option<(f64, Vec<f64>)>) {
    let mut last = None;
    let mut change = f64::INFINITY;
    for it in 0..FP_MAX_ITER {
        let Some((c, phi)) = phi_from_state(p, v, sp) else {
            return (it, v, sp, change, last);
        };
        let (v_new, sp_new) = state_of(p, &phi);
        change = (v_new - v).abs() / v_new.abs().max(1e-300).max(1.0) + (sp_new - sp).abs() / sp_new.max(1.0);
        v = 0.5 * v + 0.5 * v_new;
        sp = 0.5 * sp + 0.5 * sp_new;
        last = Some((c, phi));
        if change <= FP_TOL {
            return (it + 1, v, sp, change, last);
        }
    }
    (FP_MAX_ITER, v, sp, change, last)
}

/// Damped fixed point of the stationarity conditions. If it stalls and
/// `R <= 8`, a coarse grid over `(V, S')` picks a new starting state.
pub fn solve_fixed_point(p: &ThetaProblem) -> Result<(KktState, SolverReport)> {
    let start = p.uniform().iter().map(|t| 1.0 - t).collect::<Vec<_>>();
    let (v0, sp0) = state_of(p, &start);
    let (mut iters, _, _, mut change, mut last) = iterate_state(p, v0, sp0);

    if change > FP_TOL && p.r() <= 8 {
        let r = p.r() as f64;
        let n2 = p.n2 as f64;
        let vmax: f64 = p.st.iter().sum();
        let sp_lo = (r - n2).powi(2) / r;
        let sp_hi = r - n2;
        let mut best: Option<(f64, f64, f64)> = None;
        let steps = 40;
        for i in 0..=steps {
            for j in 0..=steps {
                let vg = vmax * i as f64 / steps as f64;
                let sg = sp_lo + (sp_hi - sp_lo) * j as f64 / steps as f64;
                if let Some((_, phi)) = phi_from_state(p, vg, sg) {
                    if let Ok(f) = p.objective(&theta_of_phi(&phi)) {
                        if best.is_none_or(|b| f < b.0) {
                            best = Some((f, vg, sg));
                        }
                    }
                }
            }
        }
        if let Some((_, vg, sg)) = best {
            let (it2, _, _, ch2, last2) = iterate_state(p, vg, sg);
            iters += it2;
            if ch2 < change {
                (change, last) = (ch2, last2);
            }
        }
    }
    let Some((c, phi)) = last else {
        return Err(Error::NonConvergence {
            iterations: iters,
            residual: change,
            best: p.uniform(),
        });
    };
    let theta = theta_of_phi(&phi);
    if change > FP_TOL {
        return Err(Error::NonConvergence {
            iterations: iters,
            residual: change,
            best: theta,
        });
    }
    let objective = p.objective(&theta)?;
    let s = theta.iter().map(|t| t * t).sum();
    let (v, _) = state_of(p, &phi);
    Ok((
        KktState { c, v, s, phi },
        SolverReport {
            theta,
            objective,
            iterations: iters,
            residual: change,
        },
    ))
}

/// Optimal shrinkage profile for the reduced spectrum `st`.
pub fn solve_theta_star(
    st: &[f64],
    n2: usize,
    sigma_r: f64,
    bx: Option<&RobustBox>,
    variant: RiskVariant,
) -> Result<ThetaProfile> {
    let p = ThetaProblem::new(st, n2, sigma_r, variant, bx)?;
    let report = solve_pgd(&p)?;
    ThetaProfile::new(report.theta, n2)
}

/// `Lambda_i = (1/theta_i - 1)^{-1/2}`, so that `xi = 1` reproduces `theta`.
/// Coordinates with `theta_i = 0` get weight 0.
pub fn theta_to_lambda(theta: &ThetaProfile) -> Result<Vec<f64>> {
    theta
        .theta()
        .iter()
        .map(|&t| {
            if t >= 1.0 {
                validation(format!("theta_i = {t} >= 1"))
            } else if t <= 0.0 {
                Ok(0.0)
            } else {
                Ok((t / (1.0 - t)).sqrt())
            }
        })
        .collect()
}

/// Everything produced on the way to the optimal weighting.
#[derive(Debug, Clone)]
pub struct OptimalRep {
    pub weighting: EigenWeighting,
    pub theta: ThetaProfile,
    pub lambda_r: Vec<f64>,
    pub reduction: ReductionResult,
}

/// `U1 (Sigma_F^R)^{-1/2} diag(Lambda_R)` from the optimal profile.
pub fn compute_optimal_rep(
    r: usize,
    sigma_f: &CovarianceModel,
    sigma_ttil: &CovarianceModel,
    sigma: f64,
    n2: usize,
    bx: Option<&RobustBox>,
    variant: RiskVariant,
) -> Result<EigenWeighting> {
    Ok(optimal_rep_detail(r, sigma_f, sigma_ttil, sigma, n2, bx, variant)?.weighting)
}

pub fn optimal_rep_detail(
    r: usize,
    sigma_f: &CovarianceModel,
    sigma_ttil: &CovarianceModel,
    sigma: f64,
    n2: usize,
    bx: Option<&RobustBox>,
    variant: RiskVariant,
) -> Result<OptimalRep> {
    let d = sigma_ttil.dim();
    if n2 == 0 || n2 >= r || r > d {
        return validation(format!("need 1 <= n2 < R <= d (n2 = {n2}, R = {r}, d = {d})"));
    }
    let reduction = compute_reduction(r, sigma_f, sigma_ttil, sigma)?;
    let theta = solve_theta_star(&reduction.sigma_ttil_r_diag(), n2, reduction.sigma_r, bx, variant)?;
    let lambda_r = theta_to_lambda(&theta)?;
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&lambda_r));
    let weighting = EigenWeighting::new(lift(&reduction)? * diag)?;
    Ok(OptimalRep {
        weighting,
        theta,
        lambda_r,
        reduction,
    })
}

/// `U1 (Sigma_F^R)^{-1/2}`: the unweighted projection onto the reduced subspace.
pub fn lift(reduction: &ReductionResult) -> Result<DMatrix<f64>> {
    let f_r = CovarianceModel::new(reduction.sigma_f_r.clone())?;
    let inv_root = f_r
        .inv_sqrt()
        .map_err(|_| Error::Validation("Sigma_F restricted to the top-R subspace is singular".into()))?;
    Ok(&reduction.basis_u1 * inv_root)
}

/// `scale n2^2 E / (d (R - n2) (2 n2 - R lo) lo)`.
pub fn e2e_bound(r: usize, n2: usize, d: usize, theta_lower: f64, est_error: f64, scale_front: Option<f64>) -> Result<f64> {
    if r <= n2 {
        return validation(format!("need R > n2 (R = {r}, n2 = {n2})"));
    }
    if !(theta_lower > 0.0) || !(est_error >= 0.0) {
        return validation("need theta_lower > 0 and estimation error >= 0");
    }
    let slack = 2.0 * n2 as f64 - r as f64 * theta_lower;
    if slack <= 0.0 {
        return validation(format!("2 n2 - R theta_lower = {slack} <= 0; bound is degenerate"));
    }
    let n2f = n2 as f64;
    Ok(scale_front.unwrap_or(1.0) * n2f * n2f * est_error / (d as f64 * (r - n2) as f64 * slack * theta_lower))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid_oracle(p: &ThetaProblem, step: f64) -> f64 {
        let n2 = p.n2 as f64;
        let a = p.lo.max(n2 - p.hi);
        let b = p.hi.min(n2 - p.lo);
        let mut best = f64::INFINITY;
        let mut t = a;
        while t <= b {
            if let Ok(f) = p.objective(&[t, n2 - t]) {
                best = best.min(f);
            }
            t += step;
        }
        if let Ok(f) = p.objective(&[b, n2 - b]) {
            best = best.min(f);
        }
        best
    }

    fn random_feasible(p: &ThetaProblem, rng: &mut impl Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..p.r()).map(|_| rng.random_range(-1.0..2.0)).collect();
        p.project(&v)
    }

    #[test]
    fn uniform_spectrum_gives_uniform_theta() {
        for v in [RiskVariant::Main, RiskVariant::Appendix] {
            let th = solve_theta_star(&[0.7; 10], 4, 0.3, None, v).unwrap();
            for t in th.theta() {
                assert_relative_eq!(*t, 0.4, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn zero_entry_gets_minimal_theta() {
        let th = solve_theta_star(&[1.0, 0.0, 0.5], 1, 0.0, None, RiskVariant::Main).unwrap();
        assert!(th.theta()[1] < 1e-8);
        let bx = RobustBox::new(0.05, 3, 1, 3).unwrap();
        let th = solve_theta_star(&[1.0, 0.0, 0.5], 1, 0.0, Some(&bx), RiskVariant::Main).unwrap();
        assert_relative_eq!(th.theta()[1], 0.05, epsilon = 1e-9);
    }

    #[test]
    fn r2_example_matches_grid() {
        for v in [RiskVariant::Main, RiskVariant::Appendix] {
            let p = ThetaProblem::new(&[1.0, 0.01], 1, 0.0, v, None).unwrap();
            let got = solve_pgd(&p).unwrap();
            assert!((got.objective - grid_oracle(&p, 1e-5)).abs() <= 1e-4);
        }
    }

    #[test]
    fn box_validation() {
        let b = RobustBox::new(0.1, 100, 40, 80).unwrap();
        assert_relative_eq!(b.theta_upper, 0.85, epsilon = 1e-12);
        assert!(RobustBox::new(0.0, 100, 40, 80).is_err());
        assert!(RobustBox::new(0.6, 100, 40, 80).is_err());
        // upper bound 1 - 60 lo / 40 falls below n2/R = 0.5 when lo > 1/3, but
        // lo <= 0.5 is also required; lo = 0.4 gives upper 0.4 < 0.5
        assert!(RobustBox::new(0.4, 100, 40, 80).is_err());
    }

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let v = [3.0, -1.0, 0.2, 0.9, 0.5];
        let p = project_capped_simplex(&v, 2.0, 0.0, 0.999);
        assert_relative_eq!(p.iter().sum::<f64>(), 2.0, epsilon = 1e-12);
        assert!(p.iter().all(|t| *t >= 0.0 && *t <= 0.999));
        let q = project_capped_simplex(&p, 2.0, 0.0, 0.999);
        for (a, b) in p.iter().zip(&q) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn theta_to_lambda_examples() {
        let th = ThetaProfile::new(vec![0.5, 0.5], 1).unwrap();
        assert_eq!(theta_to_lambda(&th).unwrap(), vec![1.0, 1.0]);
        let th = ThetaProfile::new(vec![0.0, 0.6, 0.4], 1).unwrap();
        let l = theta_to_lambda(&th).unwrap();
        assert_eq!(l[0], 0.0);
        let th = ThetaProfile::new(vec![0.1, 0.3, 0.6, 0.8, 0.2], 2).unwrap();
        let l: Vec<f64> = theta_to_lambda(&th).unwrap().iter().map(|x| x * x).collect();
        let back = ThetaProfile::from_lambda_sq(&l, 2).unwrap();
        assert_relative_eq!(back.xi(), 1.0, epsilon = 1e-9);
        for (a, b) in back.theta().iter().zip(th.theta()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn optimal_rep_identity_case() {
        let f = CovarianceModel::identity(6);
        let t = CovarianceModel::from_diag(&[0.4; 6]).unwrap();
        let w = compute_optimal_rep(6, &f, &t, 0.2, 2, None, RiskVariant::Main).unwrap();
        let m = w.matrix();
        let c = m[(0, 0)].abs();
        assert!(c > 0.0);
        assert_relative_eq!((m.transpose() * m), DMatrix::identity(6, 6) * c * c, epsilon = 1e-8);
        assert!(compute_optimal_rep(2, &f, &t, 0.2, 2, None, RiskVariant::Main).is_err());
    }

    #[test]
    fn e2e_examples() {
        assert_relative_eq!(e2e_bound(80, 40, 100, 0.1, 1.0, None).unwrap(), 1.0 / 18.0, epsilon = 1e-12);
        assert_eq!(e2e_bound(80, 40, 100, 0.1, 0.0, None).unwrap(), 0.0);
        let one = e2e_bound(60, 40, 100, 0.2, 1.0, None).unwrap();
        assert_relative_eq!(e2e_bound(60, 40, 100, 0.2, 2.0, None).unwrap(), 2.0 * one, epsilon = 1e-12);
        assert_relative_eq!(e2e_bound(60, 40, 100, 0.2, 1.0, Some(3.0)).unwrap(), 3.0 * one, epsilon = 1e-12);
        assert!(e2e_bound(80, 40, 100, 1.0, 1.0, None).is_err());
        assert!(e2e_bound(40, 40, 100, 0.1, 1.0, None).is_err());
    }

    #[test]
    fn boxed_is_never_better() {
        let st: Vec<f64> = (0..30).map(|i| if i < 10 { 1.0 } else { 0.05 }).collect();
        let bx = RobustBox::new(0.05, 100, 10, 30).unwrap();
        for v in [RiskVariant::Main, RiskVariant::Appendix] {
            let free = ThetaProblem::new(&st, 10, 0.7, v, None).unwrap();
            let boxed = ThetaProblem::new(&st, 10, 0.7, v, Some(&bx)).unwrap();
            let a = solve_pgd(&free).unwrap().objective;
            let b = solve_pgd(&boxed).unwrap().objective;
            assert!(b >= a - 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pgd_beats_random_points_and_agrees_with_fixed_point(seed in 0u64..1_000_000, appendix in any::<bool>(), boxed in any::<bool>()) {
            let mut rng = RngStream::new(seed).rng();
            let r = rng.random_range(2..20);
            let n2 = rng.random_range(1..r);
            let st: Vec<f64> = (0..r).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) }).collect();
            let sr = rng.random_range(0.0..1.5);
            let variant = if appendix { RiskVariant::Appendix } else { RiskVariant::Main };
            let bx = if boxed {
                let lo = rng.random_range(0.01..1.0) * n2 as f64 / r as f64;
                RobustBox::new(lo, r, n2, r).ok()
            } else {
                None
            };
            let p = ThetaProblem::new(&st, n2, sr, variant, bx.as_ref()).unwrap();
            let sol = solve_pgd(&p).unwrap();
            prop_assert!(p.is_feasible(&sol.theta, 1e-8));
            for _ in 0..200 {
                let q = random_feasible(&p, &mut rng);
                if let Ok(fq) = p.objective(&q) {
                    prop_assert!(sol.objective <= fq + 1e-10 * fq.abs().max(1.0));
                }
            }
            prop_assert!(p.multiplier_spread(&sol.theta).unwrap() <= 1e-6);
            let (state, fp) = solve_fixed_point(&p).unwrap();
            prop_assert!((fp.objective - sol.objective).abs() <= 1e-6 * sol.objective.abs().max(1.0));
            let sum_phi: f64 = state.phi.iter().sum();
            prop_assert!((sum_phi - (r - n2) as f64).abs() <= 1e-8);
        }

        #[test]
        fn stationarity_form_matches_finite_differences(seed in 0u64..1_000_000, appendix in any::<bool>()) {
            let mut rng = RngStream::new(seed).rng();
            let r = rng.random_range(3..15);
            let n2 = rng.random_range(1..r);
            let st: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..2.0)).collect();
            let variant = if appendix { RiskVariant::Appendix } else { RiskVariant::Main };
            let p = ThetaProblem::new(&st, n2, rng.random_range(0.0..1.0), variant, None).unwrap();
            // halfway to uniform keeps the point away from the pole
            let theta: Vec<f64> = random_feasible(&p, &mut rng).iter().zip(p.uniform()).map(|(a, b)| 0.5 * (a + b)).collect();
            let phi: Vec<f64> = theta.iter().map(|t| 1.0 - t).collect();
            let g = p.grad_phi_stationarity_form(&phi).unwrap();
            let f_of_phi = |ph: &[f64]| p.objective(&theta_of_phi(ph)).unwrap();
            for i in 0..r {
                let h = 1e-6;
                let mut up = phi.clone();
                let mut dn = phi.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (f_of_phi(&up) - f_of_phi(&dn)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
            }
        }
    }
}
