//! Representation-learning estimators from phase-1 data.
//!
//! * `Sigma_F_hat`: pooled second moment of all `N` feature vectors.
//! * `M_hat`: split each task's samples into two halves, form the half-batch
//!   means `b_{i,1}`, `b_{i,2}` of `y x`, and average the symmetrized products.
//!   The halves are independent given `beta_i`, so `E[M_hat] = Sigma_F Sigma_T Sigma_F`.
//! * `B_hat`: per-task means `b_i = (1/n1) sum_j y_ij x_ij`; its top left
//!   singular vectors estimate the task subspace.
//! * `G_hat = (1/T) B_hat B_hat^T`, biased by `O(1/n1)`, plus a plug-in debiased version.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::MetaTrainSet;
use crate::error::{validation, Result};
use crate::linalg::{eig_sym, frob_inner, principal_angle_sin, symmetrize, CovarianceModel, Subspace};

/// Pooled `(1/N) sum x x^T`.
pub fn sigma_f_hat(data: &MetaTrainSet) -> Result<CovarianceModel> {
    let n = data.total_samples();
    if n == 0 {
        return validation("no samples");
    }
    let x = &data.features;
    CovarianceModel::new(symmetrize(&(x.transpose() * x / n as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomEstimate {
    /// Symmetric, possibly indefinite.
    pub m_hat: DMatrix<f64>,
    /// Samples per task actually used (even).
    pub n1: usize,
    pub num_tasks: usize,
    /// Set when `n1` was odd and the last sample of each task was dropped.
    pub dropped_last_sample: bool,
}

fn label_weighted_mean(data: &MetaTrainSet, task: usize, from: usize, len: usize) -> DVector<f64> {
    let x = data.task_features(task);
    let y = data.task_labels(task);
    x.rows(from, len).transpose() * y.rows(from, len) / len as f64
}

/// Split-batch method-of-moments estimate of `Sigma_F Sigma_T Sigma_F`.
pub fn mom_m_hat(data: &MetaTrainSet) -> Result<MomEstimate> {
    let mut n1 = data.n1;
    let dropped = n1 % 2 == 1;
    if dropped {
        n1 -= 1;
        log::warn!("n1 = {} is odd; dropping the last sample of every task", data.n1);
    }
    if n1 < 2 {
        return validation(format!("MoM needs at least 2 samples per task, got n1 = {}", data.n1));
    }
    let half = n1 / 2;
    let t = data.num_tasks();
    let d = data.d();
    let parts: Vec<DMatrix<f64>> = (0..t)
        .into_par_iter()
        .map(|i| {
            let b1 = label_weighted_mean(data, i, 0, half);
            let b2 = label_weighted_mean(data, i, half, half);
            &b1 * b2.transpose()
        })
        .collect();
    // fixed task order for the reduction
    let mut acc = DMatrix::zeros(d, d);
    for p in &parts {
        acc += p;
    }
    let m_hat = (&acc + acc.transpose()) / (2.0 * t as f64);
    Ok(MomEstimate {
        m_hat,
        n1,
        num_tasks: t,
        dropped_last_sample: dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskAverage {
    /// `d x T`, column `i` is `b_i`.
    pub b_hat: DMatrix<f64>,
    /// Top-`s` left singular subspace of `b_hat`.
    pub subspace: Subspace,
}

/// Per-task label-weighted means.
pub fn b_hat(data: &MetaTrainSet) -> DMatrix<f64> {
    let t = data.num_tasks();
    let cols: Vec<DVector<f64>> = (0..t)
        .into_par_iter()
        .map(|i| label_weighted_mean(data, i, 0, data.n1))
        .collect();
    DMatrix::from_columns(&cols)
}

pub fn task_average_b_hat(data: &MetaTrainSet, s: usize) -> Result<TaskAverage> {
    let t = data.num_tasks();
    if s == 0 || s > t || s > data.d() {
        return validation(format!("subspace rank s = {s} needs 1 <= s <= min(T = {t}, d = {})", data.d()));
    }
    let b = b_hat(data);
    let (_, vecs) = eig_sym(&symmetrize(&(&b * b.transpose())))?;
    let subspace = Subspace::new(vecs.columns(0, s).into_owned())?;
    Ok(TaskAverage { b_hat: b, subspace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GHat {
    /// `(1/T) B_hat B_hat^T`.
    pub raw: DMatrix<f64>,
    /// `(raw - mean(y^2) Sigma_F_hat / n1) / (1 + 1/n1)`.
    pub debiased: DMatrix<f64>,
}

/// Uses `E[G_hat] = (1 + 1/n1) M + (1/n1) E[y^2] Sigma_F` with
/// `E[y^2] = tr(Sigma_T Sigma_F) + sigma^2`.
pub fn g_hat(data: &MetaTrainSet) -> Result<GHat> {
    let t = data.num_tasks() as f64;
    let n1 = data.n1 as f64;
    let b = b_hat(data);
    let raw = symmetrize(&(&b * b.transpose() / t));
    let y2 = data.labels.norm_squared() / data.total_samples() as f64;
    let sf = sigma_f_hat(data)?;
    let debiased = (&raw - sf.matrix() * (y2 / n1)) / (1.0 + 1.0 / n1);
    Ok(GHat { raw, debiased })
}

/// Sine of the largest principal angle between the top-`r` eigenspaces of
/// `est` and `target`.
pub fn dk_angle(est: &DMatrix<f64>, target: &CovarianceModel, r: usize) -> Result<f64> {
    let d = target.dim();
    if r == 0 || r >= d {
        return validation(format!("need 1 <= r < d (r = {r}, d = {d})"));
    }
    let vals = target.eigvals();
    let gap = vals[r - 1] - vals[r];
    if gap <= 1e-12 * vals[0].abs().max(1.0) {
        return validation(format!("target has no eigengap at r = {r}"));
    }
    let (_, vecs) = eig_sym(&symmetrize(est))?;
    let u = Subspace::new(vecs.columns(0, r).into_owned())?;
    principal_angle_sin(&u, &target.top_subspace(r)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentScores {
    /// `<Sigma_F, St> / (||Sigma_F||_F ||St||_F)`.
    pub canonical_feature: f64,
    /// `tr(St) / (sqrt(d) ||St||_F)`.
    pub canonical_identity: f64,
}

pub fn alignment_scores(sigma_f: &CovarianceModel, sigma_ttil: &CovarianceModel) -> Result<AlignmentScores> {
    if sigma_f.dim() != sigma_ttil.dim() {
        return validation("covariances must share a dimension");
    }
    let nf = sigma_f.matrix().norm();
    let nt = sigma_ttil.matrix().norm();
    if nf == 0.0 || nt == 0.0 {
        return validation("alignment is undefined for a zero matrix");
    }
    Ok(AlignmentScores {
        canonical_feature: frob_inner(sigma_f.matrix(), sigma_ttil.matrix()) / (nf * nt),
        canonical_identity: sigma_ttil.trace() / ((sigma_f.dim() as f64).sqrt() * nt),
    })
}

/// `|<Sigma_F, St> - tr(Sigma_F Sigma_T Sigma_F)|` where `St` is the canonical
/// task covariance built from `sigma_t`.
pub fn trace_identity_gap(sigma_f: &CovarianceModel, sigma_t: &CovarianceModel) -> Result<f64> {
    let ttil = crate::risk::canonical_cov(sigma_f, sigma_t)?;
    let m = sigma_f.matrix() * sigma_t.matrix() * sigma_f.matrix();
    Ok((frob_inner(sigma_f.matrix(), ttil.matrix()) - m.trace()).abs())
}
