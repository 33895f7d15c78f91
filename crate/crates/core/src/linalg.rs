//! Dense linear-algebra primitives shared by every other module.
//!
//! Everything is built on `nalgebra` dense matrices. Eigendecompositions are
//! returned sorted nonincreasing, with a deterministic ordering inside
//! groups of tied eigenvalues and a deterministic sign per eigenvector, so
//! that principal bases are reproducible across runs.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{validation, Error, Result};
use crate::rng::RngStream;

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues in `[-EIG_CLIP_TOL, 0)` are clipped to zero; more negative is an error.
pub const EIG_CLIP_TOL: f64 = 1e-10;
/// Singular values below `PINV_RTOL * sigma_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

fn max_abs(mat: &DMatrix<f64>) -> f64 {
    mat.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn check_square(mat: &DMatrix<f64>) -> Result<()> {
    if mat.nrows() != mat.ncols() {
        return validation(format!(
            "expected a square matrix, got {}x{}",
            mat.nrows(),
            mat.ncols()
        ));
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return validation("matrix has non-finite entries");
    }
    Ok(())
}

fn check_symmetric(mat: &DMatrix<f64>) -> Result<()> {
    check_square(mat)?;
    let scale = max_abs(mat).max(1.0);
    let n = mat.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let gap = (mat[(i, j)] - mat[(j, i)]).abs();
            if gap > SYMMETRY_TOL * scale {
                return validation(format!(
                    "matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {gap:.3e}"
                ));
            }
        }
    }
    Ok(())
}

/// `(A + A^T) / 2`.
pub fn symmetrize(mat: &DMatrix<f64>) -> DMatrix<f64> {
    (mat + mat.transpose()) * 0.5
}

fn argmax_abs(col: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() + 1e-12 {
            best = i;
        }
    }
    best
}

/// Symmetric eigendecomposition, eigenvalues nonincreasing.
///
/// Ties (eigenvalues within `1e-12` relative of each other) are ordered by the
/// coordinate index carrying each eigenvector's largest component, and every
/// eigenvector is signed so that component is positive.
pub fn eig_sym(mat: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(mat)?;
    let n = mat.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = symmetrize(mat).symmetric_eigen();
    let mut cols: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = argmax_abs(&v);
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));

    let tie = 1e-12 * cols.iter().fold(1.0_f64, |m, c| m.max(c.0.abs()));
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (cols[end - 1].0 - cols[end].0).abs() <= tie {
            end += 1;
        }
        cols[start..end].sort_by_key(|c| argmax_abs(&c.1));
        start = end;
    }

    let vals = DVector::from_iterator(n, cols.iter().map(|c| c.0));
    let vecs = DMatrix::from_fn(n, n, |i, k| cols[k].1[i]);
    Ok((vals, vecs))
}

/// Largest singular value.
pub fn op_norm(mat: &DMatrix<f64>) -> f64 {
    if mat.is_empty() {
        return 0.0;
    }
    mat.singular_values().iter().fold(0.0_f64, |m, v| m.max(*v))
}

/// Operator norm of a symmetric matrix via its eigenvalues.
pub fn sym_op_norm(mat: &DMatrix<f64>) -> f64 {
    if mat.is_empty() {
        return 0.0;
    }
    symmetrize(mat)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Frobenius inner product `<A, B> = tr(A^T B)`.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// A symmetric positive-semidefinite matrix with its cached eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    matrix: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&matrix)?;
        let matrix = symmetrize(&matrix);
        let (mut eigvals, eigvecs) = eig_sym(&matrix)?;
        let scale = eigvals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for v in eigvals.iter_mut() {
            if *v < 0.0 {
                if *v < -EIG_CLIP_TOL * scale {
                    return validation(format!(
                        "matrix is not positive semidefinite (eigenvalue {v:.3e})"
                    ));
                }
                *v = 0.0;
            }
        }
        Ok(Self {
            matrix,
            eigvals,
            eigvecs,
        })
    }

    /// Projects an arbitrary symmetric matrix onto the PSD cone by zeroing its
    /// negative eigenvalues. Used for plug-in estimates such as `M_hat`.
    pub fn from_symmetric_clipped(matrix: &DMatrix<f64>) -> Result<Self> {
        let (vals, vecs) = eig_sym(matrix)?;
        let clipped = vals.map(|v| v.max(0.0));
        let rebuilt = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
        Self::new(symmetrize(&rebuilt))
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return validation("diagonal covariance entries must be finite and nonnegative");
        }
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is a valid covariance")
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(DMatrix::zeros(d, d)).expect("zero matrix is a valid covariance")
    }

    /// `diag(value_high * I_{count_high}, value_low * I_{count_low})`.
    pub fn bilevel(count_high: usize, value_high: f64, count_low: usize, value_low: f64) -> Result<Self> {
        let mut diag = vec![value_high; count_high];
        diag.extend(std::iter::repeat_n(value_low, count_low));
        Self::from_diag(&diag)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn op_norm(&self) -> f64 {
        self.eigvals.iter().fold(0.0_f64, |m, v| m.max(*v))
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }

    /// `V diag(f(lambda)) V^T`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped = self.eigvals.map(f);
        let m = &self.eigvecs * DMatrix::from_diagonal(&mapped) * self.eigvecs.transpose();
        symmetrize(&m)
    }

    /// Inverse square root; fails when the smallest eigenvalue is not positive.
    pub fn inv_sqrt(&self) -> Result<DMatrix<f64>> {
        let min = self.eigvals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if self.dim() > 0 && min <= 1e-12 * self.op_norm().max(1e-300) {
            return validation(format!(
                "covariance is singular (smallest eigenvalue {min:.3e})"
            ));
        }
        Ok(self.spectral_map(|v| 1.0 / v.sqrt()))
    }

    /// Sampling factor `L = V diag(sqrt(lambda))`, so `L L^T = matrix`.
    pub fn factor(&self) -> DMatrix<f64> {
        let mut l = self.eigvecs.clone();
        for (k, mut col) in l.column_iter_mut().enumerate() {
            col *= self.eigvals[k].sqrt();
        }
        l
    }

    /// The top-`r` principal subspace.
    pub fn top_subspace(&self, r: usize) -> Result<Subspace> {
        if r == 0 || r > self.dim() {
            return validation(format!("subspace rank {r} outside 1..={}", self.dim()));
        }
        Subspace::new(self.eigvecs.columns(0, r).into_owned())
    }

    pub fn spectrum_summary(&self) -> SpectrumSummary {
        SpectrumSummary::from_eigvals(self.eigvals.as_slice())
    }
}

/// A subspace given by an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let r = basis.ncols();
        if r == 0 || r > basis.nrows() {
            return validation(format!(
                "subspace basis must be d x r with 1 <= r <= d, got {}x{r}",
                basis.nrows()
            ));
        }
        let gram = basis.transpose() * &basis;
        let err = (&gram - DMatrix::identity(r, r)).abs().max();
        if err > 1e-8 {
            return validation(format!("basis columns are not orthonormal (error {err:.3e})"));
        }
        Ok(Self { basis })
    }

    /// Orthonormalizes the columns of `span` (which must be full column rank).
    pub fn from_span(span: &DMatrix<f64>) -> Result<Self> {
        let svd = span.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let r = span.ncols();
        let smax = svd.singular_values.max();
        if svd.singular_values.iter().any(|s| *s <= 1e-12 * smax) || smax == 0.0 {
            return validation("spanning set is rank deficient");
        }
        Self::new(u.columns(0, r).into_owned())
    }

    pub fn dim_ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
}

/// Scalar summaries of a PSD spectrum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectrumSummary {
    pub trace: f64,
    pub op_norm: f64,
    /// `trace / op_norm`; zero for the zero matrix.
    pub effective_rank: f64,
    /// Smallest `s` in `1..=d` with `s / d >= lambda_{s+1}` (`lambda_{d+1} = 0`).
    pub approx_rank_s: usize,
}

impl SpectrumSummary {
    /// `eigvals` must be sorted nonincreasing.
    pub fn from_eigvals(eigvals: &[f64]) -> Self {
        let d = eigvals.len();
        let trace: f64 = eigvals.iter().sum();
        let op_norm = eigvals.iter().fold(0.0_f64, |m, v| m.max(*v));
        let effective_rank = if op_norm > 0.0 { trace / op_norm } else { 0.0 };
        let approx_rank_s = (1..=d)
            .find(|&s| {
                let next = eigvals.get(s).copied().unwrap_or(0.0);
                s as f64 / d as f64 >= next
            })
            .unwrap_or(d.max(1));
        Self {
            trace,
            op_norm,
            effective_rank,
            approx_rank_s,
        }
    }
}

/// Symmetric PSD square root.
pub fn sqrt_spd(cov: &CovarianceModel) -> DMatrix<f64> {
    cov.spectral_map(f64::sqrt)
}

/// Minimum-norm least-squares solution `A^+ y` via SVD, truncating singular
/// values below `1e-12 * sigma_max`.
pub fn min_norm_solve(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != y.len() {
        return validation(format!(
            "shape mismatch: A has {} rows, y has length {}",
            a.nrows(),
            y.len()
        ));
    }
    let p = a.ncols();
    if a.is_empty() {
        return Ok(DVector::zeros(p));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(p));
    }
    let cutoff = PINV_RTOL * smax;
    let mut out = DVector::zeros(p);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let coef = u.column(k).dot(y) / s;
            out.axpy(coef, &v_t.row(k).transpose(), 1.0);
        }
    }
    Ok(out)
}

/// Sine of the largest principal angle, `||(I - V V^T) U||_op`.
pub fn principal_angle_sin(u: &Subspace, v: &Subspace) -> Result<f64> {
    if u.rank() != v.rank() || u.dim_ambient() != v.dim_ambient() {
        return validation(format!(
            "subspaces must share rank and ambient dimension ({}x{} vs {}x{})",
            u.dim_ambient(),
            u.rank(),
            v.dim_ambient(),
            v.rank()
        ));
    }
    let ub = u.basis();
    let vb = v.basis();
    let resid = ub - vb * (vb.transpose() * ub);
    Ok(op_norm(&resid).clamp(0.0, 1.0))
}

/// `count` i.i.d. rows from `N(0, cov)`, returned as a `count x d` matrix.
pub fn sample_gaussian(cov: &CovarianceModel, count: usize, stream: RngStream) -> DMatrix<f64> {
    let d = cov.dim();
    let z = standard_normal_matrix(count, d, stream);
    z * cov.factor().transpose()
}

/// `rows x cols` standard normals, filled row by row.
pub fn standard_normal_matrix(rows: usize, cols: usize, stream: RngStream) -> DMatrix<f64> {
    let mut rng = stream.rng();
    let mut z = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    z
}

/// Length-`n` vector of i.i.d. `N(0, sd^2)` draws.
pub fn normal_vector(n: usize, sd: f64, stream: RngStream) -> DVector<f64> {
    let mut rng = stream.rng();
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    })
}

/// Writes a matrix as CSV: header `c0,...,c<cols-1>`, one line per row.
pub fn write_matrix_csv<W: std::io::Write>(mat: &DMatrix<f64>, mut w: W) -> Result<()> {
    let header: Vec<String> = (0..mat.ncols()).map(|k| format!("c{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..mat.nrows() {
        let row: Vec<String> = mat.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads the layout produced by [`write_matrix_csv`]. Lines starting with `#` are skipped.
pub fn read_matrix_csv<R: std::io::BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut lines = r.lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let cols = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (ln, line) in lines.enumerate() {
        let line = line?;
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 1)))?;
        if vals.len() != cols {
            return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", ln + 1, vals.len())));
        }
        data.extend(vals);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        standard_normal_matrix(rows, cols, RngStream::new(seed))
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = random_matrix(4, 3, 77);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("c0,c1,c2\n"));
        assert_eq!(read_matrix_csv(&buf[..]).unwrap(), m);
        assert!(read_matrix_csv("c0,c1\n1,2,3\n".as_bytes()).is_err());
        assert!(read_matrix_csv("".as_bytes()).is_err());
    }

    fn recon(vals: &DVector<f64>, vecs: &DMatrix<f64>) -> DMatrix<f64> {
        vecs * DMatrix::from_diagonal(vals) * vecs.transpose()
    }

    #[test]
    fn eig_identity() {
        let (vals, vecs) = eig_sym(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(vals.as_slice(), &[1.0, 1.0, 1.0]);
        assert_relative_eq!(vecs.transpose() * &vecs, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn eig_diagonal_reorders() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 1.0]));
        let (vals, vecs) = eig_sym(&m).unwrap();
        assert_relative_eq!(vals[0], 1.0);
        assert_relative_eq!(vals[1], 0.1);
        assert_relative_eq!(vecs[(1, 0)].abs(), 1.0);
        assert_relative_eq!(vecs[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn eig_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = eig_sym(&m).unwrap();
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1.0, epsilon = 1e-12);
        let h = 1.0 / 2f64.sqrt();
        assert_relative_eq!(vecs[(0, 0)].abs(), h, epsilon = 1e-12);
        assert_relative_eq!(vecs[(1, 0)].abs(), h, epsilon = 1e-12);
        assert!(vecs[(0, 0)] * vecs[(1, 0)] > 0.0);
        assert!(vecs[(0, 1)] * vecs[(1, 1)] < 0.0);
        assert_relative_eq!(recon(&vals, &vecs), m, epsilon = 1e-12);
    }

    #[test]
    fn eig_ties_follow_coordinate_order() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 1.0, 0.1, 1.0]));
        let (_, vecs) = eig_sym(&m).unwrap();
        let leads: Vec<usize> = (0..4).map(|k| argmax_abs(vecs.column(k).as_slice())).collect();
        assert_eq!(leads, vec![1, 3, 0, 2]);
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(eig_sym(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn covariance_clips_roundoff_and_rejects_indefinite() {
        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-12]));
        let c = CovarianceModel::new(tiny).unwrap();
        assert_eq!(c.eigvals()[1], 0.0);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3]));
        assert!(CovarianceModel::new(bad).is_err());
    }

    #[test]
    fn sqrt_examples() {
        let s = sqrt_spd(&CovarianceModel::identity(4));
        assert_relative_eq!(s, DMatrix::identity(4, 4), epsilon = 1e-12);
        let s = sqrt_spd(&CovarianceModel::from_diag(&[4.0, 9.0]).unwrap());
        assert_relative_eq!(s, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-12);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let cov = CovarianceModel::new(m.clone()).unwrap();
        let s = sqrt_spd(&cov);
        let h = 1.0 / 2f64.sqrt();
        let v = DMatrix::from_row_slice(2, 2, &[h, h, h, -h]);
        let expected = &v * DMatrix::from_diagonal(&DVector::from_vec(vec![3f64.sqrt(), 1.0])) * v.transpose();
        assert_relative_eq!(s, expected, epsilon = 1e-12);
        assert_relative_eq!(&s * &s, m, epsilon = 1e-10);
    }

    #[test]
    fn min_norm_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let x = min_norm_solve(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![2.0, 0.0]), epsilon = 1e-12);

        let x = min_norm_solve(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![3.0, 4.0]), epsilon = 1e-12);

        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = min_norm_solve(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn min_norm_zero_matrix_and_shape_error() {
        let x = min_norm_solve(&DMatrix::zeros(2, 3), &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(x, DVector::zeros(3));
        assert!(min_norm_solve(&DMatrix::zeros(2, 3), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn min_norm_beats_null_space_perturbations() {
        let a = random_matrix(4, 9, 11);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let x = min_norm_solve(&a, &y).unwrap();
        assert!(((&a * &x) - &y).norm() <= 1e-8 * y.norm());
        // null-space projector I - A^+ A
        let svd = a.clone().svd(true, true);
        let v_t = svd.v_t.unwrap();
        let proj_row = v_t.transpose() * &v_t;
        let null_proj = DMatrix::identity(9, 9) - proj_row;
        for k in 0..100 {
            let z = &null_proj * normal_vector(9, 1.0, RngStream::new(k));
            assert!(x.norm() <= (&x + z).norm() + 1e-12);
        }
    }

    #[test]
    fn angle_examples() {
        let e = |d: usize, i: usize| {
            let mut m = DMatrix::zeros(d, 1);
            m[(i, 0)] = 1.0;
            Subspace::new(m).unwrap()
        };
        assert_relative_eq!(principal_angle_sin(&e(3, 0), &e(3, 0)).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(principal_angle_sin(&e(3, 0), &e(3, 1)).unwrap(), 1.0, epsilon = 1e-12);
        let h = 1.0 / 2f64.sqrt();
        let diag = Subspace::new(DMatrix::from_column_slice(2, 1, &[h, h])).unwrap();
        assert_relative_eq!(principal_angle_sin(&e(2, 0), &diag).unwrap(), h, epsilon = 1e-12);
        assert!(principal_angle_sin(&e(3, 0), &Subspace::new(DMatrix::identity(3, 2)).unwrap()).is_err());
    }

    #[test]
    fn gaussian_zero_and_determinism() {
        let x = sample_gaussian(&CovarianceModel::zeros(3), 5, RngStream::new(1));
        assert!(x.iter().all(|v| *v == 0.0));
        let cov = CovarianceModel::from_diag(&[1.0, 2.0, 3.0]).unwrap();
        let a = sample_gaussian(&cov, 10, RngStream::new(42));
        let b = sample_gaussian(&cov, 10, RngStream::new(42));
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_sample_covariance_converges() {
        let d = 5;
        let n = 100_000;
        let x = sample_gaussian(&CovarianceModel::identity(d), n, RngStream::new(3));
        let s = x.transpose() * &x / n as f64;
        assert!(sym_op_norm(&(s - DMatrix::identity(d, d))) < 0.05);
    }

    #[test]
    fn spectrum_summary_values() {
        let s = SpectrumSummary::from_eigvals(&[1.0, 1.0, 0.01, 0.01]);
        assert_relative_eq!(s.trace, 2.02);
        assert_relative_eq!(s.effective_rank, 2.02);
        // s=1: 0.25 >= 1.0? no; s=2: 0.5 >= 0.01 yes
        assert_eq!(s.approx_rank_s, 2);
        let id = SpectrumSummary::from_eigvals(&[1.0; 4]);
        assert_eq!(id.approx_rank_s, 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn interpolation_property(n in 1usize..6, extra in 1usize..6, seed in 0u64..1000) {
            let p = n + extra;
            let a = random_matrix(n, p, seed);
            let y = normal_vector(n, 1.0, RngStream::new(seed).substream("y"));
            let x = min_norm_solve(&a, &y).unwrap();
            prop_assert!(((&a * &x) - &y).norm() <= 1e-8 * y.norm().max(1e-300));
        }

        #[test]
        fn angle_symmetric_and_rotation_invariant(d in 3usize..8, seed in 0u64..1000) {
            let r = 2;
            let u = Subspace::from_span(&random_matrix(d, r, seed)).unwrap();
            let v = Subspace::from_span(&random_matrix(d, r, seed + 7919)).unwrap();
            let a = principal_angle_sin(&u, &v).unwrap();
            let b = principal_angle_sin(&v, &u).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
            let (c, s) = (0.3f64.cos(), 0.3f64.sin());
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let u_rot = Subspace::new(u.basis() * rot).unwrap();
            prop_assert!((principal_angle_sin(&u_rot, &v).unwrap() - a).abs() < 1e-10);
        }

        #[test]
        fn sqrt_commutes(d in 2usize..7, seed in 0u64..1000) {
            let g = random_matrix(d, d, seed);
            let cov = CovarianceModel::new(symmetrize(&(&g * g.transpose()))).unwrap();
            let s = sqrt_spd(&cov);
            let c = cov.matrix();
            prop_assert!((&s * c - c * &s).abs().max() <= 1e-8 * c.abs().max().max(1.0));
            prop_assert!((&s * &s - c).abs().max() <= 1e-8 * c.abs().max().max(1.0));
            let rec = recon(cov.eigvals(), cov.eigvecs());
            prop_assert!((rec - c).abs().max() <= 1e-8 * c.abs().max().max(1.0));
        }
    }
}
