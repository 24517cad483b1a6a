//! Dense linear-algebra helpers shared by the engines, splines and simulators.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{input, Error, Result};

/// Relative threshold below which singular values are treated as zero in
/// pseudo-inverse fallbacks.
pub const PINV_RTOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix follow the same order).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `a x = b` for symmetric positive (semi)definite `a`.
///
/// Uses a Cholesky factorization and falls back to an SVD pseudo-inverse,
/// truncated at `PINV_RTOL` times the largest singular value, when the
/// factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    log::debug!("cholesky failed on {}x{} system, using pseudo-inverse", a.nrows(), a.ncols());
    pinv_solve(a, b)
}

/// Least-squares / minimum-norm solve through a truncated SVD.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !smax.is_finite() {
        return Err(Error::Numerical("non-finite singular values".into()));
    }
    let eps = PINV_RTOL * smax;
    svd.solve(b, eps)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse solve failed: {e}")))
}

/// Orthonormal basis of the orthogonal complement of `col(t)`.
///
/// Built from Householder reflections of `t`, so the returned `n × (n − k)`
/// matrix together with an orthonormal basis of `col(t)` forms an orthogonal
/// matrix. Fails with a rank error when `t` is numerically rank deficient.
pub fn orthogonal_complement(t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = t.shape();
    if k >= n {
        return input(format!("cannot complement {k} columns in dimension {n}"));
    }
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let mut work = t.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x = work.view((j, j), (n - j, 1)).clone_owned();
        let alpha = x.norm();
        if alpha <= 1e-10 * scale {
            return Err(Error::Rank(format!(
                "column {j} is linearly dependent on the preceding columns"
            )));
        }
        let mut v = DVector::from_column_slice(x.as_slice());
        v[0] += alpha.copysign(x[0]);
        let vnorm = v.norm();
        v /= vnorm;
        // work[j.., j..] -= 2 v (vᵀ work[j.., j..])
        let mut block = work.view_mut((j, j), (n - j, k - j));
        let proj = v.transpose() * &block;
        block -= 2.0 * &v * proj;
        reflectors.push(v);
    }
    // Q = H_0 H_1 ... H_{k-1}; the trailing columns of Q are Q e_i for i >= k.
    let mut q = DMatrix::zeros(n, n - k);
    for i in 0..(n - k) {
        q[(k + i, i)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        let mut block = q.view_mut((j, 0), (n - j, n - k));
        let proj = v.transpose() * &block;
        block -= 2.0 * v * proj;
    }
    Ok(q)
}

/// Squared Frobenius norm.
pub fn frob2(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Flips `v` so that its largest-magnitude entry is positive. Returns `true`
/// when the sign was changed. Ties go to the first index.
pub fn orient_largest_positive(v: &mut DVector<f64>) -> bool {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
        true
    } else {
        false
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        input(format!("{what} contains non-finite values"))
    }
}

/// Rows of `m` selected by `idx`, in order.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Entries of `v` selected by `idx`, in order.
pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Per-column centering and scaling statistics, estimated on training data
/// and reused for any later data.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ColumnScaler {
    /// Sample mean and standard deviation (n − 1 denominator) per column.
    /// Zero-variance columns are rejected.
    pub fn fit(m: &DMatrix<f64>, what: &str) -> Result<Self> {
        let n = m.nrows();
        if n < 2 {
            return input(format!("{what}: need at least two rows to standardize"));
        }
        let mut mean = Vec::with_capacity(m.ncols());
        let mut scale = Vec::with_capacity(m.ncols());
        for (j, col) in m.column_iter().enumerate() {
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mu.abs().max(1.0)) {
                return input(format!("{what}: column {j} has zero variance"));
            }
            mean.push(mu);
            scale.push(sd);
        }
        Ok(Self { mean, scale })
    }

    /// Same as [`fit`](Self::fit) but leaves constant columns unscaled
    /// (scale 1) instead of failing.
    pub fn fit_lenient(m: &DMatrix<f64>) -> Self {
        let n = m.nrows().max(1);
        let mut mean = Vec::with_capacity(m.ncols());
        let mut scale = Vec::with_capacity(m.ncols());
        for col in m.column_iter() {
            let mu = col.sum() / n as f64;
            let denom = (n.max(2) - 1) as f64;
            let sd = (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / denom).sqrt();
            mean.push(mu);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    /// No-op statistics for `p` columns.
    pub fn identity(p: usize) -> Self {
        Self { mean: vec![0.0; p], scale: vec![1.0; p] }
    }

    pub fn ncols(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.ncols() {
            return input(format!(
                "expected {} columns, got {}",
                self.ncols(),
                m.ncols()
            ));
        }
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            (m[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }

    pub fn invert(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.ncols() {
            return input(format!(
                "expected {} columns, got {}",
                self.ncols(),
                m.ncols()
            ));
        }
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            m[(i, j)] * self.scale[j] + self.mean[j]
        }))
    }
}
