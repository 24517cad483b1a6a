use nalgebra::{DMatrix, SVD};

use super::{check_rank, classical::leading_right_singular, Hyperparams, Method, PCComponent, PCModel, Preprocess};
use crate::data::Dataset;
use crate::error::{input, Error, Result};
use crate::linalg::{check_finite, orient_largest_positive, ColumnScaler};
use crate::splines::SplineBasis;

/// Relative singular-value cutoff for dropping dependent columns of `Z`.
const SPAN_RTOL: f64 = 1e-10;

/// Orthonormal basis of `col(z)`; dependent directions are dropped.
pub(crate) fn span_basis(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(z, "model-space matrix")?;
    let svd = SVD::new(z.clone(), true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed on model-space matrix".into()))?;
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > SPAN_RTOL * smax && smax > 0.0).collect();
    if keep.is_empty() {
        return input("model-space matrix is zero");
    }
    if keep.len() < z.ncols() {
        log::warn!(
            "model-space matrix has rank {} < {} columns; dependent directions dropped",
            keep.len(),
            z.ncols()
        );
    }
    Ok(u.select_columns(&keep))
}

/// Predictive PCA on a prepared matrix: each score is restricted to
/// `col(z)`.
///
/// Component `l` takes `u = G e` with `e` the leading left-singular vector
/// of `GᵀY⁽ˡ⁾`, `v = Y⁽ˡ⁾ᵀu / ‖·‖`, and deflates `Y⁽ˡ⁺¹⁾ = Y⁽ˡ⁾(I − vvᵀ)`.
/// The stored score is `Y⁽ˡ⁾v` and the objective `uᵀY⁽ˡ⁾Y⁽ˡ⁾ᵀu`.
pub fn predictive_components(y: &DMatrix<f64>, z: &DMatrix<f64>, r: usize) -> Result<Vec<PCComponent>> {
    check_rank(r, y.nrows(), y.ncols())?;
    check_finite(y, "outcomes")?;
    if z.nrows() != y.nrows() {
        return input(format!("model space has {} rows, outcomes have {}", z.nrows(), y.nrows()));
    }
    let g = span_basis(z)?;
    let mut resid = y.clone();
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let gty = g.tr_mul(&resid);
        // leading left-singular vector of GᵀY is the leading right-singular vector of YᵀG
        let e = leading_right_singular(&gty.transpose())?;
        let u_span = &g * e;
        let mut v = resid.tr_mul(&u_span);
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::Numerical("residual is orthogonal to the model space".into()));
        }
        v /= norm;
        orient_largest_positive(&mut v);
        let u = &resid * &v;
        resid -= &u * v.transpose();
        out.push(PCComponent {
            objective: norm * norm,
            v,
            u,
            alpha: Default::default(),
            beta: Default::default(),
            hyper: Hyperparams::zero(),
        });
    }
    Ok(out)
}

/// Predictive PCA with `Z = [X_std, B]`; without covariates `Z = B`.
pub fn predictive_pca_fit(data: &Dataset, basis: &SplineBasis, r: usize) -> Result<PCModel> {
    if basis.n() != data.n() {
        return input("spline basis was built on a different set of locations");
    }
    let y_scaler = Preprocess::Standardize.scaler(&data.outcomes)?;
    let y_std = y_scaler.apply(&data.outcomes)?;
    let x_scaler = data.covariates.as_ref().map(ColumnScaler::fit_lenient);
    let n = data.n();
    let d = data.d();
    let m = basis.dim();
    let mut z = DMatrix::zeros(n, d + m);
    if let (Some(x), Some(s)) = (&data.covariates, &x_scaler) {
        z.columns_mut(0, d).copy_from(&s.apply(x)?);
    }
    z.columns_mut(d, m).copy_from(basis.matrix());
    let comps = predictive_components(&y_std, &z, r)?;
    let mut model = PCModel::assemble(Method::Predictive, comps, &y_std, y_scaler);
    model.x_scaler = x_scaler;
    model.basis = Some(basis.clone());
    Ok(model)
}
