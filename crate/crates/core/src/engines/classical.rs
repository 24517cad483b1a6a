use nalgebra::{DMatrix, SVD};

use super::{check_rank, Hyperparams, Method, PCComponent, PCModel, Preprocess};
use crate::error::{Error, Result};
use crate::linalg::{check_finite, frob2, orient_largest_positive};

/// Leading right-singular vector of `y`, oriented so its largest entry is
/// positive.
pub(crate) fn leading_right_singular(y: &DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
    let svd = SVD::new(y.clone(), false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut v = vt.row(0).transpose();
    orient_largest_positive(&mut v);
    Ok(v)
}

/// Classical PCA by rank-one deflation on an already prepared matrix.
pub fn classical_components(y: &DMatrix<f64>, r: usize) -> Result<Vec<PCComponent>> {
    check_rank(r, y.nrows(), y.ncols())?;
    check_finite(y, "outcomes")?;
    let mut resid = y.clone();
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let v = leading_right_singular(&resid)?;
        let u = &resid * &v;
        resid -= &u * v.transpose();
        out.push(PCComponent {
            objective: frob2(&resid),
            v,
            u,
            alpha: Default::default(),
            beta: Default::default(),
            hyper: Hyperparams::zero(),
        });
    }
    Ok(out)
}

/// Classical PCA: `r` successive rank-one problems
/// `min ‖Y⁽ˡ⁾ − u vᵀ‖²_F` with `‖v‖ = 1`.
pub fn classical_pca_fit(y: &DMatrix<f64>, r: usize, prep: Preprocess) -> Result<PCModel> {
    check_finite(y, "outcomes")?;
    let scaler = prep.scaler(y)?;
    let y_std = scaler.apply(y)?;
    let comps = classical_components(&y_std, r)?;
    Ok(PCModel::assemble(Method::Classical, comps, &y_std, scaler))
}
