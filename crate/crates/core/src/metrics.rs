//! Train/test error metrics relating representation and prediction quality.
//! Everything is on the standardized scale of the training data.

use nalgebra::{DMatrix, DVector};

use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `‖Y_tst − Û Vᵀ‖²_F / n*`
    pub tmse: f64,
    /// `‖(Û − U*) Vᵀ‖²_F / n*`
    pub mspe: f64,
    /// `‖Y_tst − U* Vᵀ‖²_F / n*`
    pub msre_tst: f64,
    /// `‖Y_trn − U_trn Vᵀ‖²_F / n`
    pub msre_trn: f64,
    /// `‖û_l − u*_l‖² / n*` per component.
    pub per_pc_mse: Vec<f64>,
    pub n_trn: usize,
    pub n_tst: usize,
}

impl MetricsReport {
    /// Scalar columns in report order.
    pub const SCALARS: [&'static str; 4] = ["tmse", "mspe", "msre_tst", "msre_trn"];

    pub fn scalars(&self) -> [f64; 4] {
        [self.tmse, self.mspe, self.msre_tst, self.msre_trn]
    }

    /// Scalars followed by the per-component MSEs.
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.scalars().to_vec();
        v.extend(&self.per_pc_mse);
        v
    }

    /// Column names matching [`values`](Self::values).
    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = Self::SCALARS.iter().map(|s| s.to_string()).collect();
        v.extend((1..=self.per_pc_mse.len()).map(|l| format!("mse_pc{l}")));
        v
    }
}

pub fn compute_metrics(
    y_tst: &DMatrix<f64>,
    v: &DMatrix<f64>,
    u_hat: &DMatrix<f64>,
    y_trn: &DMatrix<f64>,
    u_trn: &DMatrix<f64>,
) -> Result<MetricsReport> {
    let (nt, p) = y_tst.shape();
    let r = v.ncols();
    let n = y_trn.nrows();
    if v.nrows() != p || y_trn.ncols() != p {
        return input(format!("loadings are {}x{r} but outcomes have {p} columns", v.nrows()));
    }
    if u_hat.shape() != (nt, r) {
        return input(format!("predicted scores must be {nt}x{r}, got {:?}", u_hat.shape()));
    }
    if u_trn.shape() != (n, r) {
        return input(format!("training scores must be {n}x{r}, got {:?}", u_trn.shape()));
    }
    if nt == 0 || n == 0 {
        return input("empty training or test set");
    }
    let u_star = y_tst * v;
    let vt = v.transpose();
    let diff = u_hat - &u_star;
    let ntf = nt as f64;
    Ok(MetricsReport {
        tmse: (y_tst - u_hat * &vt).norm_squared() / ntf,
        mspe: (&diff * &vt).norm_squared() / ntf,
        msre_tst: (y_tst - &u_star * &vt).norm_squared() / ntf,
        msre_trn: (y_trn - u_trn * &vt).norm_squared() / n as f64,
        per_pc_mse: diff.column_iter().map(|c| c.norm_squared() / ntf).collect(),
        n_trn: n,
        n_tst: nt,
    })
}

/// `‖Y⁽ˡ⁾_tst − û vᵀ‖²_F / n*` on the deflated test residual.
pub fn tmse_component(y_l_tst: &DMatrix<f64>, u_hat: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let (nt, p) = y_l_tst.shape();
    if u_hat.len() != nt || v.len() != p {
        return input("tmse_component: dimension mismatch");
    }
    if nt == 0 {
        return input("tmse_component: empty test set");
    }
    Ok((y_l_tst - u_hat * v.transpose()).norm_squared() / nt as f64)
}

/// Column-wise mean and sample standard deviation (n − 1; zero for a single
/// row) of equally shaped rows.
pub fn mean_sd(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = rows.first() else { return (vec![], vec![]) };
    let k = rows.len() as f64;
    let mean: Vec<f64> = (0..first.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / k).collect();
    let sd = (0..first.len())
        .map(|j| {
            if rows.len() < 2 {
                0.0
            } else {
                (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            }
        })
        .collect();
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engines::{classical_pca_fit, Preprocess};
    use crate::testutil::random_matrix;

    fn setup(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let y = random_matrix(20, 5, seed);
        let m = classical_pca_fit(&y, 2, Preprocess::Raw).unwrap();
        let yt = random_matrix(8, 5, seed + 100);
        (y, m.loadings, m.scores, yt)
    }

    #[test]
    fn perfect_prediction() {
        let (y, v, u, yt) = setup(1);
        let ustar = &yt * &v;
        let r = compute_metrics(&yt, &v, &ustar, &y, &u).unwrap();
        assert_eq!(r.mspe, 0.0);
        assert!((r.tmse - r.msre_tst).abs() < 1e-14);
        assert!(r.per_pc_mse.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn pythagorean_decomposition_for_orthonormal_loadings() {
        for s in 0..10 {
            let (y, v, u, yt) = setup(s);
            let uh = random_matrix(8, 2, s + 50);
            let r = compute_metrics(&yt, &v, &uh, &y, &u).unwrap();
            assert!((r.tmse - r.mspe - r.msre_tst).abs() <= 1e-10 * r.tmse);
        }
    }

    #[test]
    fn decomposition_breaks_for_non_orthogonal_loadings() {
        let (y, _, _, yt) = setup(3);
        let mut v = random_matrix(5, 2, 9);
        for mut c in v.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        let u = &y * &v;
        let uh = random_matrix(8, 2, 10);
        let r = compute_metrics(&yt, &v, &uh, &y, &u).unwrap();
        assert!((r.tmse - r.mspe - r.msre_tst).abs() > 1e-8);
    }

    #[test]
    fn identity_loadings() {
        let y = random_matrix(10, 3, 4);
        let yt = random_matrix(6, 3, 5);
        let v = DMatrix::identity(3, 3);
        let uh = random_matrix(6, 3, 6);
        let r = compute_metrics(&yt, &v, &uh, &y, &y).unwrap();
        assert!(r.msre_tst < 1e-28);
        assert!((r.tmse - (&yt - &uh).norm_squared() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn msre_trn_equals_pca_objective() {
        let y = random_matrix(15, 4, 7);
        let m = classical_pca_fit(&y, 2, Preprocess::Raw).unwrap();
        let r = compute_metrics(&y, &m.loadings, &m.scores, &y, &m.scores).unwrap();
        assert!((r.msre_trn - m.components[1].objective / 15.0).abs() < 1e-12);
    }

    #[test]
    fn component_tmse_cases() {
        let y = random_matrix(7, 4, 8);
        let v = DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5]);
        let proj = &y * &v;
        let rep = (&y - &proj * v.transpose()).norm_squared() / 7.0;
        assert!((tmse_component(&y, &proj, &v).unwrap() - rep).abs() < 1e-14);
        let zero = DVector::zeros(7);
        assert!((tmse_component(&y, &zero, &v).unwrap() - y.norm_squared() / 7.0).abs() < 1e-14);
        let uh = random_matrix(7, 1, 9).column(0).clone_owned();
        let mut naive = 0.0;
        for i in 0..7 {
            for j in 0..4 {
                naive += (y[(i, j)] - uh[i] * v[j]).powi(2);
            }
        }
        assert!((tmse_component(&y, &uh, &v).unwrap() - naive / 7.0).abs() < 1e-12);
    }

    #[test]
    fn mean_sd_basic() {
        let (m, s) = mean_sd(&[vec![1.0, 2.0], vec![3.0, 2.0]]);
        assert_eq!(m, vec![2.0, 2.0]);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-15 && s[1] == 0.0);
    }

    #[test]
    fn dimension_checks() {
        let (y, v, u, yt) = setup(2);
        assert!(compute_metrics(&yt, &v, &random_matrix(8, 3, 1), &y, &u).is_err());
    }
}
