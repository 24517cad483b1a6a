//! Covariate kernels for the model-space term `Kα`.

use std::fmt;

use nalgebra::{DMatrix, DVectorView};

use crate::error::{input, Error, Result};

/// Kernel family and its tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KernelSpec {
    /// `k(x, x') = xᵀx'`
    #[default]
    Linear,
    /// `k(x, x') = (1 + xᵀx')^degree`
    Polynomial { degree: u32 },
    /// `k(x, x') = exp(−h ‖x − x'‖²)`
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    /// Builds a spec from a family name and parameter `h` (ignored for the
    /// linear family).
    pub fn from_name(family: &str, h: f64) -> Result<Self> {
        let spec = match family.to_ascii_lowercase().as_str() {
            "linear" => KernelSpec::Linear,
            "polynomial" | "poly" => {
                if !(h >= 1.0 && h.fract() == 0.0 && h <= u32::MAX as f64) {
                    return Err(Error::Parameter(format!(
                        "polynomial kernel degree must be a positive integer, got {h}"
                    )));
                }
                KernelSpec::Polynomial { degree: h as u32 }
            }
            "gaussian" | "rbf" => KernelSpec::Gaussian { bandwidth: h },
            other => return Err(Error::Parameter(format!("unknown kernel family '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree } if degree >= 1 => Ok(()),
            KernelSpec::Polynomial { .. } => {
                Err(Error::Parameter("polynomial kernel degree must be >= 1".into()))
            }
            KernelSpec::Gaussian { bandwidth } if bandwidth > 0.0 && bandwidth.is_finite() => Ok(()),
            KernelSpec::Gaussian { bandwidth } => Err(Error::Parameter(format!(
                "gaussian bandwidth must be positive, got {bandwidth}"
            ))),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }

    /// The tuning parameter `h` (0 for the linear family).
    pub fn param(&self) -> f64 {
        match *self {
            KernelSpec::Linear => 0.0,
            KernelSpec::Polynomial { degree } => degree as f64,
            KernelSpec::Gaussian { bandwidth } => bandwidth,
        }
    }

    /// Same family with a different `h`; the linear family is unchanged.
    pub fn with_param(&self, h: f64) -> Result<Self> {
        match self {
            KernelSpec::Linear => Ok(KernelSpec::Linear),
            _ => KernelSpec::from_name(self.family(), h),
        }
    }

    #[inline]
    fn eval_unchecked(&self, x: DVectorView<'_, f64>, y: DVectorView<'_, f64>) -> f64 {
        match *self {
            KernelSpec::Linear => x.dot(&y),
            KernelSpec::Polynomial { degree } => (1.0 + x.dot(&y)).powi(degree as i32),
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-bandwidth * d2).exp()
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree } => write!(f, "polynomial(h={degree})"),
            KernelSpec::Gaussian { bandwidth } => write!(f, "gaussian(h={bandwidth})"),
        }
    }
}

/// `k(x, x2)` for two covariate vectors.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return input(format!("kernel arguments differ in length: {} vs {}", x.len(), x2.len()));
    }
    if x.is_empty() {
        return input("kernel arguments must have at least one entry");
    }
    if x.iter().chain(x2).any(|v| !v.is_finite()) {
        return input("kernel arguments contain non-finite values");
    }
    spec.validate()?;
    Ok(spec.eval_unchecked(DVectorView::from_slice(x, x.len()), DVectorView::from_slice(x2, x2.len())))
}

/// Gram matrix `K_ij = k(X_i·, X_j·)`. Each unordered pair is evaluated once,
/// so the result is exactly symmetric. A matrix with zero columns is allowed
/// and yields the kernel of empty vectors.
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if x.nrows() == 0 {
        return input("kernel matrix needs at least one row");
    }
    crate::linalg::check_finite(x, "covariates")?;
    let xt = x.transpose();
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = spec.eval_unchecked(xt.column(i).as_view(), xt.column(j).as_view());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross-kernel with entry `(i, j) = k(X_new_i·, X_train_j·)`.
pub fn kernel_cross(
    spec: &KernelSpec,
    x_train: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if x_train.ncols() != x_new.ncols() {
        return input(format!(
            "covariate count mismatch: training has {}, new data has {}",
            x_train.ncols(),
            x_new.ncols()
        ));
    }
    crate::linalg::check_finite(x_new, "new covariates")?;
    let tt = x_train.transpose();
    let nt = x_new.transpose();
    Ok(DMatrix::from_fn(x_new.nrows(), x_train.nrows(), |i, j| {
        spec.eval_unchecked(nt.column(i).as_view(), tt.column(j).as_view())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen_desc;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = KernelSpec::Polynomial { degree: 2 };
        assert_eq!(kernel_eval(&poly, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 144.0);
        let g = KernelSpec::Gaussian { bandwidth: 3.7 };
        assert_eq!(kernel_eval(&g, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
    }

    #[test]
    fn eval_rejects_bad_input() {
        assert!(kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).is_err());
        assert!(kernel_eval(&KernelSpec::Linear, &[f64::NAN], &[1.0]).is_err());
        assert!(KernelSpec::from_name("polynomial", 1.5).is_err());
        assert!(KernelSpec::from_name("gaussian", 0.0).is_err());
        assert!(KernelSpec::from_name("cosine", 1.0).is_err());
    }

    #[test]
    fn single_row_linear() {
        let k = kernel_matrix(&KernelSpec::Linear, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(k, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn gaussian_gram_is_psd() {
        let x = random_matrix(5, 2, 11);
        let k = kernel_matrix(&KernelSpec::Gaussian { bandwidth: 1.0 }, &x).unwrap();
        let (vals, _) = sym_eigen_desc(&k);
        assert!(vals[vals.len() - 1] >= -1e-10);
    }

    #[test]
    fn cross_matches_matrix_and_loop() {
        let x = random_matrix(7, 3, 5);
        for spec in [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 2 },
            KernelSpec::Gaussian { bandwidth: 0.7 },
        ] {
            assert_eq!(kernel_cross(&spec, &x, &x).unwrap(), kernel_matrix(&spec, &x).unwrap());
        }
        let train = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let new = DMatrix::from_element(1, 1, 3.0);
        let c = kernel_cross(&KernelSpec::Linear, &train, &new).unwrap();
        assert_eq!(c.as_slice(), &[3.0, 6.0]);

        // naive double loop oracle
        let xn = random_matrix(4, 3, 9);
        let poly = KernelSpec::Polynomial { degree: 2 };
        let c = kernel_cross(&poly, &x, &xn).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                let mut dot = 0.0;
                for t in 0..3 {
                    dot += xn[(i, t)] * x[(j, t)];
                }
                assert_eq!(c[(i, j)], (1.0 + dot) * (1.0 + dot));
            }
        }
        assert!(kernel_cross(&poly, &x, &random_matrix(2, 2, 1)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn gram_symmetric_and_psd(seed in 0u64..500, n in 1usize..30, d in 1usize..4, fam in 0usize..2) {
            let x = random_matrix(n, d, seed);
            let spec = if fam == 0 { KernelSpec::Linear } else { KernelSpec::Gaussian { bandwidth: 0.5 + seed as f64 / 100.0 } };
            let k = kernel_matrix(&spec, &x).unwrap();
            proptest::prop_assert_eq!(&k, &k.transpose());
            let (vals, _) = sym_eigen_desc(&k);
            let scale = k.norm();
            proptest::prop_assert!(vals[vals.len() - 1] >= -1e-8 * scale);
        }
    }
}
