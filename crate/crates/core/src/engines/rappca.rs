//! Closed-form RapPCA component solver.
//!
//! For the residual `Y = 𝒮 𝒟 𝒯ᵀ` (thin SVD) the problem
//!
//! ```text
//! min_{v,α,β} ‖Y − Y v vᵀ‖² + γ ‖Y v − (Kα + Bβ)‖² + λ₁ αᵀ(K+δI)α + λ₂ βᵀ(Q+δI)β,  ‖v‖ = 1
//! ```
//!
//! is reduced, with `q = 𝒯ᵀv`, `Z = [K  B]`, `η = [α; β]` and
//! `P = blockdiag(λ₁(K+δI), λ₂(Q+δI))`, to the leading eigenvector of
//!
//! ```text
//! A = −(γ − 1) 𝒟² + γ² 𝒟 𝒮ᵀ Z (γ ZᵀZ + P)⁻¹ Zᵀ 𝒮 𝒟.
//! ```
//!
//! The ratio `λ₂/λ₁` enters through `P` only; `Z` uses the unshifted `K` and
//! `B`.

use nalgebra::{DMatrix, DVector, SVD};

use super::{check_rank, objective_value, Hyperparams, Method, PCComponent, PCModel, Preprocess};
use crate::data::Dataset;
use crate::error::{input, Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::linalg::{check_finite, orient_largest_positive, solve_spd, sym_eigen_desc, ColumnScaler};
use crate::splines::SplineBasis;

/// Ridge (relative to the trace) used when `λ₁ = λ₂ = 0` and `γ > 0`.
const UNPENALIZED_RIDGE: f64 = 1e-10;

/// The model space `[K  B]` with its penalty blocks, precomputed once per
/// data set and reused across hyperparameter settings.
#[derive(Debug, Clone)]
pub struct ModelSpace {
    k: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    ztz: DMatrix<f64>,
}

impl ModelSpace {
    pub fn new(k: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n {
            return input("kernel matrix must be square");
        }
        if b.nrows() != n {
            return input(format!("basis has {} rows, kernel has {n}", b.nrows()));
        }
        if q.shape() != (b.ncols(), b.ncols()) {
            return input("penalty must be m x m for an n x m basis");
        }
        check_finite(&k, "kernel matrix")?;
        check_finite(&b, "spline basis")?;
        let m = b.ncols();
        let mut z = DMatrix::zeros(n, n + m);
        z.columns_mut(0, n).copy_from(&k);
        z.columns_mut(n, m).copy_from(&b);
        let ztz = z.tr_mul(&z);
        Ok(Self { k, b, q, ztz })
    }

    /// Builds `K` from covariates (already standardized) and takes `B`, `Q`
    /// from the basis. Without covariates `K` is the kernel of empty vectors.
    pub fn from_parts(kernel: &KernelSpec, x_std: Option<&DMatrix<f64>>, basis: &SplineBasis) -> Result<Self> {
        let n = basis.n();
        let x = x_std.cloned().unwrap_or_else(|| DMatrix::zeros(n, 0));
        if x.nrows() != n {
            return input(format!("covariates have {} rows, basis has {n}", x.nrows()));
        }
        Self::new(kernel_matrix(kernel, &x)?, basis.matrix().clone(), basis.penalty().clone())
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `Zᵀ w` without materializing `Z`.
    fn zt_mul(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n + m, w.ncols());
        out.rows_mut(0, n).copy_from(&self.k.tr_mul(w));
        out.rows_mut(n, m).copy_from(&self.b.tr_mul(w));
        out
    }

    /// `γ ZᵀZ + P` (plus a tiny ridge when unpenalized).
    fn system(&self, h: &Hyperparams) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut g = &self.ztz * h.gamma;
        if h.lambda1 > 0.0 {
            let mut kb = g.view_mut((0, 0), (n, n));
            kb += &self.k * h.lambda1;
            for i in 0..n {
                g[(i, i)] += h.lambda1 * h.delta;
            }
        }
        if h.lambda2 > 0.0 {
            let mut qb = g.view_mut((n, n), (m, m));
            qb += &self.q * h.lambda2;
            for i in 0..m {
                g[(n + i, n + i)] += h.lambda2 * h.delta;
            }
        }
        if h.lambda1 == 0.0 && h.lambda2 == 0.0 {
            let ridge = UNPENALIZED_RIDGE * g.trace().max(f64::MIN_POSITIVE);
            for i in 0..(n + m) {
                g[(i, i)] += ridge;
            }
        }
        g
    }
}

/// Solves one RapPCA component on the residual `y_l` (n × p).
pub fn rappca_solve_component(
    y_l: &DMatrix<f64>,
    space: &ModelSpace,
    hyper: &Hyperparams,
) -> Result<PCComponent> {
    hyper.validate()?;
    check_finite(y_l, "residual")?;
    let (n, p) = y_l.shape();
    if n != space.n() {
        return input(format!("residual has {n} rows, model space has {}", space.n()));
    }
    if n == 0 || p == 0 {
        return input("residual is empty");
    }
    let svd = SVD::new(y_l.clone(), true, true);
    let (s, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD failed on residual".into())),
    };
    let d = svd.singular_values;
    let k = d.len();
    let m = space.m();

    let (q, eta) = if hyper.gamma == 0.0 {
        let mut q = DVector::zeros(k);
        q[0] = 1.0;
        (q, DVector::zeros(n + m))
    } else {
        let sd = &s * DMatrix::from_diagonal(&d);
        let w = space.zt_mul(&sd);
        let g = space.system(hyper);
        let x = solve_spd(&g, &w)?;
        let mut a = w.tr_mul(&x) * (hyper.gamma * hyper.gamma);
        for i in 0..k {
            a[(i, i)] -= (hyper.gamma - 1.0) * d[i] * d[i];
        }
        let (vals, vecs) = sym_eigen_desc(&a);
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite eigenvalues in reduced problem".into()));
        }
        let q = vecs.column(0).clone_owned();
        let eta = &x * &q * hyper.gamma;
        (q, eta)
    };

    let mut v = vt.tr_mul(&q);
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(Error::Numerical("degenerate loading".into()));
    }
    v /= norm;
    let eta = eta / norm;
    let mut alpha = eta.rows(0, n).clone_owned();
    let mut beta = eta.rows(n, m).clone_owned();
    if orient_largest_positive(&mut v) {
        alpha.neg_mut();
        beta.neg_mut();
    }
    let u = y_l * &v;
    let objective = objective_value(y_l, &v, &alpha, &beta, &space.k, &space.b, &space.q, hyper)?;
    Ok(PCComponent { v, u, alpha, beta, hyper: *hyper, objective })
}

/// Sequential RapPCA: solve, score `ũ = Y⁽ˡ⁾ṽ`, deflate `Y⁽ˡ⁺¹⁾ = Y⁽ˡ⁾ − ũṽᵀ`.
///
/// Outcomes are standardized and covariates centered/scaled with the
/// training statistics before `K` is formed; `basis` must be built on
/// `data.coords`.
pub fn rappca_fit(
    data: &Dataset,
    kernel: KernelSpec,
    basis: &SplineBasis,
    hypers: &[Hyperparams],
    r: usize,
) -> Result<PCModel> {
    check_rank(r, data.n(), data.p())?;
    if hypers.len() != r {
        return input(format!("need {r} hyperparameter sets, got {}", hypers.len()));
    }
    if basis.n() != data.n() {
        return input("spline basis was built on a different set of locations");
    }
    let y_scaler = Preprocess::Standardize.scaler(&data.outcomes)?;
    let y_std = y_scaler.apply(&data.outcomes)?;
    let x_scaler = data.covariates.as_ref().map(ColumnScaler::fit_lenient);
    let x_std = match (&data.covariates, &x_scaler) {
        (Some(x), Some(s)) => Some(s.apply(x)?),
        _ => None,
    };
    let space = ModelSpace::from_parts(&kernel, x_std.as_ref(), basis)?;
    let comps = rappca_components(&y_std, &space, hypers)?;
    let mut model = PCModel::assemble(Method::RapPca, comps, &y_std, y_scaler);
    model.x_scaler = x_scaler;
    model.kernel = Some(kernel);
    model.basis = Some(basis.clone());
    Ok(model)
}

/// Sequential extraction on a prepared matrix and model space.
pub(crate) fn rappca_components(
    y: &DMatrix<f64>,
    space: &ModelSpace,
    hypers: &[Hyperparams],
) -> Result<Vec<PCComponent>> {
    let mut resid = y.clone();
    let mut out = Vec::with_capacity(hypers.len());
    for h in hypers {
        let c = rappca_solve_component(&resid, space, h)?;
        resid -= &c.u * c.v.transpose();
        out.push(c);
    }
    Ok(out)
}
