//! Thin-plate regression spline (TPRS) bases over 2-D coordinates.
//!
//! The basis is the eigen-truncated form of the full thin-plate spline: the
//! radial part `E_ij = η(‖s_i − s_j‖)` is projected onto the complement of the
//! affine polynomials, eigendecomposed, and the leading `m − 3` directions
//! are kept. A wiggly basis function is `f_j(s) = Σ_i W_ij η(‖s − s_i‖)` where
//! `W = N Γ-eigenvectors` (the "transfer" matrix), so evaluation at new points
//! and at the training points share one formula.

use nalgebra::{DMatrix, DVector, QR};

use crate::error::{input, Error, Result};
use crate::linalg::{check_finite, orthogonal_complement, sym_eigen_desc};

/// Number of unpenalized polynomial columns (constant, s₁, s₂).
pub const NULL_DIM: usize = 3;

/// Radial function `r² log r`, with the conventional constant folded into λ.
#[inline]
pub fn tps_radial(r: f64) -> f64 {
    if r > 0.0 {
        r * r * r.ln()
    } else {
        0.0
    }
}

#[inline]
fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// A fitted TPRS basis: `B` (n × m), penalty `Q` (m × m) and the state
/// required to evaluate the basis elsewhere.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    coords: DMatrix<f64>,
    basis: DMatrix<f64>,
    penalty: DMatrix<f64>,
    transfer: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl SplineBasis {
    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }
    /// `B`, the basis evaluated at the training coordinates.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }
    /// `Q`, zero on the polynomial block and `diag(Γ)` on the wiggly block.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }
    /// Representer weights mapping wiggly coefficients to radial weights.
    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }
    /// Retained eigenvalues `Γ`, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }
}

fn check_coords(coords: &DMatrix<f64>) -> Result<()> {
    if coords.ncols() != 2 {
        return input(format!("coordinates must have 2 columns, got {}", coords.ncols()));
    }
    check_finite(coords, "coordinates")
}

/// Builds a rank-`m` TPRS basis at `coords` (n × 2).
pub fn build_tprs(coords: &DMatrix<f64>, m: usize) -> Result<SplineBasis> {
    check_coords(coords)?;
    let n = coords.nrows();
    if m < NULL_DIM + 1 {
        return input(format!("basis dimension must be at least 4, got {m}"));
    }
    if m > n {
        return input(format!("basis dimension {m} exceeds the number of locations {n}"));
    }
    let pts: Vec<(f64, f64)> = (0..n).map(|i| (coords[(i, 0)], coords[(i, 1)])).collect();

    let mut e = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = tps_radial(dist(pts[i], pts[j]));
            e[(i, j)] = v;
            e[(j, i)] = v;
        }
    }
    let t = poly_block(coords);
    let null = orthogonal_complement(&t).map_err(|err| match err {
        Error::Rank(_) => Error::Rank("coordinates are collinear; TPRS needs 3 affinely independent locations".into()),
        other => other,
    })?;

    let en = &e * &null;
    let projected = null.transpose() * &en;
    let (vals, vecs) = sym_eigen_desc(&projected);
    let k = m - NULL_DIM;
    let gamma: Vec<f64> = vals.iter().take(k).map(|v| v.max(0.0)).collect();
    let w = vecs.columns(0, k).clone_owned();
    let transfer = &null * &w;
    let wiggly = &en * &w;

    let mut basis = DMatrix::zeros(n, m);
    basis.columns_mut(0, NULL_DIM).copy_from(&t);
    basis.columns_mut(NULL_DIM, k).copy_from(&wiggly);
    let mut penalty = DMatrix::zeros(m, m);
    for (i, g) in gamma.iter().enumerate() {
        penalty[(NULL_DIM + i, NULL_DIM + i)] = *g;
    }
    Ok(SplineBasis {
        coords: coords.clone(),
        basis,
        penalty,
        transfer,
        eigenvalues: gamma,
    })
}

fn poly_block(coords: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(coords.nrows(), NULL_DIM, |i, j| match j {
        0 => 1.0,
        _ => coords[(i, j - 1)],
    })
}

/// Evaluates every basis function at `new_coords` (n* × 2), giving an
/// n* × m matrix.
pub fn eval_basis(basis: &SplineBasis, new_coords: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_coords(new_coords)?;
    let n = basis.n();
    let k = basis.dim() - NULL_DIM;
    let mut radial = DMatrix::zeros(new_coords.nrows(), n);
    for i in 0..n {
        let si = (basis.coords[(i, 0)], basis.coords[(i, 1)]);
        for r in 0..new_coords.nrows() {
            radial[(r, i)] = tps_radial(dist((new_coords[(r, 0)], new_coords[(r, 1)]), si));
        }
    }
    let mut out = DMatrix::zeros(new_coords.nrows(), basis.dim());
    out.columns_mut(0, NULL_DIM).copy_from(&poly_block(new_coords));
    out.columns_mut(NULL_DIM, k).copy_from(&(radial * &basis.transfer));
    Ok(out)
}

/// Smoothing parameter choice for [`smooth_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    /// Minimize generalized cross-validation over [`GCV_GRID_LEN`]
    /// log-spaced values.
    Gcv,
}

pub const GCV_GRID_LEN: usize = 30;

/// Result of a penalized spline fit.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub coef: DVector<f64>,
    pub lambda: f64,
    /// Effective degrees of freedom `tr(H)`.
    pub edf: f64,
    pub rss: f64,
    pub gcv: f64,
}

impl SmoothFit {
    pub fn fitted(&self, basis: &SplineBasis) -> DVector<f64> {
        basis.matrix() * &self.coef
    }
}

/// Precomputed factorization of a basis for repeated penalized fits.
///
/// With `B = Q_b R` and the wiggly block of `R` written `R_w`, the penalty in
/// the rotated coordinates `d = R c` is `d_wᵀ S d_w` with
/// `S = R_w⁻ᵀ Γ R_w⁻¹ = U Λ Uᵀ`. Every λ then costs O(m) to score and
/// O(m²) to solve, and the polynomial directions are never shrunk.
#[derive(Debug, Clone)]
pub struct Smoother {
    basis: SplineBasis,
    fast: Option<Rotated>,
    scale: f64,
}

#[derive(Debug, Clone)]
struct Rotated {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    u: DMatrix<f64>,
    lam: DVector<f64>,
}

impl Smoother {
    pub fn new(basis: SplineBasis) -> Self {
        let bb = basis.matrix().norm_squared();
        let tq: f64 = basis.penalty().diagonal().sum();
        let scale = bb / (tq + 1e-12);
        let fast = Self::rotate(&basis);
        if fast.is_none() {
            log::debug!("spline basis is rank deficient; using direct normal equations");
        }
        Self { basis, fast, scale }
    }

    fn rotate(basis: &SplineBasis) -> Option<Rotated> {
        let m = basis.dim();
        let qr = QR::new(basis.matrix().clone());
        let r = qr.r();
        let rmax = (0..m).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..m).any(|i| r[(i, i)].abs() <= 1e-10 * rmax) {
            return None;
        }
        let k = m - NULL_DIM;
        let rw = r.view((NULL_DIM, NULL_DIM), (k, k)).clone_owned();
        let rw_inv = rw.solve_upper_triangular(&DMatrix::identity(k, k))?;
        let gamma = DMatrix::from_diagonal(&DVector::from_iterator(
            k,
            basis.eigenvalues().iter().copied(),
        ));
        let s = rw_inv.transpose() * gamma * &rw_inv;
        let (lam, u) = sym_eigen_desc(&s);
        let lam = lam.map(|v| v.max(0.0));
        Some(Rotated { q: qr.q(), r, u, lam })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    /// The λ grid searched under [`Lambda::Gcv`].
    pub fn gcv_grid(&self) -> Vec<f64> {
        let (lo, hi) = (1e-6f64.ln(), 1e4f64.ln());
        (0..GCV_GRID_LEN)
            .map(|i| {
                let t = i as f64 / (GCV_GRID_LEN - 1) as f64;
                (lo + t * (hi - lo)).exp() * self.scale
            })
            .collect()
    }

    pub fn fit(&self, y: &DVector<f64>, lambda: Lambda) -> Result<SmoothFit> {
        let n = self.basis.n();
        if y.len() != n {
            return input(format!("response has length {}, basis has {n} rows", y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return input("response contains non-finite values");
        }
        let lam = match lambda {
            Lambda::Fixed(l) if l >= 0.0 && l.is_finite() => l,
            Lambda::Fixed(l) => return input(format!("smoothing parameter must be >= 0, got {l}")),
            Lambda::Gcv => {
                let mut best: Option<(f64, f64)> = None;
                for l in self.gcv_grid() {
                    let score = self.score(y, l)?.2;
                    if score.is_finite() && best.is_none_or(|(_, b)| score < b) {
                        best = Some((l, score));
                    }
                }
                best.map(|(l, _)| l)
                    .ok_or_else(|| Error::Numerical("GCV score undefined on the whole grid".into()))?
            }
        };
        let coef = self.solve(y, lam)?;
        let (rss, edf, gcv) = self.score(y, lam)?;
        Ok(SmoothFit { coef, lambda: lam, edf, rss, gcv })
    }

    /// (RSS, edf, GCV) at a given λ.
    fn score(&self, y: &DVector<f64>, lam: f64) -> Result<(f64, f64, f64)> {
        let n = self.basis.n() as f64;
        let (rss, edf) = match &self.fast {
            Some(rot) => {
                let g = rot.q.tr_mul(y);
                let resid_outside = (y.norm_squared() - g.norm_squared()).max(0.0);
                let h = rot.u.tr_mul(&g.rows(NULL_DIM, rot.lam.len()));
                let mut rss = resid_outside;
                let mut edf = NULL_DIM as f64;
                for (hi, li) in h.iter().zip(rot.lam.iter()) {
                    let shrink = lam * li / (1.0 + lam * li);
                    rss += (hi * shrink).powi(2);
                    edf += 1.0 / (1.0 + lam * li);
                }
                (rss, edf)
            }
            None => {
                let b = self.basis.matrix();
                let btb = b.tr_mul(b);
                let a = &btb + self.basis.penalty() * lam;
                let chol = nalgebra::Cholesky::new(a.clone())
                    .ok_or_else(|| Error::Rank("singular penalized normal equations".into()))?;
                let coef = chol.solve(&b.tr_mul(y));
                let rss = (y - b * coef).norm_squared();
                let edf = chol.solve(&btb).trace();
                (rss, edf)
            }
        };
        let denom = n - edf;
        let gcv = if denom > 1e-8 * n { n * rss / (denom * denom) } else { f64::INFINITY };
        Ok((rss, edf, gcv))
    }

    fn solve(&self, y: &DVector<f64>, lam: f64) -> Result<DVector<f64>> {
        match &self.fast {
            Some(rot) => {
                let mut d = rot.q.tr_mul(y);
                let k = rot.lam.len();
                let h = rot.u.tr_mul(&d.rows(NULL_DIM, k));
                let shrunk = DVector::from_iterator(
                    k,
                    h.iter().zip(rot.lam.iter()).map(|(hi, li)| hi / (1.0 + lam * li)),
                );
                d.rows_mut(NULL_DIM, k).copy_from(&(&rot.u * shrunk));
                rot.r
                    .solve_upper_triangular(&d)
                    .ok_or_else(|| Error::Numerical("triangular solve failed".into()))
            }
            None => {
                let b = self.basis.matrix();
                let a = b.tr_mul(b) + self.basis.penalty() * lam;
                nalgebra::Cholesky::new(a)
                    .map(|c| c.solve(&b.tr_mul(y)))
                    .ok_or_else(|| Error::Rank("singular penalized normal equations".into()))
            }
        }
    }

    /// Evaluates a fitted spline at new coordinates.
    pub fn predict(&self, fit: &SmoothFit, new_coords: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(eval_basis(&self.basis, new_coords)? * &fit.coef)
    }
}

/// Penalized least squares `argmin ‖y − Bc‖² + λ cᵀQc`.
pub fn smooth_fit(basis: &SplineBasis, y: &DVector<f64>, lambda: Lambda) -> Result<SmoothFit> {
    Smoother::new(basis.clone()).fit(y, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_coords(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn unit_square_corners() {
        let c = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = build_tprs(&c, 4).unwrap();
        assert_eq!(b.matrix().shape(), (4, 4));
        for i in 0..4 {
            assert_eq!(b.matrix()[(i, 0)], 1.0);
            assert_eq!(b.matrix()[(i, 1)], c[(i, 0)]);
            assert_eq!(b.matrix()[(i, 2)], c[(i, 1)]);
        }
    }

    #[test]
    fn rejects_bad_dimensions_and_collinear_points() {
        let c = random_coords(5, 1);
        assert!(matches!(build_tprs(&c, 6), Err(Error::Input(_))));
        assert!(matches!(build_tprs(&c, 3), Err(Error::Input(_))));
        let line = DMatrix::from_fn(6, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        assert!(matches!(build_tprs(&line, 4), Err(Error::Rank(_))));
    }

    #[test]
    fn penalty_structure() {
        let b = build_tprs(&random_coords(30, 2), 12).unwrap();
        let q = b.penalty();
        assert_eq!(q, &q.transpose());
        assert!(q.view((0, 0), (3, 3)).iter().all(|&v| v == 0.0));
        let (vals, _) = crate::linalg::sym_eigen_desc(q);
        assert!(vals.iter().all(|&v| v >= 0.0));
        let beta = DVector::from_fn(12, |i, _| if i < 3 { i as f64 + 1.5 } else { 0.0 });
        assert_eq!(beta.dot(&(q * &beta)), 0.0);
    }

    #[test]
    fn eval_reproduces_training_basis() {
        let c = random_coords(25, 3);
        let b = build_tprs(&c, 10).unwrap();
        let again = eval_basis(&b, &c).unwrap();
        assert!((&again - b.matrix()).amax() < 1e-10);
        let row = eval_basis(&b, &c.rows(7, 1).clone_owned()).unwrap();
        assert!((row.row(0) - b.matrix().row(7)).amax() < 1e-10);
        let far = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 0.5, 0.5]);
        let e = eval_basis(&b, &far).unwrap();
        assert!(e.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interpolates_with_full_basis() {
        let c = random_coords(15, 4);
        let b = build_tprs(&c, 15).unwrap();
        let y = DVector::from_fn(15, |i, _| (i as f64 * 0.7).sin());
        let fit = smooth_fit(&b, &y, Lambda::Fixed(0.0)).unwrap();
        let yhat = fit.fitted(&b);
        assert!((&yhat - &y).norm() <= 1e-6 * y.norm());
    }

    #[test]
    fn huge_lambda_gives_affine_regression() {
        let c = random_coords(40, 5);
        let b = build_tprs(&c, 12).unwrap();
        let y = DVector::from_fn(40, |i, _| (c[(i, 0)] * 6.0).sin() + c[(i, 1)].powi(2));
        let fit = smooth_fit(&b, &y, Lambda::Fixed(1e12)).unwrap();
        // oracle: ordinary least squares on [1, s1, s2]
        let t = poly_block(&c);
        let coef = (t.transpose() * &t).cholesky().unwrap().solve(&(t.transpose() * &y));
        let affine = &t * coef;
        assert!((fit.fitted(&b) - affine).amax() < 1e-4);
    }

    #[test]
    fn gcv_picks_a_grid_value() {
        let c = random_coords(50, 6);
        let b = build_tprs(&c, 20).unwrap();
        let y = DVector::from_fn(50, |i, _| (c[(i, 0)] * 4.0).cos() + 0.1 * ((i * 7 % 11) as f64 - 5.0) / 5.0);
        let sm = Smoother::new(b);
        let fit = sm.fit(&y, Lambda::Gcv).unwrap();
        assert!(sm.gcv_grid().contains(&fit.lambda));
        for l in sm.gcv_grid() {
            let other = sm.fit(&y, Lambda::Fixed(l)).unwrap();
            assert!(fit.gcv <= other.gcv + 1e-12);
        }
        assert!(fit.edf > 3.0 && fit.edf < 20.0);
    }

    #[test]
    fn fast_path_matches_normal_equations() {
        let c = random_coords(30, 8);
        let b = build_tprs(&c, 14).unwrap();
        let y = DVector::from_fn(30, |i, _| c[(i, 0)] * c[(i, 1)] + (i as f64).cos() * 0.1);
        for lam in [0.0, 0.01, 1.0, 100.0] {
            let fit = smooth_fit(&b, &y, Lambda::Fixed(lam)).unwrap();
            let bm = b.matrix();
            let a = bm.transpose() * bm + b.penalty() * lam;
            let direct = a.cholesky().unwrap().solve(&(bm.transpose() * &y));
            assert!((bm * &fit.coef - bm * direct).amax() < 1e-8, "lambda {lam}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(20))]
        #[test]
        fn affine_reproduction_and_monotone_rss(seed in 0u64..10_000, a in -3.0f64..3.0, b1 in -3.0f64..3.0, b2 in -3.0f64..3.0) {
            let c = random_coords(20, seed);
            let basis = build_tprs(&c, 10).unwrap();
            let y = DVector::from_fn(20, |i, _| a + b1 * c[(i, 0)] + b2 * c[(i, 1)]);
            let sm = Smoother::new(basis.clone());
            for lam in [0.0, 1e-3, 1.0, 1e3, 1e8] {
                let fit = sm.fit(&y, Lambda::Fixed(lam)).unwrap();
                proptest::prop_assert!((fit.fitted(&basis) - &y).amax() < 1e-8);
            }
            let wiggly = DVector::from_fn(20, |i, _| (c[(i, 0)] * 9.0).sin() * c[(i, 1)]);
            let mut last = -1.0;
            for lam in [0.0, 1e-4, 1e-2, 1.0, 1e2, 1e4] {
                let rss = sm.fit(&wiggly, Lambda::Fixed(lam)).unwrap().rss;
                proptest::prop_assert!(rss >= last - 1e-10);
                last = rss;
            }
        }
    }
}
