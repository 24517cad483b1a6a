//! Independent oracles and fixtures for tests. Depends only on `nalgebra` and
//! `rand` so integration test targets can include it by path.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Uniform points on the unit square.
pub fn random_coords(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>())
}

pub fn random_unit(k: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    v.normalize()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvalues
/// descending, eigenvectors in columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 * a.norm_squared().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let vals = DVector::from_fn(n, |i, _| a[(idx[i], idx[i])]);
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    (vals, vecs)
}

/// Penalized problem data for [`alternating_oracle`]:
/// `[gamma, lambda1, lambda2, delta]`.
pub type Weights = [f64; 4];

/// Direct evaluation of the four-term objective.
pub fn direct_objective(
    y: &DMatrix<f64>,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    w: Weights,
    v: &DVector<f64>,
    eta: &DVector<f64>,
) -> f64 {
    let n = k.nrows();
    let m = b.ncols();
    let alpha = eta.rows(0, n);
    let beta = eta.rows(n, m);
    let u = y * v;
    let mut rep = 0.0;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            rep += (y[(i, j)] - u[i] * v[j]).powi(2);
        }
    }
    let pred = (&u - k * alpha - b * beta).norm_squared();
    let pk = (alpha.transpose() * k * alpha)[0] + w[3] * alpha.norm_squared();
    let pq = (beta.transpose() * q * beta)[0] + w[3] * beta.norm_squared();
    rep + w[0] * pred + w[1] * pk + w[2] * pq
}

/// `argmin_{‖v‖=1} vᵀMv − 2bᵀv` for symmetric `M` given by its
/// eigendecomposition, via the secular equation `Σ b̃ᵢ²/(λᵢ − μ)² = 1`
/// with `μ ≤ λ_min`.
fn sphere_quadratic_min(vals: &DVector<f64>, vecs: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = vals.len();
    let bt = vecs.tr_mul(b);
    let lmin = vals[p - 1];
    let norm2 = |mu: f64| -> f64 { (0..p).map(|i| (bt[i] / (vals[i] - mu)).powi(2)).sum() };
    let scale = bt.norm().max(1e-300);
    let tiny = 1e-14 * (1.0 + lmin.abs() + scale);
    if bt[p - 1].abs() <= 1e-12 * scale && norm2(lmin - tiny) <= 1.0 {
        // hard case: fill the bottom eigendirection
        let mut c = DVector::zeros(p);
        let mut s = 0.0;
        for i in 0..p - 1 {
            if vals[i] - lmin > tiny {
                c[i] = bt[i] / (vals[i] - lmin);
                s += c[i] * c[i];
            }
        }
        c[p - 1] = (1.0 - s).max(0.0).sqrt();
        return vecs * c;
    }
    let mut hi = lmin - tiny;
    let mut lo = lmin - scale - 1.0;
    while norm2(lo) > 1.0 {
        lo -= 2.0 * (lmin - lo);
    }
    // safeguarded Newton on φ(μ) = 1/‖c(μ)‖ − 1, which falls to −1 at λ_min
    let mut mu = lo;
    for _ in 0..200 {
        let n2 = norm2(mu);
        let phi = 1.0 / n2.sqrt() - 1.0;
        if phi.abs() < 1e-15 {
            break;
        }
        if phi > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let dn2: f64 = (0..p).map(|i| 2.0 * bt[i] * bt[i] / (vals[i] - mu).powi(3)).sum();
        let dphi = -0.5 * dn2 / (n2 * n2.sqrt());
        let next = mu - phi / dphi;
        mu = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * (1.0 + mu.abs()) {
            break;
        }
    }
    let c = DVector::from_fn(p, |i, _| bt[i] / (vals[i] - mu));
    (vecs * c).normalize()
}

/// Best objective over `restarts` runs of alternating minimization from
/// random unit loadings: the `η` step is a ridge solve, the `v` step an
/// exact minimization over the unit sphere.
pub fn alternating_oracle(
    y: &DMatrix<f64>,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    w: Weights,
    restarts: usize,
    seed: u64,
) -> f64 {
    let (n, p) = y.shape();
    let m = b.ncols();
    let [gamma, l1, l2, delta] = w;
    let mut z = DMatrix::zeros(n, n + m);
    z.columns_mut(0, n).copy_from(k);
    z.columns_mut(n, m).copy_from(b);
    let mut h = z.transpose() * &z * gamma;
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] += l1 * k[(i, j)];
        }
        h[(i, i)] += l1 * delta;
    }
    for i in 0..m {
        for j in 0..m {
            h[(n + i, n + j)] += l2 * q[(i, j)];
        }
        h[(n + i, n + i)] += l2 * delta;
    }
    // η(v) = γ H⁻¹ Zᵀ Y v
    let rhs = z.transpose() * y * gamma;
    let lmap = h.lu().solve(&rhs).expect("oracle ridge system is singular");
    // v ↦ b = γ Yᵀ Z η(v)
    let bmap = y.transpose() * &z * gamma * &lmap;
    let mmat = y.transpose() * y * (gamma - 1.0);
    let (vals, vecs) = jacobi_eigen(&mmat);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        for _ in 0..300 {
            let nv = sphere_quadratic_min(&vals, &vecs, &(&bmap * &v));
            let step = (&nv - &v).norm();
            v = nv;
            if step < 1e-10 {
                break;
            }
        }
        let eta = &lmap * &v;
        best = best.min(direct_objective(y, k, b, q, w, &v, &eta));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_reconstructs() {
        let a = random_matrix(5, 5, 1);
        let s = &a + a.transpose();
        let (vals, vecs) = jacobi_eigen(&s);
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((back - &s).amax() < 1e-10);
        assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sphere_min_beats_sampling() {
        let a = random_matrix(3, 3, 4);
        let mm = &a + a.transpose();
        let b = DVector::from_vec(vec![0.3, -1.0, 0.2]);
        let (vals, vecs) = jacobi_eigen(&mm);
        let v = sphere_quadratic_min(&vals, &vecs, &b);
        let f = |x: &DVector<f64>| x.dot(&(&mm * x)) - 2.0 * b.dot(x);
        assert!((v.norm() - 1.0).abs() < 1e-10);
        for s in 0..5000 {
            assert!(f(&v) <= f(&random_unit(3, s)) + 1e-10);
        }
    }
}
