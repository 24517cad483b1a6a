use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};

use super::{Hyperparams, PCComponent};
use crate::error::{input, Result};

/// RapPCA objective
/// `‖Y − Y v vᵀ‖²_F + γ‖Y v − (Kα + Bβ)‖² + λ₁αᵀ(K+δI)α + λ₂βᵀ(Q+δI)β`.
///
/// Empty `alpha` / `beta` are read as zero vectors.
#[allow(clippy::too_many_arguments)]
pub fn objective_value(
    y_l: &DMatrix<f64>,
    v: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    hyper: &Hyperparams,
) -> Result<f64> {
    let (n, p) = y_l.shape();
    if v.len() != p {
        return input(format!("loading has length {}, residual has {p} columns", v.len()));
    }
    if (v.norm() - 1.0).abs() > 1e-8 {
        return input(format!("loading must have unit norm, got {}", v.norm()));
    }
    let alpha = if alpha.is_empty() { DVector::zeros(k.ncols()) } else { alpha.clone() };
    let beta = if beta.is_empty() { DVector::zeros(b.ncols()) } else { beta.clone() };
    if k.shape() != (n, alpha.len()) || b.shape() != (n, beta.len()) || q.shape() != (beta.len(), beta.len()) {
        return input("objective arguments have inconsistent shapes");
    }
    let u = y_l * v;
    let representation = (y_l - &u * v.transpose()).norm_squared();
    let fitted = k * &alpha + b * &beta;
    let prediction = (&u - fitted).norm_squared();
    let kernel_pen = alpha.dot(&(k * &alpha)) + hyper.delta * alpha.norm_squared();
    let spline_pen = beta.dot(&(q * &beta)) + hyper.delta * beta.norm_squared();
    let mut f = representation;
    if hyper.gamma != 0.0 {
        f += hyper.gamma * prediction;
    }
    if hyper.lambda1 != 0.0 {
        f += hyper.lambda1 * kernel_pen;
    }
    if hyper.lambda2 != 0.0 {
        f += hyper.lambda2 * spline_pen;
    }
    Ok(f)
}

/// Objective differences along the circle of loadings that share all but
/// the first two entries with a solution.
#[derive(Debug, Clone)]
pub struct PolarCurve {
    /// Angles in `[0, 2π)`, ascending.
    pub theta: Vec<f64>,
    /// `f(v*(θ), α, β) − f(ṽ, α, β)`.
    pub diff: Vec<f64>,
    /// Angle of the solution itself, `atan2(ṽ₁, ṽ₂)` mapped to `[0, 2π)`.
    pub theta_opt: f64,
}

impl PolarCurve {
    pub fn min(&self) -> f64 {
        self.diff.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Number of grid points with a difference at or below `tol`.
    pub fn touches(&self, tol: f64) -> usize {
        self.diff.iter().filter(|&&d| d <= tol).count()
    }
}

/// Perturbs the first two loading entries as `v₁ = ρ sin θ`, `v₂ = ρ cos θ`
/// (`ρ² = 1 − Σ_{j>2} v_j²`), keeping the other entries and `α, β` fixed,
/// and reports the objective change over `grid_size` equally spaced angles.
///
/// The grid is phase-aligned with the solution's own angle, so one grid
/// point reproduces the solution exactly.
#[allow(clippy::too_many_arguments)]
pub fn polar_perturbation_check(
    y_l: &DMatrix<f64>,
    component: &PCComponent,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    hyper: &Hyperparams,
    grid_size: usize,
) -> Result<PolarCurve> {
    let v = &component.v;
    if v.len() < 2 {
        return input("polar check needs at least two outcome columns");
    }
    if grid_size < 8 {
        return input(format!("theta grid must have at least 8 points, got {grid_size}"));
    }
    let tail: f64 = v.iter().skip(2).map(|x| x * x).sum();
    let rho = (1.0 - tail).max(0.0).sqrt();
    let theta_opt = v[0].atan2(v[1]).rem_euclid(TAU);
    let base = objective_value(y_l, v, &component.alpha, &component.beta, k, b, q, hyper)?;

    let mut points: Vec<(f64, f64)> = Vec::with_capacity(grid_size);
    let mut vs = v.clone();
    for i in 0..grid_size {
        let step = TAU * i as f64 / grid_size as f64;
        let theta = (theta_opt + step).rem_euclid(TAU);
        if i == 0 {
            vs.copy_from(v);
        } else {
            vs[0] = rho * theta.sin();
            vs[1] = rho * theta.cos();
        }
        let f = objective_value(y_l, &vs, &component.alpha, &component.beta, k, b, q, hyper)?;
        points.push((theta, f - base));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(PolarCurve {
        theta: points.iter().map(|p| p.0).collect(),
        diff: points.iter().map(|p| p.1).collect(),
        theta_opt,
    })
}
