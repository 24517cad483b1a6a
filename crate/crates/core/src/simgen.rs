//! Simulation scenarios: six latent PCs built from covariate mean functions
//! plus spatially correlated Gaussian noise, mixed into `p` outcomes.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::sym_eigen_desc;
use crate::seed::{self, Rng};

/// Relative tolerance for negative eigenvalues of a covariance matrix.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Three linear-mean PCs and three noise PCs of equal variability.
    EqualContribution = 1,
    /// As scenario 1 with mixing rows of decaying norm.
    UnequalContribution = 2,
    /// Squared and pairwise-interaction mean functions.
    NonLinear = 3,
}

impl Scenario {
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(Scenario::EqualContribution),
            2 => Ok(Scenario::UnequalContribution),
            3 => Ok(Scenario::NonLinear),
            _ => Err(Error::Parameter(format!("scenario must be 1, 2 or 3, got {i}"))),
        }
    }

    pub fn index(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub n_pcs: usize,
    /// PCs `1..=n_predictable` have covariate means and no spatial noise.
    pub n_predictable: usize,
    /// Variance of the i.i.d. outcome noise.
    pub noise_var: f64,
    /// Spatial noise variance of the unpredictable PCs.
    pub pc_noise_var: f64,
    /// Covariance `sill·exp(−‖Δs‖²/range) + (1 − sill)`.
    pub cov_range: f64,
    pub cov_sill: f64,
    /// Scenario-2 row norms of the mixing matrix relative to its mean row
    /// norm; `None` means the linear decay `(n_pcs + 1 − l)/n_pcs`.
    pub row_decay: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::EqualContribution,
            n: 200,
            d: 10,
            p: 15,
            n_pcs: 6,
            n_predictable: 3,
            noise_var: 0.1,
            pc_noise_var: 1.0,
            cov_range: 0.5,
            cov_sill: 0.5,
            row_decay: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self { scenario, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n < 4 || self.d == 0 || self.p == 0 || self.n_pcs == 0 {
            return bad(format!("sizes must be positive with n >= 4 (n={}, d={}, p={}, pcs={})", self.n, self.d, self.p, self.n_pcs));
        }
        if self.n_predictable > self.n_pcs {
            return bad("n_predictable exceeds n_pcs".into());
        }
        if self.scenario == Scenario::NonLinear && self.d < 2 {
            return bad("scenario 3 needs at least two covariates".into());
        }
        for (name, v) in [("noise_var", self.noise_var), ("pc_noise_var", self.pc_noise_var)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        if !(self.cov_range > 0.0) || !(0.0..=1.0).contains(&self.cov_sill) {
            return bad("covariance range must be > 0 and sill in [0, 1]".into());
        }
        if let Some(dec) = &self.row_decay {
            if dec.len() != self.n_pcs || dec.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("row_decay needs {} positive entries", self.n_pcs));
            }
        }
        Ok(())
    }

    /// Mixing-row norm multipliers used in scenario 2.
    pub fn decay(&self) -> Vec<f64> {
        self.row_decay.clone().unwrap_or_else(|| {
            let k = self.n_pcs as f64;
            (1..=self.n_pcs).map(|l| (k + 1.0 - l as f64) / k).collect()
        })
    }
}

/// Ground truth retained alongside a generated data set.
#[derive(Debug, Clone)]
pub struct SimTruth {
    /// n × n_pcs latent scores.
    pub pcs: DMatrix<f64>,
    /// n × n_pcs mean functions `f_l(X)`.
    pub means: DMatrix<f64>,
    /// n_pcs × p mixing matrix `M = Λ M̃`.
    pub mixing: DMatrix<f64>,
    /// n × n spatial covariance.
    pub sigma: DMatrix<f64>,
}

/// `Σ_ii' = sill·exp(−‖s_i − s_i'‖²/range) + (1 − sill)`.
pub fn exp_cov_with(coords: &DMatrix<f64>, range: f64, sill: f64) -> DMatrix<f64> {
    let n = coords.nrows();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = 1.0;
        for j in 0..i {
            let d1 = coords[(i, 0)] - coords[(j, 0)];
            let d2 = coords[(i, 1)] - coords[(j, 1)];
            let v = sill * (-(d1 * d1 + d2 * d2) / range).exp() + (1.0 - sill);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// The simulation covariance with range 0.5 and sill split 0.5/0.5.
pub fn exp_cov(coords: &DMatrix<f64>) -> DMatrix<f64> {
    exp_cov_with(coords, 0.5, 0.5)
}

/// Symmetric square-root factor of a PSD covariance for repeated draws.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if sigma.ncols() != n {
            return Err(Error::Input("covariance must be square".into()));
        }
        let (vals, vecs) = sym_eigen_desc(sigma);
        let top = vals.iter().cloned().fold(0.0, f64::max).max(1.0);
        if vals.iter().any(|&v| v < -PSD_TOL * top) {
            return Err(Error::Numerical(format!(
                "covariance is indefinite (smallest eigenvalue {:e})",
                vals.min()
            )));
        }
        let mut factor = vecs;
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            col *= vals[j].max(0.0).sqrt();
        }
        Ok(Self { factor })
    }

    /// One draw from `Normal(0, variance·Σ)`.
    pub fn draw(&self, variance: f64, rng: &mut Rng) -> DVector<f64> {
        let n = self.factor.nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if variance == 0.0 {
            return DVector::zeros(n);
        }
        &self.factor * z * variance.sqrt()
    }
}

/// One draw from `Normal(0, variance·Σ)` on the stream `(seed, "mvn", 0)`.
pub fn sample_mvn(sigma: &DMatrix<f64>, variance: f64, seed: u64) -> Result<DVector<f64>> {
    let s = MvnSampler::new(sigma)?;
    Ok(s.draw(variance, &mut seed::rng(seed, "mvn", 0)))
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Uniform points on `[0, 1]²`, redrawing exact duplicates.
fn sample_locations(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let mut seen = HashSet::new();
    let mut out = DMatrix::zeros(n, 2);
    for i in 0..n {
        loop {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            if seen.insert((a.to_bits(), b.to_bits())) {
                out[(i, 0)] = a;
                out[(i, 1)] = b;
                break;
            }
        }
    }
    out
}

fn sample_sd(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mu = v.mean();
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Generates one replicate.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let (n, d, p, k) = (cfg.n, cfg.d, cfg.p, cfg.n_pcs);
    let coords = sample_locations(n, &mut seed::rng(cfg.seed, "locations", 0));
    let mut rx = seed::rng(cfg.seed, "covariates", 0);
    let x = DMatrix::from_fn(n, d, |_, _| uniform(&mut rx, -1.0, 1.0));
    let sigma = exp_cov_with(&coords, cfg.cov_range, cfg.cov_sill);
    let sampler = MvnSampler::new(&sigma)?;

    let mut means = DMatrix::zeros(n, k);
    let mut pcs = DMatrix::zeros(n, k);
    for l in 0..k {
        let mut rc = seed::rng(cfg.seed, "mean-coefficients", l as u64);
        let mut rn = seed::rng(cfg.seed, "pc-noise", l as u64);
        let (f, var) = if l < cfg.n_predictable {
            let f = match cfg.scenario {
                Scenario::EqualContribution | Scenario::UnequalContribution => {
                    let beta = DVector::from_fn(d, |_, _| uniform(&mut rc, -1.0, 1.0));
                    &x * beta
                }
                Scenario::NonLinear => {
                    let beta = DVector::from_fn(d, |_, _| uniform(&mut rc, -1.0, 1.0));
                    let alpha = DVector::from_fn(d / 2, |_, _| uniform(&mut rc, -1.0, 1.0));
                    let sq = x.map(|v| v * v);
                    let mut f = &sq * beta;
                    for j in 0..d / 2 {
                        let inter = x.column(2 * j).component_mul(&x.column(2 * j + 1));
                        f += inter * (2.0 * alpha[j]);
                    }
                    f
                }
            };
            (f, 0.0)
        } else {
            (DVector::zeros(n), cfg.pc_noise_var)
        };
        let pc = &f + sampler.draw(var, &mut rn);
        means.set_column(l, &f);
        pcs.set_column(l, &pc);
    }

    let mut rm = seed::rng(cfg.seed, "mixing", 0);
    let mut mt = DMatrix::from_fn(k, p, |_, _| uniform(&mut rm, -1.0, 1.0));
    if cfg.scenario == Scenario::UnequalContribution {
        let norms: Vec<f64> = mt.row_iter().map(|r| r.norm()).collect();
        let mean_norm = norms.iter().sum::<f64>() / k as f64;
        for (l, w) in cfg.decay().into_iter().enumerate() {
            let s = w * mean_norm / norms[l];
            mt.row_mut(l).scale_mut(s);
        }
    }
    let mut mixing = mt;
    for l in 0..k {
        let sd = sample_sd(&pcs.column(l).clone_owned());
        if !(sd > 0.0) {
            return Err(Error::Numerical(format!("latent PC {} has zero variance", l + 1)));
        }
        mixing.row_mut(l).scale_mut(1.0 / sd);
    }

    let mut re = seed::rng(cfg.seed, "outcome-noise", 0);
    let sd = cfg.noise_var.sqrt();
    let eps = DMatrix::from_fn(n, p, |_, _| sd * re.sample::<f64, _>(StandardNormal));
    let y = &pcs * &mixing + eps;
    let data = Dataset::new(coords, Some(x), y)?;
    Ok((data, SimTruth { pcs, means, mixing, sigma }))
}

/// Replicate `r` uses seed `derive(base.seed, "replicate", r)`.
pub fn replicate_config(base: &ScenarioConfig, r: usize) -> ScenarioConfig {
    ScenarioConfig { seed: seed::derive(base.seed, "replicate", r as u64), ..base.clone() }
}

pub fn gen_replicates(base: &ScenarioConfig, count: usize, exec: Execution) -> Result<Vec<(Dataset, SimTruth)>> {
    exec.map_range(count, |r| gen_scenario(&replicate_config(base, r))).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{jacobi_eigen, random_coords};
    use nalgebra::SVD;

    fn small(s: Scenario, seed: u64) -> ScenarioConfig {
        ScenarioConfig { n: 60, ..ScenarioConfig::new(s, seed) }
    }

    fn ls_residual(a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let svd = SVD::new(a.clone(), true, true);
        let coef = svd.solve(y, 1e-12).unwrap();
        (y - a * coef).norm()
    }

    #[test]
    fn covariance_corners() {
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1e6, 0.0]);
        let s = exp_cov(&c);
        assert_eq!(s[(0, 0)], 1.0);
        assert!((s[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn covariance_is_psd() {
        let s = exp_cov(&random_coords(20, 3));
        let (vals, _) = jacobi_eigen(&s);
        assert!(vals.min() >= -1e-8);
    }

    #[test]
    fn mvn_variance_and_determinism() {
        let sigma = DMatrix::identity(3, 3);
        let s = MvnSampler::new(&sigma).unwrap();
        let mut rng = seed::rng(5, "t", 0);
        let draws: Vec<f64> = (0..100_000).map(|_| s.draw(1.0, &mut rng)[0]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((v - 1.0).abs() < 0.03, "{v}");
        assert_eq!(sample_mvn(&sigma, 0.0, 1).unwrap(), DVector::zeros(3));
        assert_eq!(sample_mvn(&sigma, 2.0, 9).unwrap(), sample_mvn(&sigma, 2.0, 9).unwrap());
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MvnSampler::new(&s).is_err());
    }

    #[test]
    fn scenario1_structure() {
        let (data, truth) = gen_scenario(&small(Scenario::EqualContribution, 1)).unwrap();
        assert_eq!((data.n(), data.d(), data.p()), (60, 10, 15));
        let x = data.covariates.as_ref().unwrap();
        for l in 0..6 {
            // Λ·PC columns have unit sd: ‖row l of M‖ scaled by sd(PC_l) equals ‖row l of M̃‖
            let sd = sample_sd(&truth.pcs.column(l).clone_owned());
            let scaled = truth.pcs.column(l) / sd;
            assert!((sample_sd(&scaled.clone_owned()) - 1.0).abs() < 1e-10);
        }
        for l in 0..3 {
            let pc = truth.pcs.column(l).clone_owned();
            assert!(ls_residual(x, &pc) <= 1e-10 * pc.norm().max(1.0));
            assert_eq!(truth.pcs.column(l), truth.means.column(l));
        }
        let noise = &data.outcomes - &truth.pcs * &truth.mixing;
        let var = noise.norm_squared() / (60.0 * 15.0);
        assert!((var - 0.1).abs() < 0.02, "{var}");
    }

    #[test]
    fn scenario2_row_norms_decay() {
        let (_, truth) = gen_scenario(&small(Scenario::UnequalContribution, 2)).unwrap();
        // undo Λ to recover M̃ row norms
        let norms: Vec<f64> = (0..6)
            .map(|l| truth.mixing.row(l).norm() * sample_sd(&truth.pcs.column(l).clone_owned()))
            .collect();
        assert!(norms.windows(2).all(|w| w[0] > w[1]), "{norms:?}");
        assert!((norms[0] / norms[5] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn scenario3_is_nonlinear_in_covariates() {
        let (data, truth) = gen_scenario(&small(Scenario::NonLinear, 3)).unwrap();
        let x = data.covariates.as_ref().unwrap();
        let n = data.n();
        let mut poly = DMatrix::zeros(n, 1 + 10 + 5);
        poly.column_mut(0).fill(1.0);
        for j in 0..10 {
            poly.set_column(1 + j, &x.column(j).map(|v| v * v));
        }
        for j in 0..5 {
            poly.set_column(11 + j, &x.column(2 * j).component_mul(&x.column(2 * j + 1)));
        }
        let mut lin = DMatrix::zeros(n, 11);
        lin.column_mut(0).fill(1.0);
        lin.columns_mut(1, 10).copy_from(x);
        for l in 0..3 {
            let pc = truth.pcs.column(l).clone_owned();
            let centered = &pc - DVector::from_element(n, pc.mean());
            assert!(ls_residual(&lin, &pc) / centered.norm() >= 0.3);
            assert!(ls_residual(&poly, &pc) <= 1e-10 * pc.norm());
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = gen_scenario(&small(Scenario::NonLinear, 4)).unwrap().0;
        let b = gen_scenario(&small(Scenario::NonLinear, 4)).unwrap().0;
        let c = gen_scenario(&small(Scenario::NonLinear, 5)).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a.outcomes, c.outcomes);
        let reps = gen_replicates(&small(Scenario::EqualContribution, 1), 3, Execution::Parallel).unwrap();
        let seq = gen_replicates(&small(Scenario::EqualContribution, 1), 3, Execution::Sequential).unwrap();
        for (r, s) in reps.iter().zip(&seq) {
            assert_eq!(r.0, s.0);
        }
        assert_ne!(reps[0].0.outcomes, reps[1].0.outcomes);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Scenario::from_index(4).is_err());
        let c = ScenarioConfig { d: 1, ..ScenarioConfig::new(Scenario::NonLinear, 0) };
        assert!(gen_scenario(&c).is_err());
    }
}
