//! Cross-validated hyperparameter search, run sequentially per component,
//! plus K-fold evaluation and rank-selection curves.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::engines::{
    effective_basis_dim, fit_model, hyper_for, rappca_solve_component, Hyperparams, MethodConfig, ModelSpace,
    PCModel, Preprocess, RAPPCA_MAX_BASIS,
};
use crate::error::{input, Error, Result};
use crate::exec::Execution;
use crate::kernels::KernelSpec;
use crate::linalg::ColumnScaler;
use crate::metrics::{compute_metrics, tmse_component, MetricsReport};
use crate::predictors::{ScorePredictor, Sites};
use crate::seed;
use crate::splines::build_tprs;

/// `{0.05, 0.1, 0.2, …, 1.0, 2, 3, 4, 5}`.
pub fn default_axis() -> Vec<f64> {
    let mut v = vec![0.05];
    v.extend((1..=10).map(|i| i as f64 / 10.0));
    v.extend([2.0, 3.0, 4.0, 5.0]);
    v
}

/// The default axis followed by `{6, 7, 8, 9, 10, 20, 30, 40, 50}`.
pub fn extended_gamma_axis() -> Vec<f64> {
    let mut v = default_axis();
    v.extend([6.0, 7.0, 8.0, 9.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
    v
}

/// Default Gaussian bandwidth axis.
pub fn default_bandwidths() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub gamma: Vec<f64>,
    pub lambda1: Vec<f64>,
    /// `λ₂/λ₁` values.
    pub ratio: Vec<f64>,
    pub include_zero: bool,
    /// Gaussian bandwidths tried as a fourth axis; ignored for other kernels.
    pub bandwidth: Option<Vec<f64>>,
    pub delta: f64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        default_grid()
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub hyper: Hyperparams,
    pub kernel: KernelSpec,
}

impl Candidate {
    fn key(&self) -> [f64; 4] {
        [self.hyper.gamma, self.hyper.lambda1, self.hyper.lambda2, self.kernel.param()]
    }
}

pub fn default_grid() -> TuningGrid {
    TuningGrid {
        gamma: default_axis(),
        lambda1: default_axis(),
        ratio: default_axis(),
        include_zero: true,
        bandwidth: None,
        delta: crate::engines::DEFAULT_DELTA,
    }
}

impl TuningGrid {
    pub fn extended() -> Self {
        TuningGrid { gamma: extended_gamma_axis(), ..default_grid() }
    }

    /// A grid with the given axes plus the zero combination.
    pub fn from_axes(gamma: Vec<f64>, lambda1: Vec<f64>, ratio: Vec<f64>) -> Self {
        TuningGrid { gamma, lambda1, ratio, ..default_grid() }
    }

    pub fn single(h: Hyperparams) -> Self {
        TuningGrid {
            gamma: vec![h.gamma],
            lambda1: vec![h.lambda1],
            ratio: vec![h.ratio()],
            include_zero: false,
            bandwidth: None,
            delta: h.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [&self.gamma, &self.lambda1, &self.ratio];
        if axes.iter().any(|a| a.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
            return Err(Error::Parameter("grid values must be finite and >= 0".into()));
        }
        let empty = self.gamma.is_empty() || self.lambda1.is_empty() || self.ratio.is_empty();
        if empty && !self.include_zero {
            return Err(Error::Parameter("grid is empty".into()));
        }
        if let Some(b) = &self.bandwidth {
            if b.is_empty() || b.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Parameter("bandwidths must be > 0".into()));
            }
        }
        Ok(())
    }

    /// All combinations, deduplicated and sorted lexicographically by
    /// `(γ, λ₁, λ₂, h)`. A zero `λ₁` forces `λ₂ = 0`.
    pub fn candidates(&self, kernel: KernelSpec) -> Result<Vec<Candidate>> {
        self.validate()?;
        let kernels: Vec<KernelSpec> = match (&self.bandwidth, kernel) {
            (Some(bw), KernelSpec::Gaussian { .. }) => bw.iter().map(|&h| kernel.with_param(h)).collect::<Result<_>>()?,
            _ => vec![kernel],
        };
        let mut out = Vec::new();
        for &k in &kernels {
            if self.include_zero {
                out.push(Candidate { hyper: Hyperparams { delta: self.delta, ..Hyperparams::zero() }, kernel: k });
            }
            for &g in &self.gamma {
                for &l1 in &self.lambda1 {
                    for &rho in &self.ratio {
                        let l2 = if l1 > 0.0 { l1 * rho } else { 0.0 };
                        let hyper = Hyperparams { gamma: g, lambda1: l1, lambda2: l2, delta: self.delta };
                        out.push(Candidate { hyper, kernel: k });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.key().partial_cmp(&b.key()).unwrap_or(std::cmp::Ordering::Equal));
        out.dedup_by(|a, b| a.key() == b.key());
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TuneMetric {
    #[default]
    Tmse,
    Mspe,
    Msre,
}

impl fmt::Display for TuneMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuneMetric::Tmse => "tmse",
            TuneMetric::Mspe => "mspe",
            TuneMetric::Msre => "msre",
        })
    }
}

impl FromStr for TuneMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tmse" => Ok(TuneMetric::Tmse),
            "mspe" => Ok(TuneMetric::Mspe),
            "msre" => Ok(TuneMetric::Msre),
            o => Err(Error::Parameter(format!("unknown tuning metric '{o}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVPlan {
    pub folds: usize,
    pub seed: u64,
    pub metric: TuneMetric,
    pub exec: Execution,
}

impl Default for CVPlan {
    fn default() -> Self {
        Self { folds: 10, seed: 0, metric: TuneMetric::Tmse, exec: Execution::Parallel }
    }
}

impl CVPlan {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self { folds, seed, ..Default::default() }
    }

    /// Validation rows of each fold: a seeded permutation dealt round-robin.
    pub fn fold_indices(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        make_folds(n, self.folds, self.seed)
    }
}

pub fn make_folds(n: usize, k: usize, seed_value: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return input(format!("fold count must be in 2..={n}, got {k}"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed_value, "folds", 0));
    let mut folds = vec![Vec::new(); k];
    for (j, &i) in perm.iter().enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training rows complementary to `val` (sorted).
pub fn complement(n: usize, val: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in val {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub candidate: Candidate,
    pub fold: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    /// Component index, 1-based.
    pub component: usize,
    pub best: Candidate,
    /// Fold-averaged score of `best`.
    pub score: f64,
    /// Candidates in evaluation order with their fold-averaged scores.
    pub means: Vec<(Candidate, f64)>,
    /// Every (candidate, fold) score, candidate-major.
    pub table: Vec<ScoreRow>,
}

impl TuneResult {
    /// Mean score of the first candidate matching `h` (kernel ignored).
    pub fn score_of(&self, h: &Hyperparams) -> Option<f64> {
        self.means.iter().find(|(c, _)| c.hyper == *h).map(|(_, s)| *s)
    }
}

struct Fold {
    train: Vec<usize>,
    val: Vec<usize>,
    y_trn: DMatrix<f64>,
    y_val: DMatrix<f64>,
    x_std: Option<DMatrix<f64>>,
    basis: crate::splines::SplineBasis,
}

fn prepare_fold(data: &Dataset, val: &[usize], basis_dim: Option<usize>) -> Result<Fold> {
    let train = complement(data.n(), val);
    let tr = data.subset(&train);
    let va = data.subset(val);
    let ys = Preprocess::Standardize.scaler(&tr.outcomes)?;
    let x_std = match &tr.covariates {
        Some(x) => Some(ColumnScaler::fit_lenient(x).apply(x)?),
        None => None,
    };
    let requested = basis_dim.unwrap_or(RAPPCA_MAX_BASIS);
    let m = effective_basis_dim(Some(requested), requested, train.len());
    if m < requested {
        log::warn!("fold with {} training rows: spline basis reduced to {m}", train.len());
    }
    Ok(Fold {
        y_trn: ys.apply(&tr.outcomes)?,
        y_val: ys.apply(&va.outcomes)?,
        basis: build_tprs(&tr.coords, m)?,
        train,
        val: val.to_vec(),
        x_std,
    })
}

fn deflate(y: &mut DMatrix<f64>, v: &DVector<f64>) {
    let u = &*y * v;
    *y -= u * v.transpose();
}

fn score(metric: TuneMetric, y_val: &DMatrix<f64>, u_hat: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let nt = y_val.nrows() as f64;
    let u_star = y_val * v;
    match metric {
        TuneMetric::Tmse => tmse_component(y_val, u_hat, v),
        TuneMetric::Mspe => Ok((u_hat - &u_star).norm_squared() * v.norm_squared() / nt),
        TuneMetric::Msre => Ok((y_val - &u_star * v.transpose()).norm_squared() / nt),
    }
}

fn inner(exec: Execution) -> Execution {
    if exec.is_parallel() {
        Execution::Sequential
    } else {
        exec
    }
}

/// Tunes component `prior.len() + 1`. Components `1..=prior.len()` are
/// refit on each fold's training rows with their frozen settings; the
/// validation residual is deflated with those training loadings.
#[allow(clippy::too_many_arguments)]
pub fn cv_tune_component(
    prior: &[Candidate],
    data: &Dataset,
    grid: &TuningGrid,
    plan: &CVPlan,
    kernel: KernelSpec,
    basis_dim: Option<usize>,
    predictor: &dyn ScorePredictor,
) -> Result<TuneResult> {
    let l = prior.len();
    if l >= data.p().min(data.n()) {
        return input(format!("cannot tune component {} of a rank-{} problem", l + 1, data.p().min(data.n())));
    }
    let cands = grid.candidates(kernel)?;
    let folds = plan.fold_indices(data.n())?;
    let inner_exec = inner(plan.exec);

    let states: Vec<Fold> = plan
        .exec
        .map(&folds, |val| -> Result<Fold> {
            let mut f = prepare_fold(data, val, basis_dim)?;
            let mut spaces: Vec<(KernelSpec, ModelSpace)> = Vec::new();
            for c in prior {
                if !spaces.iter().any(|(k, _)| *k == c.kernel) {
                    spaces.push((c.kernel, ModelSpace::from_parts(&c.kernel, f.x_std.as_ref(), &f.basis)?));
                }
                let space = &spaces.iter().find(|(k, _)| *k == c.kernel).unwrap().1;
                let comp = rappca_solve_component(&f.y_trn, space, &c.hyper)?;
                deflate(&mut f.y_trn, &comp.v);
                deflate(&mut f.y_val, &comp.v);
            }
            Ok(f)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut kernels: Vec<KernelSpec> = Vec::new();
    for c in &cands {
        if !kernels.contains(&c.kernel) {
            kernels.push(c.kernel);
        }
    }
    let tasks: Vec<(usize, usize)> = (0..folds.len()).flat_map(|f| kernels.iter().enumerate().map(move |(k, _)| (f, k))).collect();
    let spaces: Vec<ModelSpace> = plan
        .exec
        .map(&tasks, |&(f, k)| ModelSpace::from_parts(&kernels[k], states[f].x_std.as_ref(), &states[f].basis))
        .into_iter()
        .collect::<Result<_>>()?;
    let space_of = |f: usize, kern: &KernelSpec| -> &ModelSpace {
        let k = kernels.iter().position(|x| x == kern).unwrap();
        &spaces[f * kernels.len() + k]
    };

    let jobs: Vec<(usize, usize)> = (0..cands.len()).flat_map(|c| (0..folds.len()).map(move |f| (c, f))).collect();
    let values: Vec<f64> = plan
        .exec
        .map(&jobs, |&(ci, fi)| -> Result<f64> {
            let st = &states[fi];
            let c = &cands[ci];
            let comp = rappca_solve_component(&st.y_trn, space_of(fi, &c.kernel), &c.hyper)?;
            let tr_cov = data.covariates.as_ref().map(|x| crate::linalg::select_rows(x, &st.train));
            let va_cov = data.covariates.as_ref().map(|x| crate::linalg::select_rows(x, &st.val));
            let tr_coords = crate::linalg::select_rows(&data.coords, &st.train);
            let va_coords = crate::linalg::select_rows(&data.coords, &st.val);
            let u_hat = predictor.fit_predict(
                Sites::new(&tr_coords, tr_cov.as_ref()),
                &comp.u,
                Sites::new(&va_coords, va_cov.as_ref()),
                inner_exec,
            )?;
            score(plan.metric, &st.y_val, &u_hat, &comp.v)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let nf = folds.len() as f64;
    let mut table = Vec::with_capacity(jobs.len());
    let mut means = Vec::with_capacity(cands.len());
    for (ci, c) in cands.iter().enumerate() {
        let mut sum = 0.0;
        for fi in 0..folds.len() {
            let v = values[ci * folds.len() + fi];
            sum += v;
            table.push(ScoreRow { candidate: *c, fold: fi, value: v });
        }
        means.push((*c, sum / nf));
    }
    let (best, score) = means
        .iter()
        .fold(None::<(Candidate, f64)>, |acc, &(c, s)| match acc {
            Some((_, bs)) if !(s < bs) => acc,
            _ => Some((c, s)),
        })
        .ok_or_else(|| Error::Parameter("grid is empty".into()))?;
    if !score.is_finite() {
        return Err(Error::Numerical("all candidate scores are non-finite".into()));
    }
    Ok(TuneResult { component: l + 1, best, score, means, table })
}

/// Tunes components `1..=r` in order, freezing each winner before moving
/// on.
pub fn cv_tune(
    data: &Dataset,
    grid: &TuningGrid,
    plan: &CVPlan,
    kernel: KernelSpec,
    basis_dim: Option<usize>,
    predictor: &dyn ScorePredictor,
    r: usize,
) -> Result<Vec<TuneResult>> {
    let mut chosen: Vec<Candidate> = Vec::with_capacity(r);
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let res = cv_tune_component(&chosen, data, grid, plan, kernel, basis_dim, predictor)?;
        chosen.push(res.best);
        out.push(res);
    }
    Ok(out)
}

/// RapPCA configuration from tuning results. With several bandwidths the
/// first component's kernel is used for all components.
pub fn tuned_config(results: &[TuneResult], basis_dim: Option<usize>) -> Result<MethodConfig> {
    let first = results.first().ok_or_else(|| Error::Parameter("no tuning results".into()))?;
    if results.iter().any(|r| r.best.kernel != first.best.kernel) {
        log::warn!("components selected different kernel parameters; using component 1's");
    }
    Ok(MethodConfig::RapPca {
        kernel: first.best.kernel,
        basis_dim,
        hypers: results.iter().map(|r| r.best.hyper).collect(),
    })
}

/// Fits on `train`, predicts each score column of `Y_std V` at `test`, and
/// scores the prediction.
pub fn evaluate_split(
    train: &Dataset,
    test: &Dataset,
    config: &MethodConfig,
    r: usize,
    predictor: &dyn ScorePredictor,
    exec: Execution,
) -> Result<(PCModel, MetricsReport, DMatrix<f64>)> {
    let model = fit_model(train, config, r)?;
    let u_hat = predict_scores(&model, train, test, predictor, exec)?;
    let y_tst = model.standardize(&test.outcomes)?;
    let y_trn = model.standardize(&train.outcomes)?;
    let report = compute_metrics(&y_tst, &model.loadings, &u_hat, &y_trn, &model.scores)?;
    Ok((model, report, u_hat))
}

/// Predicted scores at `test` sites from the model's training scores.
pub fn predict_scores(
    model: &PCModel,
    train: &Dataset,
    test: &Dataset,
    predictor: &dyn ScorePredictor,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> = exec
        .map_range(model.rank(), |l| {
            predictor.fit_predict(
                Sites::new(&train.coords, train.covariates.as_ref()),
                &model.scores.column(l).clone_owned(),
                Sites::new(&test.coords, test.covariates.as_ref()),
                inner(exec),
            )
        })
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// One report per fold of `plan`.
pub fn cross_validate(
    data: &Dataset,
    config: &MethodConfig,
    r: usize,
    plan: &CVPlan,
    predictor: &dyn ScorePredictor,
) -> Result<Vec<MetricsReport>> {
    let folds = plan.fold_indices(data.n())?;
    plan.exec
        .map(&folds, |val| {
            let train = data.subset(&complement(data.n(), val));
            let test = data.subset(val);
            evaluate_split(&train, &test, config, r, predictor, inner(plan.exec)).map(|(_, rep, _)| rep)
        })
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub l: usize,
    /// `Σ_{j≤l}` fold-averaged per-component prediction MSE.
    pub cum_mse: f64,
    /// `‖Y⁽ˡ⁺¹⁾‖²_F / n` on the full data.
    pub msre_trn: f64,
}

#[derive(Debug, Clone)]
pub struct RankCurves {
    pub rows: Vec<RankRow>,
    /// Advisory elbow of the MSRE-trn curve.
    pub knee: usize,
}

/// Argmax over `l = 1..` of `m_{l−1} − 2m_l + m_{l+1}`, where `m_0` is the
/// total variance and the last point has no right neighbour.
pub fn knee(msre: &[f64], total: f64) -> usize {
    let mut m = vec![total];
    m.extend_from_slice(msre);
    let mut best = (1, f64::NEG_INFINITY);
    for l in 1..m.len() - 1 {
        let d2 = m[l - 1] - 2.0 * m[l] + m[l + 1];
        if d2 > best.1 {
            best = (l, d2);
        }
    }
    best.0
}

/// Cumulative cross-validated prediction MSE and training representation
/// error after `l = 1..=r_max` components.
pub fn rank_curves(
    data: &Dataset,
    config: &MethodConfig,
    r_max: usize,
    plan: &CVPlan,
    predictor: &dyn ScorePredictor,
) -> Result<RankCurves> {
    if r_max == 0 || r_max > data.n().min(data.p()) {
        return input(format!("r_max must be in 1..={}", data.n().min(data.p())));
    }
    let reports = cross_validate(data, config, r_max, plan, predictor)?;
    let full = fit_model(data, config, r_max)?;
    let y = full.standardize(&data.outcomes)?;
    let n = data.n() as f64;
    let mut resid = y.clone();
    let mut rows = Vec::with_capacity(r_max);
    let mut cum = 0.0;
    let mut msre = Vec::with_capacity(r_max);
    for l in 0..r_max {
        deflate(&mut resid, &full.components[l].v);
        let mse = reports.iter().map(|r| r.per_pc_mse[l]).sum::<f64>() / reports.len() as f64;
        cum += mse;
        let m = resid.norm_squared() / n;
        msre.push(m);
        rows.push(RankRow { l: l + 1, cum_mse: cum, msre_trn: m });
    }
    Ok(RankCurves { rows, knee: knee(&msre, y.norm_squared() / n) })
}

/// Per-component hyperparameters actually used by `config` at rank `r`.
pub fn config_hypers(config: &MethodConfig, r: usize) -> Vec<Hyperparams> {
    match config {
        MethodConfig::RapPca { hypers, .. } => (0..r).map(|l| hyper_for(hypers, l)).collect(),
        _ => vec![Hyperparams::zero(); r],
    }
}
