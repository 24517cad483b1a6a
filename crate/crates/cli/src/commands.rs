use std::path::Path;

use nalgebra::DMatrix;
use rappca_core::data::{ingest_csv, ingest_sites, CsvSchema, Dataset};
use rappca_core::engines::{fit_model, polar_perturbation_check, Method, MethodConfig, ModelSpace};
use rappca_core::metrics::{mean_sd, MetricsReport};
use rappca_core::predictors::{count_outside, Sites};
use rappca_core::simgen::{gen_replicates, replicate_config, Scenario, ScenarioConfig};
use rappca_core::tuning::{
    complement, cross_validate, cv_tune, evaluate_split, rank_curves, tuned_config, CVPlan, TuneResult,
};
use rappca_core::{seed, Execution, KernelSpec};

use crate::artifacts::{num, sha256_hex, write_file_atomic, Staging};
use crate::bundle::{write_bundle, Bundle, ModelMeta};
use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

/// Tolerance for counting a perturbation difference as touching zero.
pub const TOUCH_TOL: f64 = 1e-6;

struct Context {
    cfg: LoadedConfig,
    data: Dataset,
    hash: String,
}

impl Context {
    fn load(config: &Path) -> CliResult<Self> {
        let cfg = LoadedConfig::load(config)?;
        let data = ingest_csv(&cfg.data_path(), &cfg.schema())?;
        let hash = sha256_hex(&cfg.raw);
        Ok(Context { cfg, data, hash })
    }

    fn stage(&self, out: Option<&Path>) -> CliResult<Staging> {
        let st = Staging::new(&self.cfg.output_dir(out)?)?;
        st.write("config.toml", &self.cfg.raw)?;
        Ok(st)
    }

    fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    fn r(&self) -> usize {
        self.cfg.run.method.r
    }

    /// The configured method, tuning RapPCA on `data` first when the config
    /// leaves its hyperparameters open.
    fn resolve(&self, data: &Dataset, plan: &CVPlan, r: usize) -> CliResult<(MethodConfig, Option<Vec<TuneResult>>)> {
        if self.cfg.method()? != Method::RapPca || self.cfg.hypers()?.is_some() {
            return Ok((self.cfg.method_config(None)?, None));
        }
        let predictor = self.cfg.predictor()?;
        let results = cv_tune(
            data,
            &self.cfg.grid()?,
            plan,
            self.cfg.kernel()?,
            self.cfg.run.method.basis_dim,
            predictor.as_ref(),
            r,
        )?;
        let config = tuned_config(&results, self.cfg.run.method.basis_dim)?;
        Ok((config, Some(results)))
    }
}

pub fn fit(config: &Path, out: Option<&Path>) -> CliResult<()> {
    let ctx = Context::load(config)?;
    let st = ctx.stage(out)?;
    let (method, tuning) = ctx.resolve(&ctx.data, &ctx.cfg.plan()?, ctx.r())?;
    if let Some(results) = &tuning {
        write_tuning(&st, results, ctx.cfg.kernel()?)?;
    }
    let model = fit_model(&ctx.data, &method, ctx.r())?;
    let meta = ModelMeta::new(&model, &ctx.data, &ctx.cfg.run.predictor, ctx.seed(), tuning.is_some());
    write_bundle(&st, &ctx.data, &model, &meta)?;
    st.commit("fit", &ctx.hash, ctx.seed())
}

pub fn predict(model_dir: &Path, locations: &Path, out: &Path, id: Option<&str>) -> CliResult<()> {
    let bundle = Bundle::load(model_dir)?;
    let meta = &bundle.meta;
    let schema = CsvSchema { id: id.map(str::to_string), ..meta.schema() };
    let sites = ingest_sites(locations, &schema)?;
    let outside = count_outside(&bundle.train.coords, &sites.coords);
    if outside > 0 {
        log::warn!("{outside} of {} locations lie outside the training bounding box (extrapolation)", sites.ids.len());
    }
    let scores = bundle.scores()?;
    let predictor = meta.predictor.build(meta.seed)?;
    let train = Sites::new(&bundle.train.coords, bundle.train.covariates.as_ref());
    let test = Sites::new(&sites.coords, sites.covariates.as_ref());
    let n = sites.ids.len();
    let mut u_hat = DMatrix::zeros(n, meta.r);
    for l in 0..meta.r {
        let col = predictor.fit_predict(train, &scores.column(l).clone_owned(), test, Execution::default())?;
        u_hat.set_column(l, &col);
    }
    let y_hat = meta.y_scaler().invert(&(&u_hat * bundle.loadings.transpose()))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend((1..=meta.r).map(|l| format!("pc{l}")));
    header.extend(meta.outcome_names.iter().map(|o| format!("yhat_{o}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![sites.ids[i].clone()];
        rec.extend(u_hat.row(i).iter().map(|v| num(*v)));
        rec.extend(y_hat.row(i).iter().map(|v| num(*v)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_file_atomic(out, &bytes)
}

fn report_row(fold: &str, rep: &MetricsReport) -> Vec<String> {
    let mut row = vec![fold.to_string(), rep.n_trn.to_string(), rep.n_tst.to_string()];
    row.extend(rep.values().into_iter().map(num));
    row
}

pub fn evaluate(config: &Path, out: Option<&Path>) -> CliResult<()> {
    let ctx = Context::load(config)?;
    let st = ctx.stage(out)?;
    let plan = ctx.cfg.plan()?;
    let predictor = ctx.cfg.predictor()?;
    let r = ctx.r();
    let reports: Vec<MetricsReport> = if ctx.cfg.method()? != Method::RapPca || ctx.cfg.hypers()?.is_some() {
        cross_validate(&ctx.data, &ctx.cfg.method_config(None)?, r, &plan, predictor.as_ref())?
    } else {
        // hyperparameters are tuned inside each training fold
        let folds = plan.fold_indices(ctx.data.n())?;
        let mut chosen = st.csv("fold_hypers.csv")?.header(&["fold", "component", "gamma", "lambda1", "lambda2", "h"]);
        let mut reports = Vec::with_capacity(folds.len());
        for (k, val) in folds.iter().enumerate() {
            let train = ctx.data.subset(&complement(ctx.data.n(), val));
            let test = ctx.data.subset(val);
            let inner = CVPlan { seed: seed::derive(ctx.seed(), "inner-folds", k as u64), ..plan.clone() };
            let (method, _) = ctx.resolve(&train, &inner, r)?;
            if let MethodConfig::RapPca { hypers, kernel, .. } = &method {
                for (l, h) in hypers.iter().enumerate() {
                    let cells = [h.gamma, h.lambda1, h.lambda2, kernel.param()];
                    let mut row = vec![(k + 1).to_string(), (l + 1).to_string()];
                    row.extend(cells.into_iter().map(num));
                    chosen.row(row);
                }
            }
            let (_, rep, _) = evaluate_split(&train, &test, &method, r, predictor.as_ref(), plan.exec)?;
            reports.push(rep);
        }
        chosen.finish()?;
        reports
    };

    let names = reports[0].names();
    let mut head = vec!["fold".to_string(), "n_trn".into(), "n_tst".into()];
    head.extend(names.iter().cloned());
    let mut t = st.csv("folds.csv")?.header(&head);
    for (k, rep) in reports.iter().enumerate() {
        t.row(report_row(&(k + 1).to_string(), rep));
    }
    t.finish()?;

    let rows: Vec<Vec<f64>> = reports.iter().map(|r| r.values()).collect();
    let (mean, sd) = mean_sd(&rows);
    let mut head = vec!["stat".to_string()];
    head.extend(names);
    let mut t = st.csv("summary.csv")?.header(&head);
    for (stat, vals) in [("mean", mean), ("sd", sd)] {
        let mut row = vec![stat.to_string()];
        row.extend(vals.into_iter().map(num));
        t.row(row);
    }
    t.finish()?;
    st.commit("evaluate", &ctx.hash, ctx.seed())
}

fn write_tuning(st: &Staging, results: &[TuneResult], kernel: KernelSpec) -> CliResult<()> {
    let with_h = matches!(kernel, KernelSpec::Gaussian { .. });
    let mut head: Vec<&str> = vec!["component", "gamma", "lambda1", "ratio"];
    if with_h {
        head.push("h");
    }
    let key = |res: &TuneResult, c: &rappca_core::tuning::Candidate| {
        let mut row = vec![res.component.to_string(), num(c.hyper.gamma), num(c.hyper.lambda1), num(c.hyper.ratio())];
        if with_h {
            row.push(num(c.kernel.param()));
        }
        row
    };

    let mut scores = st.csv("tuning_scores.csv")?.header(&[head.clone(), vec!["fold", "value"]].concat());
    let mut means = st.csv("tuning_means.csv")?.header(&[head.clone(), vec!["mean", "selected"]].concat());
    for res in results {
        for s in &res.table {
            let mut row = key(res, &s.candidate);
            row.extend([(s.fold + 1).to_string(), num(s.value)]);
            scores.row(row);
        }
        for (c, m) in &res.means {
            let mut row = key(res, c);
            row.extend([num(*m), u8::from(*c == res.best).to_string()]);
            means.row(row);
        }
    }
    scores.finish()?;
    means.finish()?;

    let list = |f: &dyn Fn(&TuneResult) -> f64| results.iter().map(|r| num(f(r))).collect::<Vec<_>>().join(", ");
    let mut text = String::from("# Selected by cross-validation; paste into a run config.\n");
    text.push_str(&format!("# cv score per component: [{}]\n[method]\n", list(&|r| r.score)));
    text.push_str(&format!("gamma = [{}]\n", list(&|r| r.best.hyper.gamma)));
    text.push_str(&format!("lambda1 = [{}]\n", list(&|r| r.best.hyper.lambda1)));
    text.push_str(&format!("lambda2 = [{}]\n", list(&|r| r.best.hyper.lambda2)));
    if with_h {
        text.push_str(&format!("kernel_param = {}\n", num(results[0].best.kernel.param())));
    }
    st.write("selected.toml", text.as_bytes())
}

pub fn tune(config: &Path, out: Option<&Path>) -> CliResult<()> {
    let ctx = Context::load(config)?;
    if ctx.cfg.method()? != Method::RapPca {
        return Err(CliError::Config("tune applies to method 'rappca' only".into()));
    }
    let st = ctx.stage(out)?;
    let predictor = ctx.cfg.predictor()?;
    let kernel = ctx.cfg.kernel()?;
    let results = cv_tune(
        &ctx.data,
        &ctx.cfg.grid()?,
        &ctx.cfg.plan()?,
        kernel,
        ctx.cfg.run.method.basis_dim,
        predictor.as_ref(),
        ctx.r(),
    )?;
    write_tuning(&st, &results, kernel)?;
    st.commit("tune", &ctx.hash, ctx.seed())
}

pub fn rank_curves_cmd(config: &Path, rmax: usize, out: Option<&Path>) -> CliResult<()> {
    let ctx = Context::load(config)?;
    let st = ctx.stage(out)?;
    let plan = ctx.cfg.plan()?;
    let (method, tuning) = ctx.resolve(&ctx.data, &plan, rmax)?;
    if let Some(results) = &tuning {
        write_tuning(&st, results, ctx.cfg.kernel()?)?;
    }
    let predictor = ctx.cfg.predictor()?;
    let curves = rank_curves(&ctx.data, &method, rmax, &plan, predictor.as_ref())?;
    let mut t = st.csv("curves.csv")?.header(&["l", "cum_mse", "msre_trn", "knee"]);
    for row in &curves.rows {
        t.row(vec![row.l.to_string(), num(row.cum_mse), num(row.msre_trn), u8::from(row.l == curves.knee).to_string()]);
    }
    t.finish()?;
    st.commit("rank-curves", &ctx.hash, ctx.seed())
}

pub fn verify_optimality(config: &Path, theta_grid: usize, out: Option<&Path>) -> CliResult<()> {
    let ctx = Context::load(config)?;
    if ctx.cfg.method()? != Method::RapPca {
        return Err(CliError::Config("verify-optimality applies to method 'rappca' only".into()));
    }
    let st = ctx.stage(out)?;
    let (method, _) = ctx.resolve(&ctx.data, &ctx.cfg.plan()?, ctx.r())?;
    let model = fit_model(&ctx.data, &method, ctx.r())?;
    let (kernel, basis) = match (&model.kernel, &model.basis) {
        (Some(k), Some(b)) => (*k, b),
        _ => return Err(CliError::Numerical("fitted model lacks its model space".into())),
    };
    let x_std = match (&model.x_scaler, &ctx.data.covariates) {
        (Some(s), Some(x)) => Some(s.apply(x)?),
        _ => None,
    };
    let space = ModelSpace::from_parts(&kernel, x_std.as_ref(), basis)?;
    let mut y_l = model.standardize(&ctx.data.outcomes)?;
    let mut curves = st.csv("curves.csv")?.header(&["component", "theta", "diff"]);
    let mut summary = st.csv("summary.csv")?.header(&[
        "component", "gamma", "lambda1", "lambda2", "theta_opt", "min_diff", "touches", "nonnegative",
    ]);
    for (l, c) in model.components.iter().enumerate() {
        let curve =
            polar_perturbation_check(&y_l, c, space.kernel(), space.basis(), space.penalty(), &c.hyper, theta_grid)?;
        for (t, d) in curve.theta.iter().zip(&curve.diff) {
            curves.row(vec![(l + 1).to_string(), num(*t), num(*d)]);
        }
        let ok = curve.min() >= -1e-8;
        if !ok {
            log::warn!("component {}: perturbation curve dips to {:e}", l + 1, curve.min());
        }
        summary.row(vec![
            (l + 1).to_string(),
            num(c.hyper.gamma),
            num(c.hyper.lambda1),
            num(c.hyper.lambda2),
            num(curve.theta_opt),
            num(curve.min()),
            curve.touches(TOUCH_TOL).to_string(),
            ok.to_string(),
        ]);
        y_l -= &c.u * c.v.transpose();
    }
    curves.finish()?;
    summary.finish()?;
    st.commit("verify-optimality", &ctx.hash, ctx.seed())
}

/// Options of the `simulate` command.
#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub scenario: u32,
    pub replicates: usize,
    pub seed: u64,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub noise_var: Option<f64>,
    pub exec: Execution,
}

fn matrix_csv(st: &Staging, rel: &str, first: &str, row_names: &[String], col_names: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let mut head = vec![first.to_string()];
    head.extend(col_names.iter().cloned());
    let mut t = st.csv(rel)?.header(&head);
    for (i, name) in row_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.row(i).iter().map(|v| num(*v)));
        t.row(row);
    }
    t.finish()
}

fn quoted(names: &[String]) -> String {
    names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(", ")
}

pub fn simulate(args: &SimulateArgs, out: &Path) -> CliResult<()> {
    if args.replicates == 0 {
        return Err(CliError::Config("--replicates must be >= 1".into()));
    }
    let scenario = Scenario::from_index(args.scenario).map_err(|e| CliError::Config(e.to_string()))?;
    let mut base = ScenarioConfig::new(scenario, args.seed);
    base.n = args.n.unwrap_or(base.n);
    base.d = args.d.unwrap_or(base.d);
    base.p = args.p.unwrap_or(base.p);
    base.noise_var = args.noise_var.unwrap_or(base.noise_var);
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let mut meta = String::new();
    meta.push_str(&format!("scenario = {}\nreplicates = {}\nseed = {}\n", scenario.index(), args.replicates, base.seed));
    meta.push_str(&format!("n = {}\nd = {}\np = {}\nn_pcs = {}\nn_predictable = {}\n", base.n, base.d, base.p, base.n_pcs, base.n_predictable));
    meta.push_str(&format!("noise_var = {}\npc_noise_var = {}\n", num(base.noise_var), num(base.pc_noise_var)));
    meta.push_str(&format!("cov_range = {}\ncov_sill = {}\n", num(base.cov_range), num(base.cov_sill)));
    let decay: Vec<String> = base.decay().into_iter().map(num).collect();
    meta.push_str(&format!("decay_law = \"linear (n_pcs + 1 - l) / n_pcs, scenario 2 only\"\nrow_decay = [{}]\n", decay.join(", ")));
    let seeds: Vec<String> = (0..args.replicates).map(|r| replicate_config(&base, r).seed.to_string()).collect();
    meta.push_str(&format!("replicate_seeds = [{}]\n", seeds.join(", ")));

    let st = Staging::new(out)?;
    st.write("metadata.toml", meta.as_bytes())?;
    let reps = gen_replicates(&base, args.replicates, args.exec)?;
    for (r, (data, truth)) in reps.iter().enumerate() {
        let dir = format!("rep_{:03}", r + 1);
        data.write_csv(&st.path(&format!("{dir}/data.csv"))?)?;
        let pcs: Vec<String> = (1..=base.n_pcs).map(|l| format!("pc{l}")).collect();
        matrix_csv(&st, &format!("{dir}/truth_pcs.csv"), "id", &data.ids, &pcs, &truth.pcs)?;
        matrix_csv(&st, &format!("{dir}/truth_means.csv"), "id", &data.ids, &pcs, &truth.means)?;
        matrix_csv(&st, &format!("{dir}/truth_mixing.csv"), "pc", &pcs, &data.outcome_names, &truth.mixing)?;
        let cfg = format!(
            "seed = {}\n\n[data]\npath = \"data.csv\"\nid = \"id\"\ncoords = [{}]\ncovariates = [{}]\noutcomes = [{}]\n",
            seeds[r],
            quoted(&data.coord_names),
            quoted(&data.covariate_names),
            quoted(&data.outcome_names)
        );
        st.write(&format!("{dir}/config.toml"), cfg.as_bytes())?;
    }
    st.commit("simulate", &sha256_hex(meta.as_bytes()), args.seed)
}
