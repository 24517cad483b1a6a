//! Run configuration: a TOML file with `[data]`, `[method]`, `[grid]`,
//! `[predictor]` and `[output]` sections plus top-level `seed` and
//! `execution`.

use std::path::{Path, PathBuf};

use rappca_core::engines::{Hyperparams, Method, MethodConfig, DEFAULT_DELTA, PREDICTIVE_BASIS};
use rappca_core::predictors::{ForestParams, ResidualMode, ScorePredictor, SplineOnly, TwoStep, TwoStepParams};
use rappca_core::tuning::{default_axis, default_bandwidths, extended_gamma_axis, CVPlan, TuneMetric, TuningGrid};
use rappca_core::data::CsvSchema;
use rappca_core::{seed, Execution, KernelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_execution")]
    pub execution: String,
    pub data: DataSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_execution() -> String {
    "parallel".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    pub id: Option<String>,
    pub coords: [String; 2],
    #[serde(default)]
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
}

/// A scalar or one value per component.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum PerComponent {
    One(f64),
    Many(Vec<f64>),
}

impl PerComponent {
    fn values(&self) -> Vec<f64> {
        match self {
            PerComponent::One(v) => vec![*v],
            PerComponent::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    #[serde(default = "default_method")]
    pub name: String,
    #[serde(default = "default_rank")]
    pub r: usize,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    /// Polynomial degree or Gaussian bandwidth.
    pub kernel_param: Option<f64>,
    /// Spline basis dimension.
    pub basis_dim: Option<usize>,
    pub gamma: Option<PerComponent>,
    pub lambda1: Option<PerComponent>,
    pub lambda2: Option<PerComponent>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_method() -> String {
    "rappca".into()
}
fn default_rank() -> usize {
    3
}
fn default_kernel() -> String {
    "linear".into()
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            name: default_method(),
            r: default_rank(),
            kernel: default_kernel(),
            kernel_param: None,
            basis_dim: None,
            gamma: None,
            lambda1: None,
            lambda2: None,
            delta: default_delta(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub gamma: Option<Vec<f64>>,
    pub lambda1: Option<Vec<f64>>,
    /// `λ₂/λ₁` values.
    pub ratio: Option<Vec<f64>>,
    #[serde(default)]
    pub extended: bool,
    #[serde(default = "yes")]
    pub include_zero: bool,
    /// Gaussian bandwidth axis. Defaults to {0.1, 1, 10} for a Gaussian
    /// kernel without a fixed `kernel_param`.
    pub bandwidth: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_metric")]
    pub metric: String,
}

fn yes() -> bool {
    true
}
fn default_folds() -> usize {
    10
}
fn default_metric() -> String {
    "tmse".into()
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            gamma: None,
            lambda1: None,
            ratio: None,
            extended: false,
            include_zero: true,
            bandwidth: None,
            folds: default_folds(),
            metric: default_metric(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    /// `two-step` or `spline`.
    #[serde(default = "default_predictor")]
    pub kind: String,
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    pub mtry: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "yes")]
    pub bootstrap: bool,
    pub spline_dim: Option<usize>,
    /// `oob` or `in-sample`.
    #[serde(default = "default_residuals")]
    pub residuals: String,
}

fn default_predictor() -> String {
    "two-step".into()
}
fn default_trees() -> usize {
    500
}
fn default_min_leaf() -> usize {
    5
}
fn default_residuals() -> String {
    "oob".into()
}

impl Default for PredictorSection {
    fn default() -> Self {
        PredictorSection {
            kind: default_predictor(),
            n_trees: default_trees(),
            mtry: None,
            min_leaf: default_min_leaf(),
            bootstrap: true,
            spline_dim: None,
            residuals: default_residuals(),
        }
    }
}

impl PredictorSection {
    /// The predictor with its forest seeded from the run seed.
    pub fn build(&self, run_seed: u64) -> CliResult<Box<dyn ScorePredictor>> {
        match self.kind.as_str() {
            "two-step" => {
                let residuals = match self.residuals.as_str() {
                    "oob" => ResidualMode::OutOfBag,
                    "in-sample" => ResidualMode::InSample,
                    o => return Err(CliError::Config(format!("predictor.residuals: unknown mode '{o}'"))),
                };
                let forest = ForestParams {
                    n_trees: self.n_trees,
                    mtry: self.mtry,
                    min_leaf: self.min_leaf,
                    seed: seed::derive(run_seed, "forest", 0),
                    bootstrap: self.bootstrap,
                };
                forest.validate(usize::MAX)?;
                Ok(Box::new(TwoStep(TwoStepParams { forest, spline_dim: self.spline_dim, residuals })))
            }
            "spline" => Ok(Box::new(SplineOnly { dim: self.spline_dim })),
            o => Err(CliError::Config(format!("predictor.kind: unknown predictor '{o}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A parsed config with its source bytes and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub raw: Vec<u8>,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
        let run: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = LoadedConfig { run, raw, base_dir };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        self.execution()?;
        self.method()?;
        self.run.predictor.build(0)?;
        self.plan()?;
        if self.run.method.r == 0 {
            return Err(CliError::Config("method.r must be >= 1".into()));
        }
        if self.method()? == Method::RapPca {
            self.kernel()?;
            self.hypers()?;
            self.grid()?.validate()?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(&self.run.data.path)
    }

    pub fn schema(&self) -> CsvSchema {
        let d = &self.run.data;
        CsvSchema {
            id: d.id.clone(),
            coords: d.coords.clone(),
            covariates: d.covariates.clone(),
            outcomes: d.outcomes.clone(),
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> CliResult<PathBuf> {
        match (flag, &self.run.output.dir) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(CliError::Config("no output directory: set [output] dir or pass --out".into())),
        }
    }

    pub fn execution(&self) -> CliResult<Execution> {
        match self.run.execution.as_str() {
            "parallel" => Ok(Execution::Parallel),
            "sequential" => Ok(Execution::Sequential),
            o => Err(CliError::Config(format!("execution: expected 'parallel' or 'sequential', got '{o}'"))),
        }
    }

    pub fn method(&self) -> CliResult<Method> {
        Ok(self.run.method.name.parse::<Method>()?)
    }

    pub fn kernel(&self) -> CliResult<KernelSpec> {
        let m = &self.run.method;
        let h = match (m.kernel.as_str(), m.kernel_param) {
            (_, Some(h)) => h,
            ("polynomial" | "poly", None) => 2.0,
            ("gaussian" | "rbf", None) => 1.0,
            _ => 0.0,
        };
        Ok(KernelSpec::from_name(&m.kernel, h)?)
    }

    /// Explicit per-component hyperparameters, or `None` when they are to be
    /// tuned.
    pub fn hypers(&self) -> CliResult<Option<Vec<Hyperparams>>> {
        let m = &self.run.method;
        let (g, l1, l2) = match (&m.gamma, &m.lambda1, &m.lambda2) {
            (None, None, None) => return Ok(None),
            (Some(g), Some(l1), Some(l2)) => (g.values(), l1.values(), l2.values()),
            _ => return Err(CliError::Config("method: gamma, lambda1 and lambda2 must be given together".into())),
        };
        let len = g.len().max(l1.len()).max(l2.len());
        for (name, v) in [("gamma", &g), ("lambda1", &l1), ("lambda2", &l2)] {
            if v.is_empty() || (v.len() != 1 && v.len() != len) {
                return Err(CliError::Config(format!("method.{name}: give one value or {len}")));
            }
        }
        let pick = |v: &Vec<f64>, l: usize| if v.len() == 1 { v[0] } else { v[l] };
        let hs: Vec<Hyperparams> = (0..len)
            .map(|l| Hyperparams { gamma: pick(&g, l), lambda1: pick(&l1, l), lambda2: pick(&l2, l), delta: m.delta })
            .collect();
        for h in &hs {
            h.validate()?;
        }
        Ok(Some(hs))
    }

    /// Method configuration, with `hypers` substituted when the config does
    /// not fix them.
    pub fn method_config(&self, hypers: Option<Vec<Hyperparams>>) -> CliResult<MethodConfig> {
        let m = &self.run.method;
        Ok(match self.method()? {
            Method::Classical => MethodConfig::Classical,
            Method::Predictive => MethodConfig::Predictive { basis_dim: m.basis_dim.unwrap_or(PREDICTIVE_BASIS) },
            Method::RapPca => {
                let hypers = match hypers.or(self.hypers()?) {
                    Some(h) => h,
                    None => return Err(CliError::Config("rappca needs hyperparameters or a tuning run".into())),
                };
                MethodConfig::RapPca { kernel: self.kernel()?, basis_dim: m.basis_dim, hypers }
            }
        })
    }

    pub fn grid(&self) -> CliResult<TuningGrid> {
        let g = &self.run.grid;
        let gamma = match &g.gamma {
            Some(v) => v.clone(),
            None if g.extended => extended_gamma_axis(),
            None => default_axis(),
        };
        let kernel = self.kernel()?;
        let bandwidth = match (&g.bandwidth, kernel) {
            (Some(b), _) => Some(b.clone()),
            (None, KernelSpec::Gaussian { .. }) if self.run.method.kernel_param.is_none() => Some(default_bandwidths()),
            _ => None,
        };
        let grid = TuningGrid {
            gamma,
            lambda1: g.lambda1.clone().unwrap_or_else(default_axis),
            ratio: g.ratio.clone().unwrap_or_else(default_axis),
            include_zero: g.include_zero,
            bandwidth,
            delta: self.run.method.delta,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn plan(&self) -> CliResult<CVPlan> {
        let g = &self.run.grid;
        if g.folds < 2 {
            return Err(CliError::Config("grid.folds must be >= 2".into()));
        }
        Ok(CVPlan {
            folds: g.folds,
            seed: self.run.seed,
            metric: g.metric.parse::<TuneMetric>()?,
            exec: self.execution()?,
        })
    }

    pub fn predictor(&self) -> CliResult<Box<dyn ScorePredictor>> {
        self.run.predictor.build(self.run.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> CliResult<LoadedConfig> {
        let run: RunConfig = toml::from_str(body).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = LoadedConfig { run, raw: body.as_bytes().to_vec(), base_dir: PathBuf::from("/cfg") };
        cfg.check()?;
        Ok(cfg)
    }

    const DATA: &str = "[data]\npath = \"d.csv\"\ncoords = [\"s1\", \"s2\"]\noutcomes = [\"y1\", \"y2\"]\n";

    #[test]
    fn defaults_fill_every_section() {
        let c = parse(DATA).unwrap();
        assert_eq!(c.method().unwrap(), Method::RapPca);
        assert_eq!(c.data_path(), PathBuf::from("/cfg/d.csv"));
        assert!(c.hypers().unwrap().is_none());
        assert_eq!(c.grid().unwrap().gamma.len(), 15);
        assert_eq!(c.plan().unwrap().folds, 10);
    }

    #[test]
    fn scalar_and_list_hyperparameters() {
        let c = parse(&format!("{DATA}[method]\ngamma = [0.5, 1.0]\nlambda1 = 0.1\nlambda2 = 0.2\n")).unwrap();
        let h = c.hypers().unwrap().unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!((h[1].gamma, h[1].lambda1, h[1].lambda2), (1.0, 0.1, 0.2));
    }

    #[test]
    fn config_errors_are_classified() {
        for body in [
            format!("{DATA}[method]\ngamma = 1.0\n"),
            format!("{DATA}[method]\nname = \"nope\"\n"),
            format!("{DATA}[method]\nkernel = \"polynomial\"\nkernel_param = 1.5\n"),
            format!("{DATA}[grid]\nfolds = 1\n"),
            format!("{DATA}[predictor]\nkind = \"knn\"\n"),
            format!("{DATA}bogus = 1\n"),
            "[method]\nr = 2\n".to_string(),
        ] {
            assert_eq!(parse(&body).unwrap_err().exit_code(), 2, "{body}");
        }
    }

    #[test]
    fn gaussian_kernel_adds_bandwidth_axis() {
        let c = parse(&format!("{DATA}[method]\nkernel = \"gaussian\"\n")).unwrap();
        assert_eq!(c.grid().unwrap().bandwidth, Some(default_bandwidths()));
    }
}
