//! Fitted-model bundle: loadings, scores, coefficients, metadata and the
//! training data, as plain CSV plus one TOML file.

use std::path::Path;

use nalgebra::DMatrix;
use rappca_core::data::{ingest_csv, CsvSchema, Dataset};
use rappca_core::engines::PCModel;
use rappca_core::linalg::ColumnScaler;
use serde::{Deserialize, Serialize};

use crate::artifacts::{num, Staging};
use crate::config::PredictorSection;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComponentMeta {
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelMeta {
    pub method: String,
    pub r: usize,
    pub seed: u64,
    /// Whether the hyperparameters came from a tuning run.
    pub tuned: bool,
    pub kernel: Option<String>,
    pub kernel_param: Option<f64>,
    /// Spline basis dimension actually used.
    pub basis_dim: Option<usize>,
    pub coord_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub outcome_names: Vec<String>,
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub x_mean: Option<Vec<f64>>,
    pub x_scale: Option<Vec<f64>>,
    pub predictor: PredictorSection,
    pub components: Vec<ComponentMeta>,
}

impl ModelMeta {
    pub fn new(model: &PCModel, data: &Dataset, predictor: &PredictorSection, seed: u64, tuned: bool) -> Self {
        ModelMeta {
            method: model.method.name().into(),
            r: model.rank(),
            seed,
            tuned,
            kernel: model.kernel.map(|k| k.family().into()),
            kernel_param: model.kernel.map(|k| k.param()),
            basis_dim: model.basis.as_ref().map(|b| b.dim()),
            coord_names: data.coord_names.to_vec(),
            covariate_names: data.covariate_names.clone(),
            outcome_names: data.outcome_names.clone(),
            y_mean: model.y_scaler.mean.clone(),
            y_scale: model.y_scaler.scale.clone(),
            x_mean: model.x_scaler.as_ref().map(|s| s.mean.clone()),
            x_scale: model.x_scaler.as_ref().map(|s| s.scale.clone()),
            predictor: predictor.clone(),
            components: model
                .components
                .iter()
                .map(|c| ComponentMeta {
                    gamma: c.hyper.gamma,
                    lambda1: c.hyper.lambda1,
                    lambda2: c.hyper.lambda2,
                    delta: c.hyper.delta,
                    objective: c.objective,
                })
                .collect(),
        }
    }

    pub fn y_scaler(&self) -> ColumnScaler {
        ColumnScaler { mean: self.y_mean.clone(), scale: self.y_scale.clone() }
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: Some("id".into()),
            coords: [self.coord_names[0].clone(), self.coord_names[1].clone()],
            covariates: self.covariate_names.clone(),
            outcomes: self.outcome_names.clone(),
        }
    }
}

fn pc_header(first: &str, r: usize) -> Vec<String> {
    let mut h = vec![first.to_string()];
    h.extend((1..=r).map(|l| format!("pc{l}")));
    h
}

pub fn write_bundle(st: &Staging, data: &Dataset, model: &PCModel, meta: &ModelMeta) -> CliResult<()> {
    let r = model.rank();
    let mut t = st.csv("loadings.csv")?.header(&pc_header("variable", r));
    for (j, name) in data.outcome_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(model.loadings.row(j).iter().map(|v| num(*v)));
        t.row(row);
    }
    t.finish()?;

    let mut t = st.csv("scores.csv")?.header(&pc_header("id", r));
    for (i, id) in data.ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(model.scores.row(i).iter().map(|v| num(*v)));
        t.row(row);
    }
    t.finish()?;

    let mut t = st.csv("coefficients.csv")?.header(&["component", "block", "index", "value"]);
    for (l, c) in model.components.iter().enumerate() {
        for (block, coef) in [("alpha", &c.alpha), ("beta", &c.beta)] {
            for (i, v) in coef.iter().enumerate() {
                t.row(vec![(l + 1).to_string(), block.into(), (i + 1).to_string(), num(*v)]);
            }
        }
    }
    t.finish()?;

    let text = toml::to_string(meta).map_err(|e| CliError::Data(format!("cannot serialize metadata: {e}")))?;
    st.write("metadata.toml", text.as_bytes())?;
    data.write_csv(&st.path("training.csv")?)?;
    Ok(())
}

/// What `predict` needs from a bundle.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub meta: ModelMeta,
    pub train: Dataset,
    /// p × r
    pub loadings: DMatrix<f64>,
}

impl Bundle {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(dir.join("metadata.toml"))
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.join("metadata.toml").display())))?;
        let meta: ModelMeta =
            toml::from_str(&text).map_err(|e| CliError::Data(format!("bad model metadata: {e}")))?;
        let train = ingest_csv(&dir.join("training.csv"), &meta.schema())?;
        let loadings = read_loadings(&dir.join("loadings.csv"), &meta)?;
        Ok(Bundle { meta, train, loadings })
    }

    /// Training scores `Y_std V`.
    pub fn scores(&self) -> CliResult<DMatrix<f64>> {
        Ok(self.meta.y_scaler().apply(&self.train.outcomes)? * &self.loadings)
    }
}

fn read_loadings(path: &Path, meta: &ModelMeta) -> CliResult<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let (p, r) = (meta.outcome_names.len(), meta.r);
    let mut v = DMatrix::zeros(p, r);
    let mut rows = 0;
    for (j, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if j >= p || rec.len() != r + 1 || rec[0] != meta.outcome_names[j] {
            return Err(CliError::Data(format!("{}: row {} does not match the metadata", path.display(), j + 2)));
        }
        for l in 0..r {
            v[(j, l)] = rec[l + 1]
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad number '{}'", path.display(), &rec[l + 1])))?;
        }
        rows += 1;
    }
    if rows != p {
        return Err(CliError::Data(format!("{}: expected {p} rows, found {rows}", path.display())));
    }
    Ok(v)
}
