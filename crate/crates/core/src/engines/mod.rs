//! Dimension-reduction engines: classical PCA, predictive PCA and RapPCA,
//! all extracting components one at a time from a deflated residual.

mod classical;
mod objective;
mod predictive;
mod rappca;

pub use classical::{classical_components, classical_pca_fit};
pub use objective::{objective_value, polar_perturbation_check, PolarCurve};
pub use predictive::{predictive_components, predictive_pca_fit};
pub use rappca::{rappca_fit, rappca_solve_component, ModelSpace};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{input, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::ColumnScaler;
use crate::splines::{build_tprs, SplineBasis};

/// Default ridge added to the kernel and spline penalties.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default basis dimension cap for RapPCA's spatial term.
pub const RAPPCA_MAX_BASIS: usize = 200;
/// Spline basis dimension used by predictive PCA.
pub const PREDICTIVE_BASIS: usize = 10;

/// Per-component tuning parameters `(γ, λ₁, λ₂, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::zero()
    }
}

impl Hyperparams {
    pub fn new(gamma: f64, lambda1: f64, lambda2: f64) -> Self {
        Self { gamma, lambda1, lambda2, delta: DEFAULT_DELTA }
    }

    /// The classical-PCA special case.
    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// `λ₂ / λ₁`, or 0 when `λ₁ = 0`.
    pub fn ratio(&self) -> f64 {
        if self.lambda1 > 0.0 {
            self.lambda2 / self.lambda1
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.gamma, self.lambda1, self.lambda2];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(format!(
                "gamma, lambda1, lambda2 must be finite and >= 0, got {self}"
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Parameter(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.lambda1 == 0.0 && self.lambda2 > 0.0 {
            return Err(Error::Parameter("lambda2 > 0 requires lambda1 > 0".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.gamma == 0.0 && self.lambda1 == 0.0 && self.lambda2 == 0.0
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(gamma={}, lambda1={}, lambda2={}, delta={})",
            self.gamma, self.lambda1, self.lambda2, self.delta
        )
    }
}

/// One extracted component.
#[derive(Debug, Clone, PartialEq)]
pub struct PCComponent {
    /// Unit-norm loading (length p).
    pub v: DVector<f64>,
    /// Score `Y⁽ˡ⁾ v` on the residual the component was fit to (length n).
    pub u: DVector<f64>,
    /// Kernel coefficients (length n; empty for the baselines).
    pub alpha: DVector<f64>,
    /// Spline coefficients (length m; empty for the baselines).
    pub beta: DVector<f64>,
    pub hyper: Hyperparams,
    /// Objective value at the solution (the method's own criterion).
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Classical,
    Predictive,
    RapPca,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Predictive => "predictive",
            Method::RapPca => "rappca",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" | "pca" => Ok(Method::Classical),
            "predictive" | "predpca" => Ok(Method::Predictive),
            "rappca" => Ok(Method::RapPca),
            other => Err(Error::Parameter(format!("unknown method '{other}'"))),
        }
    }
}

/// How outcome columns are prepared before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preprocess {
    /// Center and scale each column with training statistics.
    #[default]
    Standardize,
    /// Use the matrix as given.
    Raw,
}

impl Preprocess {
    pub(crate) fn scaler(&self, y: &DMatrix<f64>) -> Result<ColumnScaler> {
        match self {
            Preprocess::Standardize => ColumnScaler::fit(y, "outcomes"),
            Preprocess::Raw => Ok(ColumnScaler::identity(y.ncols())),
        }
    }
}

/// A fitted dimension reduction.
#[derive(Debug, Clone)]
pub struct PCModel {
    pub method: Method,
    pub components: Vec<PCComponent>,
    /// p × r loadings `Ṽ`.
    pub loadings: DMatrix<f64>,
    /// n × r training scores `Ũ = Y_std Ṽ`.
    pub scores: DMatrix<f64>,
    pub y_scaler: ColumnScaler,
    /// Covariate statistics used before kernel evaluation (RapPCA) or as
    /// regressors (predictive PCA).
    pub x_scaler: Option<ColumnScaler>,
    pub kernel: Option<KernelSpec>,
    pub basis: Option<SplineBasis>,
}

impl PCModel {
    pub(crate) fn assemble(
        method: Method,
        components: Vec<PCComponent>,
        y_std: &DMatrix<f64>,
        y_scaler: ColumnScaler,
    ) -> Self {
        let p = y_std.ncols();
        let r = components.len();
        let mut loadings = DMatrix::zeros(p, r);
        for (l, c) in components.iter().enumerate() {
            loadings.set_column(l, &c.v);
        }
        let scores = y_std * &loadings;
        PCModel {
            method,
            components,
            loadings,
            scores,
            y_scaler,
            x_scaler: None,
            kernel: None,
            basis: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn standardize(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.y_scaler.apply(y)
    }

    /// Ŷ on the original scale from (standardized-scale) scores.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if scores.ncols() != self.rank() {
            return input(format!("expected {} score columns, got {}", self.rank(), scores.ncols()));
        }
        self.y_scaler.invert(&(scores * self.loadings.transpose()))
    }
}

/// `Y_new_std · Ṽ` for data already standardized with the model's training
/// statistics.
pub fn project_scores(y_new_std: &DMatrix<f64>, model: &PCModel) -> Result<DMatrix<f64>> {
    if y_new_std.ncols() != model.loadings.nrows() {
        return input(format!(
            "expected {} outcome columns, got {}",
            model.loadings.nrows(),
            y_new_std.ncols()
        ));
    }
    Ok(y_new_std * &model.loadings)
}

/// Method choice plus everything needed to fit it on a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Classical,
    Predictive {
        /// Spline basis dimension (default 10).
        basis_dim: usize,
    },
    RapPca {
        kernel: KernelSpec,
        /// Basis dimension; `None` means `min(n, 200)`.
        basis_dim: Option<usize>,
        /// One entry per component; the last entry is reused if shorter
        /// than the requested rank.
        hypers: Vec<Hyperparams>,
    },
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Classical => Method::Classical,
            MethodConfig::Predictive { .. } => Method::Predictive,
            MethodConfig::RapPca { .. } => Method::RapPca,
        }
    }

    pub fn predictive() -> Self {
        MethodConfig::Predictive { basis_dim: PREDICTIVE_BASIS }
    }

    pub fn rappca(kernel: KernelSpec, hypers: Vec<Hyperparams>) -> Self {
        MethodConfig::RapPca { kernel, basis_dim: None, hypers }
    }
}

/// Hyperparameters for component `l`, repeating the last entry.
pub fn hyper_for(hypers: &[Hyperparams], l: usize) -> Hyperparams {
    hypers.get(l).or(hypers.last()).copied().unwrap_or_default()
}

/// Basis dimension clipped to what `n` locations support.
pub fn effective_basis_dim(requested: Option<usize>, cap: usize, n: usize) -> usize {
    requested.unwrap_or(cap).min(n).max(4)
}

/// Fits `r` components with the configured method on a standardized copy of
/// `data`.
pub fn fit_model(data: &Dataset, config: &MethodConfig, r: usize) -> Result<PCModel> {
    match config {
        MethodConfig::Classical => classical_pca_fit(&data.outcomes, r, Preprocess::Standardize),
        MethodConfig::Predictive { basis_dim } => {
            let basis = build_tprs(&data.coords, effective_basis_dim(Some(*basis_dim), *basis_dim, data.n()))?;
            predictive_pca_fit(data, &basis, r)
        }
        MethodConfig::RapPca { kernel, basis_dim, hypers } => {
            let m = effective_basis_dim(*basis_dim, RAPPCA_MAX_BASIS, data.n());
            let basis = build_tprs(&data.coords, m)?;
            let hs: Vec<Hyperparams> = (0..r).map(|l| hyper_for(hypers, l)).collect();
            rappca_fit(data, *kernel, &basis, &hs, r)
        }
    }
}

pub(crate) fn check_rank(r: usize, n: usize, p: usize) -> Result<()> {
    if r == 0 || r > n.min(p) {
        return input(format!("rank must be in 1..={}, got {r}", n.min(p)));
    }
    Ok(())
}
