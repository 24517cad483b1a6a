//! Prediction of PC scores at new locations: a random forest on
//! `[coords, X]` followed by thin-plate smoothing of its residuals, with a
//! spline-only fallback for small training sets.

mod forest;

pub use forest::{rf_fit, rf_predict, Forest, ForestParams, Node, Tree};

use nalgebra::{DMatrix, DVector};

use crate::error::{input, Result};
use crate::exec::Execution;
use crate::splines::{build_tprs, Lambda, SmoothFit, Smoother};

/// Training sets smaller than this skip the forest stage.
pub const MIN_FOREST_ROWS: usize = 10;
/// Cap on the residual spline basis dimension.
pub const RESIDUAL_SPLINE_CAP: usize = 100;

/// Which forest predictions the residual spline is fit to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualMode {
    /// Out-of-bag predictions; in-sample forest residuals are close to zero
    /// and leave nothing for the spline to learn.
    #[default]
    OutOfBag,
    InSample,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoStepParams {
    pub forest: ForestParams,
    /// Residual spline dimension; `None` means `min(n, 100)`.
    pub spline_dim: Option<usize>,
    pub residuals: ResidualMode,
}

/// Locations (and covariates) at which scores are known or wanted.
#[derive(Debug, Clone, Copy)]
pub struct Sites<'a> {
    pub coords: &'a DMatrix<f64>,
    pub covariates: Option<&'a DMatrix<f64>>,
}

impl<'a> Sites<'a> {
    pub fn new(coords: &'a DMatrix<f64>, covariates: Option<&'a DMatrix<f64>>) -> Self {
        Self { coords, covariates }
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    fn features(&self) -> DMatrix<f64> {
        let d = self.covariates.map_or(0, |x| x.ncols());
        let mut f = DMatrix::zeros(self.n(), 2 + d);
        f.columns_mut(0, 2).copy_from(self.coords);
        if let Some(x) = self.covariates {
            f.columns_mut(2, d).copy_from(x);
        }
        f
    }

    fn check(&self) -> Result<()> {
        if self.coords.ncols() != 2 {
            return input("coordinates must have 2 columns");
        }
        if let Some(x) = self.covariates {
            if x.nrows() != self.n() {
                return input(format!("{} covariate rows for {} locations", x.nrows(), self.n()));
            }
        }
        Ok(())
    }
}

/// Fitted two-step predictor.
#[derive(Debug, Clone)]
pub struct SpatialPredictor {
    forest: Option<Forest>,
    smoother: Smoother,
    fit: SmoothFit,
    fitted: DVector<f64>,
    d: Option<usize>,
}

impl SpatialPredictor {
    pub fn fit(train: Sites<'_>, u: &DVector<f64>, params: &TwoStepParams, exec: Execution) -> Result<Self> {
        train.check()?;
        let n = train.n();
        if u.len() != n {
            return input(format!("{} scores for {n} locations", u.len()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return input("scores contain non-finite values");
        }
        let (forest, base) = if n < MIN_FOREST_ROWS {
            log::warn!("only {n} training rows; predicting with the spline stage alone");
            (None, DVector::zeros(n))
        } else {
            let f = rf_fit(&train.features(), u, &params.forest, exec)?;
            let base = match params.residuals {
                ResidualMode::OutOfBag => f.oob_predictions().clone(),
                ResidualMode::InSample => rf_predict(&f, &train.features())?,
            };
            (Some(f), base)
        };
        let m = params.spline_dim.unwrap_or(RESIDUAL_SPLINE_CAP).min(n).max(4);
        let smoother = Smoother::new(build_tprs(train.coords, m)?);
        let fit = smoother.fit(&(u - &base), Lambda::Gcv)?;
        let fitted = base + fit.fitted(smoother.basis());
        Ok(Self { forest, smoother, fit, fitted, d: train.covariates.map(|x| x.ncols()) })
    }

    /// Training-location predictions: forest values (out-of-bag or
    /// in-sample, as configured) plus the residual surface.
    pub fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    pub fn uses_forest(&self) -> bool {
        self.forest.is_some()
    }

    pub fn predict(&self, sites: Sites<'_>) -> Result<DVector<f64>> {
        sites.check()?;
        if sites.covariates.map(|x| x.ncols()) != self.d {
            return input("covariates at prediction sites do not match training covariates");
        }
        let outside = count_outside(self.smoother.basis().coords(), sites.coords);
        if outside > 0 {
            log::debug!("{outside} prediction sites lie outside the training bounding box");
        }
        let spline = self.smoother.predict(&self.fit, sites.coords)?;
        match &self.forest {
            Some(f) => Ok(rf_predict(f, &sites.features())? + spline),
            None => Ok(spline),
        }
    }
}

/// Rows of `new` outside the coordinate bounding box of `train`.
pub fn count_outside(train: &DMatrix<f64>, new: &DMatrix<f64>) -> usize {
    let lo: Vec<f64> = (0..2).map(|j| train.column(j).min()).collect();
    let hi: Vec<f64> = (0..2).map(|j| train.column(j).max()).collect();
    new.row_iter()
        .filter(|r| (0..2).any(|j| r[j] < lo[j] || r[j] > hi[j]))
        .count()
}

/// Forest on `[coords, X] → u`, residual spline with GCV, prediction at
/// `test` as forest output plus residual surface.
pub fn two_step_fit_predict(
    train: Sites<'_>,
    u: &DVector<f64>,
    test: Sites<'_>,
    params: &TwoStepParams,
    exec: Execution,
) -> Result<DVector<f64>> {
    SpatialPredictor::fit(train, u, params, exec)?.predict(test)
}

/// Any method mapping training scores to predictions at new sites.
pub trait ScorePredictor: Send + Sync {
    fn name(&self) -> &str;
    fn fit_predict(&self, train: Sites<'_>, u: &DVector<f64>, test: Sites<'_>, exec: Execution) -> Result<DVector<f64>>;
}

/// The random forest + residual spline predictor.
#[derive(Debug, Clone, Default)]
pub struct TwoStep(pub TwoStepParams);

impl ScorePredictor for TwoStep {
    fn name(&self) -> &str {
        "two-step"
    }
    fn fit_predict(&self, train: Sites<'_>, u: &DVector<f64>, test: Sites<'_>, exec: Execution) -> Result<DVector<f64>> {
        two_step_fit_predict(train, u, test, &self.0, exec)
    }
}

/// GCV thin-plate smoothing of the scores themselves.
#[derive(Debug, Clone, Default)]
pub struct SplineOnly {
    pub dim: Option<usize>,
}

impl ScorePredictor for SplineOnly {
    fn name(&self) -> &str {
        "spline"
    }
    fn fit_predict(&self, train: Sites<'_>, u: &DVector<f64>, test: Sites<'_>, _exec: Execution) -> Result<DVector<f64>> {
        train.check()?;
        let m = self.dim.unwrap_or(RESIDUAL_SPLINE_CAP).min(train.n()).max(4);
        let smoother = Smoother::new(build_tprs(train.coords, m)?);
        let fit = smoother.fit(u, Lambda::Gcv)?;
        smoother.predict(&fit, test.coords)
    }
}
