//! Data model shared by every fitter, plus the capability contract the
//! bootstrap engine consumes.
//!
//! A [`Dataset`] is validated once at construction and is immutable after
//! that. A [`FittedModel`] carries its dataset, so refitting to a simulated
//! response only swaps `y` and keeps the design and grouping untouched.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fitters::FitControl;
use crate::residuals::ResidualKind;

/// Relative singular-value cutoff used for the rank check.
const RANK_TOL: f64 = 1e-10;

/// Response, design and optional random-intercept grouping.
///
/// The design's first column is the intercept. Grouping labels, when
/// present, are the contiguous integers `0..G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Arc<DMatrix<f64>>,
    group: Option<Arc<Vec<usize>>>,
    n_groups: usize,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, group: Option<Vec<usize>>) -> Result<Self> {
        let n_groups = group
            .as_ref()
            .map(|g| g.iter().copied().max().map_or(0, |m| m + 1))
            .unwrap_or(0);
        let d = Dataset {
            y,
            x: Arc::new(x),
            group: group.map(Arc::new),
            n_groups,
        };
        validate_dataset(d)
    }

    /// Convenience constructor: intercept column followed by `columns`.
    pub fn with_intercept(y: Vec<f64>, columns: &[Vec<f64>], group: Option<Vec<usize>>) -> Result<Self> {
        let n = y.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "predictor column has {} rows, response has {n}",
                bad.len()
            )));
        }
        let p = columns.len() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
        Dataset::new(y, x, group)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn group(&self) -> Option<&[usize]> {
        self.group.as_deref().map(|g| g.as_slice())
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Same design and grouping with a new response. The design was already
    /// validated, so only the response length and finiteness are checked.
    pub fn with_response(&self, y: &[f64]) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("response contains non-finite values".into()));
        }
        Ok(Dataset {
            y: y.to_vec(),
            x: Arc::clone(&self.x),
            group: self.group.clone(),
            n_groups: self.n_groups,
        })
    }
}

/// Checks every dataset invariant and hands the dataset back unchanged.
pub fn validate_dataset(d: Dataset) -> Result<Dataset> {
    let n = d.y.len();
    if n < 3 {
        return Err(Error::TooFewRows(n));
    }
    if d.x.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response has {n}",
            d.x.nrows()
        )));
    }
    let p = d.x.ncols();
    if p == 0 {
        return Err(Error::InvalidInput("design has no columns".into()));
    }
    if d.y.iter().chain(d.x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data contain non-finite values".into()));
    }
    let rank = numerical_rank(&d.x);
    if rank < p {
        return Err(Error::RankDeficient { rank, columns: p });
    }
    if let Some(group) = d.group.as_deref() {
        if group.len() != n {
            return Err(Error::BadGrouping(format!(
                "{} labels for {n} observations",
                group.len()
            )));
        }
        let g = group.iter().copied().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; g];
        for &label in group {
            seen[label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::BadGrouping(format!(
                "label {missing} never occurs; labels must be contiguous from 0"
            )));
        }
        if g != d.n_groups {
            return Err(Error::BadGrouping("group count out of sync with labels".into()));
        }
    }
    Ok(d)
}

fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// The three model classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Gaussian linear model.
    Lm,
    /// Poisson log-linear GLM.
    Poisson,
    /// Poisson log-linear GLMM with a random intercept per group.
    PoissonRi,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lm => "lm",
            ModelKind::Poisson => "poisson",
            ModelKind::PoissonRi => "poisson-ri",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "lm" | "linear" | "gaussian" => Ok(ModelKind::Lm),
            "poisson" | "glm" => Ok(ModelKind::Poisson),
            "poisson-ri" | "glmm" => Ok(ModelKind::PoissonRi),
            other => Err(Error::InvalidInput(format!("unknown model {other:?}"))),
        }
    }
}

/// Conditions worth reporting that do not prevent a usable fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FitFlags {
    /// Zero residual variance (perfect fit) for a linear model.
    pub degenerate: bool,
    /// Random-intercept sd pinned at its lower floor.
    pub boundary_omega: bool,
}

/// A fitted model of one of the three classes.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub(crate) kind: ModelKind,
    pub(crate) beta: Vec<f64>,
    pub(crate) sigma: Option<f64>,
    pub(crate) sigma_ml: Option<f64>,
    pub(crate) omega: Option<f64>,
    pub(crate) eta: Vec<f64>,
    pub(crate) loglik: f64,
    pub(crate) random_effects: Option<Vec<f64>>,
    pub(crate) dataset: Dataset,
    pub(crate) control: FitControl,
    pub(crate) residual_kind: ResidualKind,
    pub(crate) flags: FitFlags,
    pub(crate) iterations: usize,
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Residual sd with the unbiased `RSS/(n-p)` divisor (linear model only).
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Maximum-likelihood residual sd, `sqrt(RSS/n)` (linear model only).
    pub fn sigma_ml(&self) -> Option<f64> {
        self.sigma_ml
    }

    /// Random-intercept sd (random-intercept model only).
    pub fn omega(&self) -> Option<f64> {
        self.omega
    }

    /// Marginal linear predictor `X beta`.
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Maximized (marginal, for the mixed model) log-likelihood.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Conditional modes of the group intercepts at the fitted parameters.
    pub fn random_effects(&self) -> Option<&[f64]> {
        self.random_effects.as_deref()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn control(&self) -> &FitControl {
        &self.control
    }

    pub fn flags(&self) -> FitFlags {
        self.flags
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn residual_kind(&self) -> ResidualKind {
        self.residual_kind
    }

    /// Same fit, reporting a different residual type. Refits inherit it.
    pub fn with_residual_kind(mut self, kind: ResidualKind) -> Result<Self> {
        kind.check_model(self.kind)?;
        self.residual_kind = kind;
        Ok(self)
    }

    /// Fitted means on the response scale, from the marginal predictor.
    pub fn fitted_means(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::Lm => self.eta.clone(),
            ModelKind::Poisson | ModelKind::PoissonRi => self.eta.iter().map(|e| e.exp()).collect(),
        }
    }

    /// Overrides the random-effect predictions. Only useful for probing
    /// that the marginal predictor ignores them.
    pub fn with_random_effects(mut self, re: Vec<f64>) -> Self {
        self.random_effects = Some(re);
        self
    }
}

/// Marginal linear predictor `X beta`; random-effect predictions never enter.
pub fn linear_predictors(m: &FittedModel) -> Vec<f64> {
    xb(m.dataset.x(), &m.beta)
}

pub(crate) fn xb(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum())
        .collect()
}

/// What the bootstrap engine needs from a model: simulate a response, refit
/// to it, and report residuals, linear predictors and the maximized
/// log-likelihood.
///
/// Implementations must be pure: `residuals` and `predict` depend only on
/// the fit, and `simulate` only on the fit and the stream it is handed.
pub trait ModelCapability: Sized + Send + Sync {
    fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
    fn refit(&self, y: &[f64]) -> Result<Self>;
    fn residuals(&self) -> Result<Vec<f64>>;
    fn predict(&self) -> Vec<f64>;
    fn max_log_likelihood(&self) -> f64;
}
