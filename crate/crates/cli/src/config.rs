//! Run configuration. Values come from built-in defaults, then the JSON
//! config file, then command-line flags; later sources win. Relative paths
//! in a config file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use envdiag::diagnostics::{DEFAULT_ALPHA, DEFAULT_B, DEFAULT_M_GRID, MIN_B};
use envdiag::harness::{Covariates, ScenarioModel, ScenarioSpec, Violation};
use envdiag::rng::derive_seed;
use envdiag::{ModelKind, PlotKind};
use serde::{Deserialize, Serialize};

use crate::data::ColumnSpec;
use crate::{io_err, AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(alias = "data")]
    pub data_path: Option<PathBuf>,
    #[serde(alias = "response")]
    pub response_column: String,
    #[serde(alias = "predictors")]
    pub predictor_columns: Vec<String>,
    #[serde(alias = "group")]
    pub group_column: Option<String>,
    pub model: ModelKind,
    pub plots: Vec<PlotKind>,
    #[serde(rename = "B", alias = "b")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(alias = "grid")]
    pub m_grid: usize,
    #[serde(alias = "out")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_path: None,
            response_column: "y".into(),
            predictor_columns: Vec::new(),
            group_column: None,
            model: ModelKind::Lm,
            plots: vec![PlotKind::ResVsFits, PlotKind::Qq],
            b: DEFAULT_B,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            m_grid: DEFAULT_M_GRID,
            output_dir: PathBuf::from("envdiag-out"),
        }
    }
}

/// Reads and parses a JSON file.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| AppError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> AppResult<Self> {
        let mut c: RunConfig = read_json(path)?;
        let base = config_dir(path);
        c.data_path = c.data_path.map(|p| resolve(&base, &p));
        c.output_dir = resolve(&base, &c.output_dir);
        Ok(c)
    }

    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec {
            response: self.response_column.clone(),
            predictors: self.predictor_columns.clone(),
            group: self.group_column.clone(),
        }
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.data_path.is_none() {
            return Err(AppError::Config("no data file given".into()));
        }
        if self.b < MIN_B {
            return Err(AppError::Config(format!("B must be at least {MIN_B}, got {}", self.b)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AppError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.m_grid < 2 {
            return Err(AppError::Config(format!("grid must have at least 2 points, got {}", self.m_grid)));
        }
        if self.plots.is_empty() {
            return Err(AppError::Config("no plots requested".into()));
        }
        if self.model == ModelKind::PoissonRi && self.group_column.is_none() {
            return Err(AppError::Config("the poisson-ri model needs a group column".into()));
        }
        Ok(())
    }
}

/// A cross product of models, violations and sample sizes sharing one set
/// of run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub models: Vec<ScenarioModel>,
    pub violations: Vec<Violation>,
    #[serde(alias = "n")]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerStudyConfig {
    /// Explicitly listed scenarios, run as given.
    pub scenarios: Vec<ScenarioSpec>,
    /// Scenarios generated from a grid; each cell gets a seed derived from
    /// `seed` and its position.
    pub grid: Option<ScenarioGrid>,
    pub n_datasets: usize,
    #[serde(rename = "B", alias = "b")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub covariates: Covariates,
    #[serde(alias = "grid_points")]
    pub m_grid: usize,
    #[serde(alias = "out")]
    pub output_dir: PathBuf,
}

impl Default for PowerStudyConfig {
    fn default() -> Self {
        PowerStudyConfig {
            scenarios: Vec::new(),
            grid: None,
            n_datasets: 200,
            b: 99,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            covariates: Covariates::Equispaced,
            m_grid: DEFAULT_M_GRID,
            output_dir: PathBuf::from("envdiag-power"),
        }
    }
}

impl PowerStudyConfig {
    pub fn from_file(path: &Path) -> AppResult<Self> {
        let mut c: PowerStudyConfig = read_json(path)?;
        c.output_dir = resolve(&config_dir(path), &c.output_dir);
        Ok(c)
    }

    /// The scenarios to run: listed ones first, then the grid in
    /// model, violation, size order.
    pub fn expand(&self) -> AppResult<Vec<ScenarioSpec>> {
        let mut out = self.scenarios.clone();
        if let Some(g) = &self.grid {
            for (mi, &model) in g.models.iter().enumerate() {
                for (vi, &violation) in g.violations.iter().enumerate() {
                    for &n in &g.sizes {
                        out.push(ScenarioSpec {
                            model,
                            violation,
                            n,
                            n_datasets: self.n_datasets,
                            b: self.b,
                            alpha: self.alpha,
                            seed: derive_seed(self.seed, &[mi as u64, vi as u64, n as u64]),
                            covariates: self.covariates,
                            m_grid: self.m_grid,
                        });
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(AppError::Config("power study has no scenarios".into()));
        }
        for s in &out {
            s.validate()?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_aliases_and_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"data": "d.csv", "response": "count", "predictors": ["x"], "model": "poisson",
                "plots": ["scale_location"], "B": 99, "grid": 32}"#,
        )
        .unwrap();
        assert_eq!(c.response_column, "count");
        assert_eq!(c.model, ModelKind::Poisson);
        assert_eq!(c.plots, vec![PlotKind::ScaleLocation]);
        assert_eq!((c.b, c.m_grid, c.alpha), (99, 32, 0.05));
        assert!(serde_json::from_str::<RunConfig>(r#"{"colour": "red"}"#).is_err());
    }

    #[test]
    fn grid_expands_in_order_with_distinct_seeds() {
        let c: PowerStudyConfig = serde_json::from_str(
            r#"{"grid": {"models": ["a-lm", "b-glm"], "violations": ["null-ok"], "n": [20]},
                "n_datasets": 5, "B": 19, "seed": 3}"#,
        )
        .unwrap();
        let s = c.expand().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].model, ScenarioModel::ALm);
        assert_eq!(s[1].model, ScenarioModel::BGlm);
        assert_ne!(s[0].seed, s[1].seed);
        assert_eq!((s[0].n_datasets, s[0].b), (5, 19));
    }

    #[test]
    fn empty_study_is_an_error() {
        assert!(PowerStudyConfig::default().expand().is_err());
    }
}
