//! Power study: simulate datasets under a scenario, fit the scenario's
//! model, and count how often each diagnostic rejects.
//!
//! Responses follow `η = β₀ + 4x + β₂x²` on `x ∈ (0, 1)`. Under the null and
//! mixture scenarios `β₀ = -2, β₂ = 0`; the quadratic scenario uses
//! `β₀ = 1, β₂ = -4`, a parabola peaking at `x = 0.5`. The linear model has
//! `σ = 0.25`; the mixed model adds a `N(0, 1)` intercept cycling over five
//! groups. The mixture scenario inflates one case in ten: its sd becomes
//! `4σ`, or its Poisson mean is multiplied by 4.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{bootstrap, envelope_from_replicates, loglik_p_value, PlotKind, DEFAULT_M_GRID, MIN_B};
use crate::envelope::EnvelopeMode;
use crate::error::{Error, Result};
use crate::fitters::{draw_poisson, fit, FitControl};
use crate::model::{Dataset, ModelCapability, ModelKind};
use crate::rng::{derive_seed, stream, Stream};

const SIGMA: f64 = 0.25;
const OMEGA: f64 = 1.0;
const N_GROUPS: usize = 5;
const MIXTURE_WEIGHT: f64 = 0.1;
const MIXTURE_SCALE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioModel {
    #[serde(rename = "a-lm", alias = "a", alias = "lm", alias = "A_LM")]
    ALm,
    #[serde(rename = "b-glm", alias = "b", alias = "poisson", alias = "B_GLM")]
    BGlm,
    #[serde(rename = "c-glmm", alias = "c", alias = "poisson-ri", alias = "C_GLMM")]
    CGlmm,
}

impl ScenarioModel {
    pub const ALL: [ScenarioModel; 3] = [ScenarioModel::ALm, ScenarioModel::BGlm, ScenarioModel::CGlmm];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioModel::ALm => "a-lm",
            ScenarioModel::BGlm => "b-glm",
            ScenarioModel::CGlmm => "c-glmm",
        }
    }

    pub fn kind(self) -> ModelKind {
        match self {
            ScenarioModel::ALm => ModelKind::Lm,
            ScenarioModel::BGlm => ModelKind::Poisson,
            ScenarioModel::CGlmm => ModelKind::PoissonRi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    #[serde(rename = "null-ok", alias = "null_ok", alias = "null", alias = "NULL_OK")]
    NullOk,
    #[serde(rename = "mixture", alias = "MIXTURE")]
    Mixture,
    #[serde(rename = "quadratic", alias = "QUADRATIC")]
    Quadratic,
}

impl Violation {
    pub const ALL: [Violation; 3] = [Violation::NullOk, Violation::Mixture, Violation::Quadratic];

    pub fn name(self) -> &'static str {
        match self {
            Violation::NullOk => "null-ok",
            Violation::Mixture => "mixture",
            Violation::Quadratic => "quadratic",
        }
    }

    /// `(β₀, β₂)` of the generating linear predictor.
    fn coefficients(self) -> (f64, f64) {
        match self {
            Violation::NullOk | Violation::Mixture => (-2.0, 0.0),
            Violation::Quadratic => (1.0, -4.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariates {
    /// `x_i = (i - 0.5) / n`.
    #[default]
    Equispaced,
    /// `x_i ~ U(0, 1)`, drawn per dataset.
    Uniform,
}

/// The five tests compared in the power study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "qq")]
    Qq,
    #[serde(rename = "pp")]
    Pp,
    #[serde(rename = "res-vs-fits")]
    ResVsFits,
    #[serde(rename = "scale-location")]
    ScaleLocation,
    #[serde(rename = "loglik-gof")]
    LoglikGof,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Qq,
        Method::Pp,
        Method::ResVsFits,
        Method::ScaleLocation,
        Method::LoglikGof,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Qq => "qq",
            Method::Pp => "pp",
            Method::ResVsFits => "res-vs-fits",
            Method::ScaleLocation => "scale-location",
            Method::LoglikGof => "loglik-gof",
        }
    }

    fn plot(self) -> Option<PlotKind> {
        match self {
            Method::Qq => Some(PlotKind::Qq),
            Method::Pp => Some(PlotKind::Pp),
            Method::ResVsFits => Some(PlotKind::ResVsFits),
            Method::ScaleLocation => Some(PlotKind::ScaleLocation),
            Method::LoglikGof => None,
        }
    }
}

macro_rules! display_and_parse {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                from_name(s.trim()).ok_or_else(|| Error::InvalidInput(format!("unknown {}: {s:?}", stringify!($t))))
            }
        }
    };
}

/// Parses a unit variant from its serde name or one of its aliases.
fn from_name<T: serde::de::DeserializeOwned>(name: &str) -> Option<T> {
    use serde::de::value::{Error as ValueError, StrDeserializer};
    use serde::de::IntoDeserializer;
    let de: StrDeserializer<'_, ValueError> = name.into_deserializer();
    T::deserialize(de).ok()
}

display_and_parse!(ScenarioModel);
display_and_parse!(Violation);
display_and_parse!(Method);

/// One cell of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: ScenarioModel,
    pub violation: Violation,
    pub n: usize,
    #[serde(default = "default_n_datasets")]
    pub n_datasets: usize,
    #[serde(default = "default_b", rename = "B", alias = "b")]
    pub b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub covariates: Covariates,
    #[serde(default = "default_m_grid")]
    pub m_grid: usize,
}

fn default_n_datasets() -> usize {
    200
}

fn default_b() -> usize {
    99
}

fn default_alpha() -> f64 {
    0.05
}

fn default_m_grid() -> usize {
    DEFAULT_M_GRID
}

impl ScenarioSpec {
    /// Desk-scale defaults: 200 datasets, B = 99, α = 0.05.
    pub fn new(model: ScenarioModel, violation: Violation, n: usize) -> Self {
        ScenarioSpec {
            model,
            violation,
            n,
            n_datasets: default_n_datasets(),
            b: default_b(),
            alpha: default_alpha(),
            seed: 0,
            covariates: Covariates::Equispaced,
            m_grid: default_m_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min_n = if self.model == ScenarioModel::CGlmm { 10 } else { 5 };
        if self.n < min_n {
            return Err(Error::InvalidInput(format!(
                "{} scenarios need n >= {min_n}, got {}",
                self.model, self.n
            )));
        }
        if self.n_datasets == 0 {
            return Err(Error::InvalidInput("n_datasets must be positive".into()));
        }
        if self.b < MIN_B {
            return Err(Error::InvalidInput(format!("B must be at least {MIN_B}, got {}", self.b)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.m_grid < 2 {
            return Err(Error::InvalidInput("m_grid must be at least 2".into()));
        }
        Ok(())
    }
}

/// Covariate values for a dataset of size `n`.
pub fn covariates(kind: Covariates, n: usize, rng: &mut Stream) -> Vec<f64> {
    match kind {
        Covariates::Equispaced => (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect(),
        Covariates::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
    }
}

/// Linear predictor of the generating model (without random intercepts).
pub fn true_eta(v: Violation, x: &[f64]) -> Vec<f64> {
    let (b0, b2) = v.coefficients();
    x.iter().map(|&x| b0 + 4.0 * x + b2 * x * x).collect()
}

/// Simulates one dataset of scenario `s`. The design always has an
/// intercept and `x`; the mixed model's groups are `i mod 5`.
pub fn generate_dataset(s: &ScenarioSpec, rng: &mut Stream) -> Result<Dataset> {
    s.validate()?;
    let x = covariates(s.covariates, s.n, rng);
    let mut eta = true_eta(s.violation, &x);
    let group: Option<Vec<usize>> = (s.model == ScenarioModel::CGlmm).then(|| (0..s.n).map(|i| i % N_GROUPS).collect());
    if let Some(g) = &group {
        let re = Normal::new(0.0, OMEGA).expect("finite omega");
        let eps: Vec<f64> = (0..N_GROUPS).map(|_| re.sample(rng)).collect();
        for (e, &j) in eta.iter_mut().zip(g) {
            *e += eps[j];
        }
    }
    let inflate = Bernoulli::new(MIXTURE_WEIGHT).expect("valid weight");
    let mixture = s.violation == Violation::Mixture;
    let y: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let scale = if mixture && inflate.sample(rng) { MIXTURE_SCALE } else { 1.0 };
            match s.model {
                ScenarioModel::ALm => {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    e + scale * SIGMA * z
                }
                ScenarioModel::BGlm | ScenarioModel::CGlmm => draw_poisson(scale * e.exp(), rng),
            }
        })
        .collect();
    Dataset::with_intercept(y, &[x], group)
}

/// Rejection decisions of the five methods on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOutcome {
    pub reject: [bool; 5],
}

/// Generates dataset `index` of scenario `s`, fits it and runs all five
/// tests from a single bootstrap.
pub fn run_dataset(s: &ScenarioSpec, index: usize) -> Result<DatasetOutcome> {
    let mut rng = stream(s.seed, &[index as u64]);
    let d = generate_dataset(s, &mut rng)?;
    let m = fit(s.model.kind(), &d, &FitControl::default())?;
    let reps = bootstrap(&m, s.b, derive_seed(s.seed, &[index as u64]))?;
    let mut reject = [false; 5];
    for (slot, method) in reject.iter_mut().zip(Method::ALL) {
        *slot = match method.plot() {
            Some(kind) => {
                envelope_from_replicates(&m, &reps, kind, s.alpha, EnvelopeMode::StudentizedMad, s.m_grid)?.reject
            }
            None => loglik_p_value(m.max_log_likelihood(), &reps.logliks) <= s.alpha,
        };
    }
    Ok(DatasetOutcome { reject })
}

/// Rejection rate of one method in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub model: ScenarioModel,
    pub violation: Violation,
    pub n: usize,
    pub method: Method,
    pub rejections: usize,
    /// Datasets for which every test ran; the rate's denominator.
    pub completed: usize,
    pub rate: f64,
    /// Monte Carlo standard error `sqrt(rate (1 - rate) / completed)`.
    pub se: f64,
    pub n_datasets: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

/// Per-scenario bookkeeping alongside the rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub spec: ScenarioSpec,
    pub completed: usize,
    /// Datasets dropped because the fit or the bootstrap failed.
    pub failed: usize,
    pub failure_messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
    pub scenarios: Vec<ScenarioSummary>,
}

impl PowerTable {
    pub fn get(&self, model: ScenarioModel, violation: Violation, n: usize, method: Method) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.violation == violation && r.n == n && r.method == method)
    }

    pub fn extend(&mut self, other: PowerTable) {
        self.rows.extend(other.rows);
        self.scenarios.extend(other.scenarios);
    }
}

/// Monte Carlo standard error of a binomial proportion.
pub fn binomial_se(rate: f64, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (rate * (1.0 - rate) / trials as f64).sqrt()
}

/// Runs every dataset of `s` and tabulates the five rejection rates.
pub fn run_scenario(s: &ScenarioSpec) -> Result<PowerTable> {
    s.validate()?;
    let outcomes: Vec<Result<DatasetOutcome>> = (0..s.n_datasets).into_par_iter().map(|i| run_dataset(s, i)).collect();
    let mut counts = [0usize; 5];
    let mut completed = 0;
    let mut failure_messages = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(out) => {
                completed += 1;
                for (c, r) in counts.iter_mut().zip(out.reject) {
                    *c += r as usize;
                }
            }
            Err(e) => failure_messages.push(format!("dataset {i}: {e}")),
        }
    }
    let rows = Method::ALL
        .iter()
        .zip(counts)
        .map(|(&method, rejections)| {
            let rate = if completed == 0 { 0.0 } else { rejections as f64 / completed as f64 };
            PowerRow {
                model: s.model,
                violation: s.violation,
                n: s.n,
                method,
                rejections,
                completed,
                rate,
                se: binomial_se(rate, completed),
                n_datasets: s.n_datasets,
                b: s.b,
                seed: s.seed,
            }
        })
        .collect();
    Ok(PowerTable {
        rows,
        scenarios: vec![ScenarioSummary {
            spec: *s,
            completed,
            failed: failure_messages.len(),
            failure_messages,
        }],
    })
}

/// Runs a list of scenarios in order.
pub fn run_grid(specs: &[ScenarioSpec]) -> Result<PowerTable> {
    let mut table = PowerTable::default();
    for s in specs {
        table.extend(run_scenario(s)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(model: ScenarioModel, violation: Violation, n: usize) -> ScenarioSpec {
        ScenarioSpec::new(model, violation, n)
    }

    #[test]
    fn quadratic_peaks_at_centre() {
        let eta = true_eta(Violation::Quadratic, &[0.25, 0.5, 0.75]);
        assert_eq!(eta[1], 2.0);
        assert_eq!(eta[0], eta[2]);
        assert!(eta[0] < eta[1]);
    }

    #[test]
    fn equispaced_design() {
        let mut rng = stream(0, &[]);
        assert_eq!(covariates(Covariates::Equispaced, 4, &mut rng), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn glmm_groups_cycle_through_five_labels() {
        let s = spec(ScenarioModel::CGlmm, Violation::NullOk, 12);
        let d = generate_dataset(&s, &mut stream(1, &[])).unwrap();
        assert_eq!(d.group().unwrap(), &[0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1]);
        assert_eq!(d.n_groups(), 5);
        assert!(d.y().iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
    }

    #[test]
    fn null_lm_errors_center_on_zero() {
        let s = spec(ScenarioModel::ALm, Violation::NullOk, 100);
        let mut rng = stream(2, &[]);
        let mut sum = 0.0;
        let mut count = 0;
        for _ in 0..1000 {
            let d = generate_dataset(&s, &mut rng).unwrap();
            let eta = true_eta(Violation::NullOk, &d.x().column(1).iter().copied().collect::<Vec<_>>());
            sum += d.y().iter().zip(&eta).map(|(y, e)| y - e).sum::<f64>();
            count += d.n();
        }
        assert!((sum / count as f64).abs() < 0.01);
    }

    #[test]
    fn mixture_variance_matches_identity() {
        let s = spec(ScenarioModel::ALm, Violation::Mixture, 100);
        let mut rng = stream(3, &[]);
        let mut ss = 0.0;
        let mut count = 0;
        for _ in 0..1000 {
            let d = generate_dataset(&s, &mut rng).unwrap();
            let eta = true_eta(Violation::Mixture, &d.x().column(1).iter().copied().collect::<Vec<_>>());
            ss += d.y().iter().zip(&eta).map(|(y, e)| (y - e).powi(2)).sum::<f64>();
            count += d.n();
        }
        let want = (0.9 + 0.1 * 16.0) * SIGMA * SIGMA;
        assert!((ss / count as f64 / want - 1.0).abs() < 0.02, "{}", ss / count as f64);
    }

    #[test]
    fn poisson_mixture_inflates_the_mean() {
        let s = spec(ScenarioModel::BGlm, Violation::Mixture, 100);
        let mut rng = stream(4, &[]);
        let eta = true_eta(Violation::Mixture, &covariates(Covariates::Equispaced, 100, &mut rng));
        let expected: f64 = eta.iter().map(|e| e.exp()).sum::<f64>() * (0.9 + 0.1 * 4.0);
        let mut total = 0.0;
        for _ in 0..2000 {
            total += generate_dataset(&s, &mut rng).unwrap().y().iter().sum::<f64>();
        }
        assert!((total / 2000.0 / expected - 1.0).abs() < 0.01);
    }

    #[test]
    fn names_parse_back() {
        for m in ScenarioModel::ALL {
            assert_eq!(m.name().parse::<ScenarioModel>().unwrap(), m);
        }
        for v in Violation::ALL {
            assert_eq!(v.name().parse::<Violation>().unwrap(), v);
        }
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("null_ok".parse::<Violation>().unwrap(), Violation::NullOk);
        assert!("d-gam".parse::<ScenarioModel>().is_err());
    }

    #[test]
    fn small_glmm_is_rejected() {
        let s = spec(ScenarioModel::CGlmm, Violation::NullOk, 8);
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenario_is_reproducible() {
        let s = ScenarioSpec {
            n_datasets: 6,
            b: 19,
            seed: 5,
            ..spec(ScenarioModel::BGlm, Violation::Mixture, 20)
        };
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 5);
        for r in &a.rows {
            assert!((0.0..=1.0).contains(&r.rate));
            assert_eq!(r.se, binomial_se(r.rate, r.completed));
        }
    }
}
