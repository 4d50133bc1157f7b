//! Diagnostic functionals and the parametric bootstrap that turns them into
//! envelope tests.
//!
//! A diagnostic is a function of the residuals (and, for the smoother plots,
//! of the fitted linear predictor) sampled on a grid. The observed function
//! is row 0 of an ensemble; the other rows come from refitting the model to
//! responses simulated from it. The smoother plots always smooth against the
//! observed `η̂`, so every row shares one grid and one smoother design.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::envelope::{build_envelope, EnvelopeMode, FunctionEnsemble, GlobalEnvelope};
use crate::error::{Error, Result};
use crate::model::ModelCapability;
use crate::rng::stream;
use crate::smoother::{grid_points, SmootherDesign};

/// Smallest number of functions (observed included) accepted by the
/// bootstrap tests.
pub const MIN_B: usize = 19;
pub const DEFAULT_B: usize = 199;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_M_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlotKind {
    #[serde(rename = "qq")]
    Qq,
    #[serde(rename = "pp")]
    Pp,
    #[serde(rename = "res-vs-fits", alias = "res_vs_fits")]
    ResVsFits,
    #[serde(rename = "scale-location", alias = "scale_location")]
    ScaleLocation,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Qq, PlotKind::Pp, PlotKind::ResVsFits, PlotKind::ScaleLocation];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Qq => "qq",
            PlotKind::Pp => "pp",
            PlotKind::ResVsFits => "res-vs-fits",
            PlotKind::ScaleLocation => "scale-location",
        }
    }

    fn uses_smoother(self) -> bool {
        matches!(self, PlotKind::ResVsFits | PlotKind::ScaleLocation)
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "qq" => Ok(PlotKind::Qq),
            "pp" => Ok(PlotKind::Pp),
            "res-vs-fits" | "resfit" | "residuals" => Ok(PlotKind::ResVsFits),
            "scale-location" | "scalelocation" => Ok(PlotKind::ScaleLocation),
            other => Err(Error::InvalidInput(format!("unknown plot kind {other:?}"))),
        }
    }
}

/// Settings for an envelope run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    /// Ensemble size, observed function included.
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Evaluation points for the smoother functionals.
    pub m_grid: usize,
    pub mode: EnvelopeMode,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            b: DEFAULT_B,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            m_grid: DEFAULT_M_GRID,
            mode: EnvelopeMode::StudentizedMad,
        }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < MIN_B {
            return Err(Error::InvalidInput(format!("B must be at least {MIN_B}, got {}", self.b)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.m_grid < 2 {
            return Err(Error::InvalidInput(format!("grid needs at least 2 points, got {}", self.m_grid)));
        }
        Ok(())
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `Φ⁻¹(p)`, polished with one Newton step on `Φ`.
fn normal_quantile(normal: &Normal, p: f64) -> f64 {
    let z = normal.inverse_cdf(p);
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    z - (normal.cdf(z) - p) / density
}

fn check_len(e: &[f64]) -> Result<()> {
    if e.len() < 3 {
        return Err(Error::TooFewRows(e.len()));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("residuals contain non-finite values".into()));
    }
    Ok(())
}

fn sorted(e: &[f64]) -> Vec<f64> {
    let mut s = e.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn plotting_positions(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect()
}

/// Sorted residuals against the normal quantiles `Φ⁻¹((i - 0.5)/n)`.
pub fn qq_function(e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(e)?;
    let normal = std_normal();
    let grid = plotting_positions(e.len()).into_iter().map(|p| normal_quantile(&normal, p)).collect();
    Ok((grid, sorted(e)))
}

/// `Φ` of the sorted residuals against the plotting positions `(i - 0.5)/n`.
pub fn pp_function(e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(e)?;
    let normal = std_normal();
    let values = sorted(e).into_iter().map(|v| normal.cdf(v)).collect();
    Ok((plotting_positions(e.len()), values))
}

fn smooth_on_grid(design: &SmootherDesign, y: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let fit = design.fit(y)?;
    Ok(grid.iter().map(|&g| fit.eval(g)).collect())
}

fn smoother_grid(design: &SmootherDesign, m_grid: usize) -> Vec<f64> {
    let (lo, hi) = design.range();
    grid_points(lo, hi, m_grid)
}

/// Smoother of `e` against `eta` on `m_grid` equispaced points spanning the
/// range of `eta`.
pub fn resfit_function(eta: &[f64], e: &[f64], m_grid: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let design = SmootherDesign::new(eta)?;
    let grid = smoother_grid(&design, m_grid);
    let values = smooth_on_grid(&design, e, &grid)?;
    Ok((grid, values))
}

/// Smoother of `|e|` against `eta`.
pub fn scalelocation_function(eta: &[f64], e: &[f64], m_grid: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let abs: Vec<f64> = e.iter().map(|v| v.abs()).collect();
    resfit_function(eta, &abs, m_grid)
}

/// Residuals and maximized log-likelihoods of `B - 1` refits to data
/// simulated from a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicates {
    pub residuals: Vec<Vec<f64>>,
    pub logliks: Vec<f64>,
    /// Simulated datasets that had to be redrawn because the refit failed.
    pub failures: usize,
    pub b: usize,
    pub seed: u64,
}

enum Replicate {
    Done { residuals: Vec<f64>, loglik: f64, failures: usize },
    Exhausted,
}

/// Largest number of failed refits tolerated in an ensemble of `b`.
pub fn refit_failure_budget(b: usize) -> usize {
    b / 10
}

/// Runs the parametric bootstrap: for each replicate `1..b`, simulate from
/// `m`, refit, and keep the refit's residuals and log-likelihood.
///
/// Replicate `r`, attempt `a` draws from the stream `(seed, [r, a])`, so the
/// output does not depend on how the replicates are scheduled.
pub fn bootstrap<M: ModelCapability>(m: &M, b: usize, seed: u64) -> Result<Replicates> {
    if b < MIN_B {
        return Err(Error::InvalidInput(format!("B must be at least {MIN_B}, got {b}")));
    }
    let budget = refit_failure_budget(b);
    let outcomes: Vec<Replicate> = (1..b as u64)
        .into_par_iter()
        .map(|r| {
            for attempt in 0..=budget as u64 {
                let mut rng = stream(seed, &[r, attempt]);
                let y = m.simulate(&mut rng);
                let done = m.refit(&y).and_then(|fit| Ok((fit.residuals()?, fit.max_log_likelihood())));
                if let Ok((residuals, loglik)) = done {
                    if residuals.iter().all(|v| v.is_finite()) && loglik.is_finite() {
                        return Replicate::Done { residuals, loglik, failures: attempt as usize };
                    }
                }
            }
            Replicate::Exhausted
        })
        .collect();

    let mut out = Replicates {
        residuals: Vec::with_capacity(b - 1),
        logliks: Vec::with_capacity(b - 1),
        failures: 0,
        b,
        seed,
    };
    for o in outcomes {
        match o {
            Replicate::Done { residuals, loglik, failures } => {
                out.residuals.push(residuals);
                out.logliks.push(loglik);
                out.failures += failures;
            }
            Replicate::Exhausted => out.failures += budget + 1,
        }
    }
    if out.failures > budget {
        return Err(Error::TooManyRefitFailures {
            failures: out.failures,
            allowed: budget,
        });
    }
    Ok(out)
}

/// Outcome of one envelope diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticResult {
    pub kind: PlotKind,
    pub grid: Vec<f64>,
    pub observed: Vec<f64>,
    pub envelope: GlobalEnvelope,
    /// Scatter overlay in plot coordinates.
    pub points: Option<Vec<(f64, f64)>>,
    pub reject: bool,
    pub p_value: f64,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
    #[serde(skip)]
    pub ensemble: FunctionEnsemble,
}

/// Builds the ensemble for `kind` from the observed model and its
/// replicates, and applies the envelope.
pub fn envelope_from_replicates<M: ModelCapability>(
    m: &M,
    reps: &Replicates,
    kind: PlotKind,
    alpha: f64,
    mode: EnvelopeMode,
    m_grid: usize,
) -> Result<DiagnosticResult> {
    let e = m.residuals()?;
    let (grid, rows, points) = if kind.uses_smoother() {
        let eta = m.predict();
        let design = SmootherDesign::new(&eta)?;
        let grid = smoother_grid(&design, m_grid);
        let abs = kind == PlotKind::ScaleLocation;
        let prep = |r: &[f64]| -> Vec<f64> {
            if abs {
                r.iter().map(|v| v.abs()).collect()
            } else {
                r.to_vec()
            }
        };
        let observed = prep(&e);
        let points = eta.iter().copied().zip(observed.iter().copied()).collect();
        let mut rows = vec![smooth_on_grid(&design, &observed, &grid)?];
        let replicated: Vec<Vec<f64>> = reps
            .residuals
            .par_iter()
            .map(|r| smooth_on_grid(&design, &prep(r), &grid))
            .collect::<Result<_>>()?;
        rows.extend(replicated);
        (grid, rows, points)
    } else {
        let f = match kind {
            PlotKind::Qq => qq_function,
            _ => pp_function,
        };
        let (grid, observed) = f(&e)?;
        let points = grid.iter().copied().zip(observed.iter().copied()).collect();
        let mut rows = vec![observed];
        for r in &reps.residuals {
            rows.push(f(r)?.1);
        }
        (grid, rows, points)
    };
    let observed = rows[0].clone();
    let ensemble = FunctionEnsemble::new(grid.clone(), rows)?;
    let envelope = build_envelope(&ensemble, alpha, mode)?;
    Ok(DiagnosticResult {
        kind,
        grid,
        observed,
        reject: envelope.observed_outside,
        p_value: envelope.p_value,
        envelope,
        points: Some(points),
        b: reps.b,
        seed: reps.seed,
        failures: reps.failures,
        ensemble,
    })
}

/// Runs the bootstrap once and builds an envelope for each of `kinds`.
pub fn diagnose<M: ModelCapability>(m: &M, kinds: &[PlotKind], cfg: &EnvelopeConfig) -> Result<Vec<DiagnosticResult>> {
    cfg.validate()?;
    let reps = bootstrap(m, cfg.b, cfg.seed)?;
    kinds
        .iter()
        .map(|&k| envelope_from_replicates(m, &reps, k, cfg.alpha, cfg.mode, cfg.m_grid))
        .collect()
}

/// Global envelope for one plot kind, Studentized MAD mode.
pub fn plot_envelope<M: ModelCapability>(
    m: &M,
    kind: PlotKind,
    b: usize,
    alpha: f64,
    seed: u64,
    m_grid: usize,
) -> Result<DiagnosticResult> {
    let cfg = EnvelopeConfig {
        b,
        alpha,
        seed,
        m_grid,
        mode: EnvelopeMode::StudentizedMad,
    };
    Ok(diagnose(m, &[kind], &cfg)?.remove(0))
}

/// Monte Carlo p-value of the observed maximized log-likelihood among the
/// replicates: `(1 + #{ll_b ≤ ll_obs}) / B`. Small values signal lack of fit.
pub fn loglik_p_value(observed: f64, replicates: &[f64]) -> f64 {
    let below = replicates.iter().filter(|&&v| v <= observed).count();
    (1 + below) as f64 / (replicates.len() + 1) as f64
}

/// Parametric-bootstrap goodness-of-fit test on the maximized
/// log-likelihood at level 0.05. Returns `(p_value, reject)`.
pub fn loglik_gof_test<M: ModelCapability>(m: &M, b: usize, seed: u64) -> Result<(f64, bool)> {
    let reps = bootstrap(m, b, seed)?;
    let p = loglik_p_value(m.max_log_likelihood(), &reps.logliks);
    Ok((p, p <= DEFAULT_ALPHA))
}
