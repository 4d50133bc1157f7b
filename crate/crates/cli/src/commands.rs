use std::path::PathBuf;

use envdiag::diagnostics::{diagnose, EnvelopeConfig};
use envdiag::harness::{run_grid, PowerTable, ScenarioSummary};
use envdiag::model::FitFlags;
use envdiag::{fit, DiagnosticResult, EnvelopeMode, FitControl, FittedModel, ModelKind, PlotKind, ResidualKind};
use serde::Serialize;

use crate::config::{PowerStudyConfig, RunConfig};
use crate::data::{load_csv, LoadedData};
use crate::output::{envelope_csv, power_csv, OutputSet};
use crate::svg;
use crate::AppResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub model: ModelKind,
    pub n: usize,
    pub predictors: Vec<String>,
    /// Intercept first, then one per predictor.
    pub beta: Vec<f64>,
    pub sigma: Option<f64>,
    pub omega: Option<f64>,
    pub n_groups: usize,
    pub loglik: f64,
    pub iterations: usize,
    pub residuals: ResidualKind,
    pub flags: FitFlags,
}

impl FitSummary {
    fn new(m: &FittedModel, data: &LoadedData) -> Self {
        FitSummary {
            model: m.kind(),
            n: m.dataset().n(),
            predictors: data.predictors.clone(),
            beta: m.beta().to_vec(),
            sigma: m.sigma(),
            omega: m.omega(),
            n_groups: m.dataset().n_groups(),
            loglik: m.loglik(),
            iterations: m.iterations(),
            residuals: m.residual_kind(),
            flags: m.flags(),
        }
    }
}

fn load_and_fit(c: &RunConfig) -> AppResult<(LoadedData, FittedModel)> {
    let path = c.data_path.as_deref().expect("validated config has a data path");
    let data = load_csv(path, &c.columns())?;
    let m = fit(c.model, &data.dataset, &FitControl::default())?;
    Ok((data, m))
}

/// Fits the configured model and summarizes it.
pub fn run_fit(c: &RunConfig) -> AppResult<FitSummary> {
    if c.data_path.is_none() {
        return Err(crate::AppError::Config("no data file given".into()));
    }
    let (data, m) = load_and_fit(c)?;
    Ok(FitSummary::new(&m, &data))
}

/// Files and headline numbers for one diagnostic plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotArtifact {
    pub kind: PlotKind,
    pub svg_path: PathBuf,
    pub csv_path: PathBuf,
    pub reject: bool,
    pub p_value: f64,
    pub critical: f64,
    pub refit_failures: usize,
    pub zero_variance_points: Vec<usize>,
}

#[derive(Serialize)]
struct DiagnoseManifest<'a> {
    config: &'a RunConfig,
    fit: FitSummary,
    envelope_mode: EnvelopeMode,
    plots: Vec<ManifestPlot>,
}

#[derive(Serialize)]
struct ManifestPlot {
    kind: PlotKind,
    svg: String,
    csv: String,
    reject: bool,
    p_value: f64,
    critical: f64,
    refit_failures: usize,
}

fn unique(plots: &[PlotKind]) -> Vec<PlotKind> {
    let mut out = Vec::new();
    for &p in plots {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Fits the model, runs one bootstrap, and writes an SVG and CSV per plot
/// plus `manifest.json` into the output directory. On error nothing written
/// by this run is left behind.
pub fn run_diagnose(c: &RunConfig) -> AppResult<Vec<PlotArtifact>> {
    c.validate()?;
    let (data, m) = load_and_fit(c)?;
    let kinds = unique(&c.plots);
    let cfg = EnvelopeConfig {
        b: c.b,
        alpha: c.alpha,
        seed: c.seed,
        m_grid: c.m_grid,
        mode: EnvelopeMode::StudentizedMad,
    };
    let results: Vec<DiagnosticResult> = diagnose(&m, &kinds, &cfg)?;

    let mut out = OutputSet::create(&c.output_dir)?;
    let mut artifacts = Vec::new();
    let mut plots = Vec::new();
    for r in &results {
        let svg_name = format!("{}.svg", r.kind);
        let csv_name = format!("{}.csv", r.kind);
        let svg_path = out.write(&svg_name, &svg::render(r))?;
        let csv_path = out.write(&csv_name, &envelope_csv(r))?;
        artifacts.push(PlotArtifact {
            kind: r.kind,
            svg_path,
            csv_path,
            reject: r.reject,
            p_value: r.p_value,
            critical: r.envelope.critical,
            refit_failures: r.failures,
            zero_variance_points: r.envelope.zero_variance_points.clone(),
        });
        plots.push(ManifestPlot {
            kind: r.kind,
            svg: svg_name,
            csv: csv_name,
            reject: r.reject,
            p_value: r.p_value,
            critical: r.envelope.critical,
            refit_failures: r.failures,
        });
    }
    out.write_json(
        "manifest.json",
        &DiagnoseManifest {
            config: c,
            fit: FitSummary::new(&m, &data),
            envelope_mode: cfg.mode,
            plots,
        },
    )?;
    out.keep();
    Ok(artifacts)
}

#[derive(Serialize)]
struct PowerManifest<'a> {
    config: &'a PowerStudyConfig,
    table: &'a str,
    scenarios: &'a [ScenarioSummary],
}

/// Runs every scenario of the study and writes `power.csv` and
/// `manifest.json`.
pub fn run_power_study(c: &PowerStudyConfig) -> AppResult<(PowerTable, Vec<PathBuf>)> {
    let specs = c.expand()?;
    let table = run_grid(&specs)?;
    let mut out = OutputSet::create(&c.output_dir)?;
    out.write("power.csv", &power_csv(&table))?;
    out.write_json(
        "manifest.json",
        &PowerManifest {
            config: c,
            table: "power.csv",
            scenarios: &table.scenarios,
        },
    )?;
    let files = out.keep();
    Ok((table, files))
}
