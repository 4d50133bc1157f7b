use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use envdiag::{ModelKind, PlotKind};
use envdiag_cli::{run_diagnose, run_fit, run_power_study, AppResult, PowerStudyConfig, RunConfig};

/// Global simulation envelopes for regression residual plots.
#[derive(Parser)]
#[command(name = "envdiag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and print its estimates as JSON.
    Fit(RunArgs),
    /// Fit a model and write envelope plots for its residuals.
    Diagnose(RunArgs),
    /// Run a simulation power study.
    PowerStudy(PowerArgs),
}

#[derive(Args)]
struct RunArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Comma-separated: qq, pp, res-vs-fits, scale-location.
    #[arg(long, value_delimiter = ',', value_parser = parse_plot)]
    plots: Option<Vec<PlotKind>>,
    /// Ensemble size, observed data included.
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation points for the smoother plots.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Response column (default "y").
    #[arg(long)]
    response: Option<String>,
    /// Comma-separated predictor columns (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    predictors: Option<Vec<String>>,
    /// Grouping column for the random-intercept model.
    #[arg(long)]
    group: Option<String>,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: envdiag::Error| e.to_string())
}

fn parse_plot(s: &str) -> Result<PlotKind, String> {
    s.parse().map_err(|e: envdiag::Error| e.to_string())
}

impl RunArgs {
    fn into_config(self) -> AppResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.data {
            c.data_path = Some(v);
        }
        if let Some(v) = self.model {
            c.model = v;
        }
        if let Some(v) = self.plots {
            c.plots = v;
        }
        if let Some(v) = self.b {
            c.b = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.grid {
            c.m_grid = v;
        }
        if let Some(v) = self.out {
            c.output_dir = v;
        }
        if let Some(v) = self.response {
            c.response_column = v;
        }
        if let Some(v) = self.predictors {
            c.predictor_columns = v;
        }
        if let Some(v) = self.group {
            c.group_column = Some(v);
        }
        Ok(c)
    }
}

impl PowerArgs {
    fn into_config(self) -> AppResult<PowerStudyConfig> {
        let mut c = PowerStudyConfig::from_file(&self.config)?;
        if let Some(v) = self.b {
            c.b = v;
            for s in &mut c.scenarios {
                s.b = v;
            }
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
            for s in &mut c.scenarios {
                s.alpha = v;
            }
        }
        if let Some(v) = self.seed {
            c.seed = v;
            for s in &mut c.scenarios {
                s.seed = v;
            }
        }
        if let Some(v) = self.grid {
            c.m_grid = v;
            for s in &mut c.scenarios {
                s.m_grid = v;
            }
        }
        if let Some(v) = self.out {
            c.output_dir = v;
        }
        Ok(c)
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ENVDIAG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("ENVDIAG_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("ENVDIAG_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Fit(args) => {
            let summary = run_fit(&args.into_config()?)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Diagnose(args) => {
            for a in run_diagnose(&args.into_config()?)? {
                println!(
                    "{:<15} reject={:<5} p={:.4}  {}",
                    a.kind.to_string(),
                    a.reject,
                    a.p_value,
                    a.svg_path.display()
                );
            }
        }
        Command::PowerStudy(args) => {
            let (table, files) = run_power_study(&args.into_config()?)?;
            for r in &table.rows {
                println!(
                    "{:<7} {:<10} n={:<4} {:<15} rate={:.3} se={:.3}",
                    r.model.to_string(),
                    r.violation.to_string(),
                    r.n,
                    r.method.to_string(),
                    r.rate,
                    r.se
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("envdiag: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("envdiag: {e}");
            ExitCode::FAILURE
        }
    }
}
