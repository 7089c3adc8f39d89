//! Command-line front end; all substance lives in the library.

use clap::{Args, Parser, Subcommand};
use magflow::lab::{self, ExperimentConfig, ExperimentKind, LabError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "magflow", version, about = "Twisted geodesic flows on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; anything given here overrides the
/// config file.
#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output artifact path (stdout if omitted)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Bundled model name or model file
    #[arg(long, value_name = "NAME")]
    model: Option<String>,
    /// Sampling seed
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Time horizon
    #[arg(short = 'T', long, value_name = "FLOAT")]
    horizon: Option<f64>,
    /// Integration tolerance
    #[arg(long, value_name = "FLOAT")]
    tol: Option<f64>,
    /// Number of samples / initial conditions
    #[arg(long, value_name = "INT")]
    samples: Option<usize>,
    /// Per-axis torus quadrature grid (0 = auto)
    #[arg(long, value_name = "INT")]
    grid: Option<usize>,
    /// Sphere quadrature azimuthal count (even)
    #[arg(long, value_name = "INT")]
    sphere: Option<usize>,
    /// Backward horizons, comma separated
    #[arg(long, value_name = "T1,T2,..", value_delimiter = ',')]
    times: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite on a model
    Validate(Common),
    /// Integrate one orbit and write it as CSV
    Integrate(Common),
    /// Scan seeded orbits for first conjugate points (CSV)
    ConjugateScan(Common),
    /// Averaged curvature report (JSON)
    Sigma(Common),
    /// Backward-limit diagnostics of the stable field (JSON)
    GreenLimit(Common),
    /// Gauge decomposition of the magnetic form (JSON)
    Decompose(Common),
}

impl Common {
    fn into_config(self) -> Result<(ExperimentConfig, Option<PathBuf>), LabError> {
        let mut cfg = match &self.config {
            Some(path) => lab::load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if self.model.is_some() {
            cfg.model = self.model;
            cfg.model_inline = None;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
        }
        if let Some(v) = self.grid {
            cfg.grid = v;
        }
        if let Some(v) = self.sphere {
            cfg.sphere = v;
        }
        if let Some(v) = self.times {
            cfg.times = v;
        }
        cfg.validate()?;
        Ok((cfg, self.out))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Validate(c) => (ExperimentKind::Validate, c),
        Command::Integrate(c) => (ExperimentKind::Integrate, c),
        Command::ConjugateScan(c) => (ExperimentKind::ConjugateScan, c),
        Command::Sigma(c) => (ExperimentKind::Sigma, c),
        Command::GreenLimit(c) => (ExperimentKind::GreenLimit, c),
        Command::Decompose(c) => (ExperimentKind::Decompose, c),
    };
    let (cfg, out) = match common.into_config() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match lab::run_experiment(kind, &cfg, out.as_deref()) {
        Ok(summary) => {
            print!("{}", summary.message);
            if !summary.message.ends_with('\n') {
                println!();
            }
            if summary.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ (LabError::Schema(_) | LabError::Parse(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
