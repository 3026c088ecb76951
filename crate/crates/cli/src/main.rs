mod commands;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cluster_expansion::config::RunConfig;
use cluster_expansion::Error;

#[derive(Parser, Debug)]
#[command(name = "clex", version, about = "Cluster expansion of lattice spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Engine log Z(J) and truncated correlations.
    Expand(Common),
    /// Brute-force log Z(J) and correlations.
    Oracle(Common),
    /// Engine and oracle side by side with a diff table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Largest accepted absolute difference.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Evaluate the smallness and positivity conditions.
    CheckHypotheses(Common),
    /// Built-in combinatorics and covariance suites.
    Selftest(Common),
    /// Two-point correlations against distance, with exponential fits.
    Decay(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a field by dotted path, e.g. `expansion.max_mayer_order=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Run seed; also seeds the quasi-Monte Carlo shifts.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> cluster_expansion::Result<RunConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config {
                path: "$".into(),
                message: format!("cannot read {}: {e}", p.display()),
            })?,
            None => String::new(),
        };
        let mut overrides = Vec::new();
        for raw in &self.overrides {
            let (k, v) = raw.split_once('=').ok_or_else(|| Error::Config {
                path: raw.clone(),
                message: "override must look like key=value".into(),
            })?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
            overrides.push(("oracle.seed".into(), seed.to_string()));
        }
        if let Some(w) = self.workers {
            overrides.push(("workers".into(), w.to_string()));
        }
        RunConfig::from_json(&text, &overrides)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) | Error::Input(_) | Error::Resource { .. } => 2,
        _ => 3,
    }
}

fn report(e: &Error) {
    let kind = match e {
        Error::Config { .. } => "config",
        Error::Json(_) => "json",
        Error::Input(_) => "input",
        Error::Resource { .. } => "resource",
        Error::Numeric { .. } => "numeric",
        Error::Model(_) => "model",
        Error::Consistency(_) => "consistency",
        Error::Invariant(_) => "invariant",
        Error::Stability(_) => "stability",
        Error::Normalization(_) => "normalization",
        Error::Io(_) => "io",
    };
    let mut payload = serde_json::json!({ "error": kind, "message": e.to_string() });
    match e {
        Error::Config { path, .. } => payload["path"] = path.clone().into(),
        Error::Numeric { residual, .. } => payload["residual"] = (*residual).into(),
        _ => {}
    }
    eprintln!("{payload}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
