use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use edmc_cli::{
    cmd_complete, cmd_experiment, cmd_simulate, cmd_validate, ExperimentSpec, Method,
    ValidationFailure,
};

/// Bayesian completion of Euclidean distance matrices.
///
/// Exit codes: 0 success, 1 invalid input or failed validation, 2 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "edmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trial and write it as a JSON fixture.
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Probability that each unordered pair is observed.
        #[arg(long)]
        fraction: f64,
        /// Target signal-to-noise ratio in dB; omit for noiseless observations.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete the EDM of a fixture.
    Complete {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Bmcgc)]
        method: Method,
        /// JSON file with optional `hyperparams`, `chain`, `map` and `warm_start` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the chain and MAP seeds from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Write per-iteration sampler diagnostics as NDJSON.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Run an experiment grid described by a JSON spec.
    Experiment {
        /// Experiment spec file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `threads`.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a matrix for EDM structure and rank bounds.
    Validate {
        /// Square matrix as JSON rows, a result file, or headerless CSV.
        #[arg(long)]
        edm: PathBuf,
        /// Embedding dimension for the rank bounds.
        #[arg(long)]
        d: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            n,
            d,
            fraction,
            snr_db,
            seed,
            out,
        } => {
            let r = cmd_simulate(n, d, fraction, snr_db, seed, &out)?;
            println!("observed_pairs {}", r.observed_pairs);
            println!("realized_snr_db {}", r.realized_snr_db);
            Ok(true)
        }
        Command::Complete {
            fixture,
            method,
            config,
            seed,
            out,
            diagnostics,
        } => {
            let r = cmd_complete(
                &fixture,
                method,
                config.as_deref(),
                seed,
                &out,
                diagnostics.as_deref(),
            )?;
            if let Some(e) = r.relative_error {
                println!("relative_error {e}");
            }
            Ok(true)
        }
        Command::Experiment {
            config,
            out,
            seed,
            threads,
        } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if let Some(o) = out {
                spec.output_dir = o;
            }
            if let Some(s) = seed {
                spec.base_seed = s;
            }
            if let Some(t) = threads {
                spec.threads = t;
            }
            let outcome = cmd_experiment(&spec)?;
            println!("fraction,mean_error,std_error");
            for row in &outcome.summary {
                println!("{},{},{}", row.fraction, row.mean_error, row.std_error);
            }
            Ok(true)
        }
        Command::Validate { edm, d, out } => {
            let report = cmd_validate(&edm, d)?;
            let text = serde_json::to_string_pretty(&report)?;
            // A closed pipe (e.g. `| head`) should not turn the verdict into a panic.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            if let Some(p) = out {
                std::fs::write(&p, format!("{text}\n"))?;
            }
            Ok(report.valid)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationFailure>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
