//! Commands behind the `edmc` binary: trial simulation, single-fixture
//! completion, seeded experiment grids and EDM validation.

pub mod experiment;

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use edmc::geometry::{relative_error, EdmReport};
use edmc::map_solver::{solve_map, MapConfig};
use edmc::model::HyperParamsConfig;
use edmc::sampler::{run_chain_with_observer, ChainConfig, DiagnosticRecord};
use edmc::synthesis::{generate_trial, realized_snr_db, NoiseSpec, TrialFixture};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use experiment::{cmd_experiment, derive_trial_seed, ExperimentOutcome, ExperimentSpec};

/// Input rejected before any work was done. Maps to exit code 1.
#[derive(Debug)]
pub struct ValidationFailure(pub String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

pub(crate) fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationFailure(msg.into()).into()
}

/// Completion method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Hierarchical Bayesian model sampled by Metropolis-within-Gibbs.
    Bmcgc,
    /// Gaussian-prior MAP estimate.
    Map,
}

/// Configuration file for `complete`. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleteConfig {
    pub hyperparams: HyperParamsConfig,
    pub chain: ChainConfig,
    pub map: MapConfig,
    /// Start the chain from the MAP solution computed with `map`.
    pub warm_start: bool,
}

impl CompleteConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
            }
        }
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub observed_pairs: usize,
    /// Infinite for noiseless trials.
    pub realized_snr_db: f64,
}

pub fn cmd_simulate(
    n: usize,
    d: usize,
    fraction: f64,
    snr_db: Option<f64>,
    seed: u64,
    out: &Path,
) -> Result<SimulateReport> {
    let spec = NoiseSpec::from_snr_db(snr_db).map_err(|e| invalid(e.to_string()))?;
    let trial = generate_trial(n, d, fraction, spec, seed).map_err(|e| invalid(e.to_string()))?;
    write_json(out, &TrialFixture::from_trial(&trial))?;
    Ok(SimulateReport {
        observed_pairs: trial.observations.pair_count(),
        realized_snr_db: realized_snr_db(&trial.truth, &trial.observations),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompleteReport {
    pub relative_error: Option<f64>,
}

/// Completes one fixture. `seed` overrides the seeds in the config file;
/// `diagnostics` receives the per-iteration records as NDJSON (sampler only).
pub fn cmd_complete(
    fixture: &Path,
    method: Method,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    diagnostics: Option<&Path>,
) -> Result<CompleteReport> {
    let text =
        fs::read_to_string(fixture).with_context(|| format!("reading {}", fixture.display()))?;
    let fx = TrialFixture::from_json(&text)
        .map_err(|e| invalid(format!("{}: {e}", fixture.display())))?;
    let obs = fx.observations().map_err(|e| invalid(e.to_string()))?;
    let truth = fx.truth().map_err(|e| invalid(e.to_string()))?;
    let mut cfg = CompleteConfig::load(config)?;
    if let Some(s) = seed {
        cfg.chain.seed = s;
        cfg.map.seed = s;
    }

    let (result, error) = match method {
        Method::Map => {
            let r = solve_map(&obs, fx.d, &cfg.map).map_err(|e| invalid(e.to_string()))?;
            let err = truth
                .as_ref()
                .map(|t| relative_error(&r.edm, t))
                .transpose()?;
            (r.to_json(cfg.map.lambda, truth.as_ref()), err)
        }
        Method::Bmcgc => {
            let hp = cfg
                .hyperparams
                .resolve(fx.d)
                .map_err(|e| invalid(e.to_string()))?;
            cfg.chain.validate().map_err(|e| invalid(e.to_string()))?;
            let init = if cfg.warm_start {
                Some(
                    solve_map(&obs, fx.d, &cfg.map)
                        .map_err(|e| invalid(e.to_string()))?
                        .points,
                )
            } else {
                None
            };
            let mut sink = match diagnostics {
                Some(p) => Some(BufWriter::new(
                    fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
                )),
                None => None,
            };
            let mut io_error = None;
            let summary = run_chain_with_observer(
                &obs,
                &hp,
                &cfg.chain,
                init.as_ref(),
                truth.as_ref(),
                |r: &DiagnosticRecord| {
                    if let (Some(w), None) = (sink.as_mut(), io_error.as_ref()) {
                        if let Err(e) =
                            edmc::sampler::write_diagnostics(std::slice::from_ref(r), &mut *w)
                        {
                            io_error = Some(e);
                        }
                    }
                },
            )
            .context("sampler failed")?;
            if let Some(e) = io_error {
                return Err(e).context("writing diagnostics");
            }
            if let Some(mut w) = sink {
                std::io::Write::flush(&mut w)?;
            }
            let err = truth
                .as_ref()
                .map(|t| relative_error(&summary.edm_mean, t))
                .transpose()?;
            (summary.to_json(truth.as_ref()), err)
        }
    };
    write_json(out, &result)?;
    Ok(CompleteReport {
        relative_error: error,
    })
}

/// Reads a square matrix from JSON (array of rows, or an object carrying
/// `edm_mean` or `edm`) or from headerless CSV.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<f64>> = if path.extension().is_some_and(|e| e == "csv") {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        rdr.records()
            .map(|rec| {
                let rec = rec?;
                rec.iter()
                    .map(|f| f.trim().parse::<f64>().map_err(anyhow::Error::from))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?
    } else {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut o) => o
                .remove("edm_mean")
                .or_else(|| o.remove("edm"))
                .ok_or_else(|| invalid("JSON object has no `edm_mean` or `edm` field"))?,
            v => v,
        };
        serde_json::from_value(value).map_err(|e| invalid(format!("{}: {e}", path.display())))?
    };
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!(
            "{}: expected a non-empty square matrix",
            path.display()
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

/// Validation report plus the rank bounds it was checked against.
#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub d: usize,
    #[serde(flatten)]
    pub report: EdmReport,
    pub within_rank_bounds: bool,
    pub valid: bool,
}

pub fn cmd_validate(path: &Path, d: usize) -> Result<ValidateReport> {
    let m = read_matrix(path)?;
    let report = EdmReport::analyze(&m);
    let within = report.within_rank_bounds(d);
    Ok(ValidateReport {
        d,
        valid: report.is_valid() && within,
        within_rank_bounds: within,
        report,
    })
}
