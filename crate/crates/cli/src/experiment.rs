//! Experiment grids over observed fractions and seeded trials.
//!
//! Output files in `output_dir`:
//!
//! * `errors.csv`: `fraction,trial,error,seconds`, one row per trial
//! * `summary.csv`: `fraction,mean_error,std_error`, one row per fraction
//! * `traces.json`: per-iteration relative error (sampler) or objective (MAP)
//! * `posterior_entries.json`: retained samples of randomly chosen
//!   unobserved pairs with their true value and posterior mean (sampler only)
//!
//! Each trial's seed depends only on the base seed, the fraction value and
//! the trial index, so two specs sharing those produce identical fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use edmc::geometry::relative_error;
use edmc::map_solver::{solve_map, MapConfig};
use edmc::model::HyperParamsConfig;
use edmc::rng::splitmix64;
use edmc::sampler::{run_chain, ChainConfig};
use edmc::synthesis::{generate_trial, sample_unobserved_pairs, NoiseSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{invalid, write_json, Method};

fn default_trials() -> usize {
    20
}

fn default_threads() -> usize {
    1
}

fn default_posterior_pairs() -> usize {
    9
}

fn snr_or_noiseless<'de, D: serde::Deserializer<'de>>(
    de: D,
) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Snr {
        Db(f64),
        Word(String),
    }
    match Option::<Snr>::deserialize(de)? {
        None => Ok(None),
        Some(Snr::Db(v)) => Ok(Some(v)),
        Some(Snr::Word(w)) if w == "noiseless" => Ok(None),
        Some(Snr::Word(w)) => Err(serde::de::Error::custom(format!(
            "snr_db must be a number or \"noiseless\", got {w:?}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub fractions: Vec<f64>,
    /// `null` or `"noiseless"` for noiseless observations.
    #[serde(default, deserialize_with = "snr_or_noiseless")]
    pub snr_db: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Schedule for the sampler; its `seed` and `track_pairs` are replaced per trial.
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub hyperparams: HyperParamsConfig,
    /// Solver settings for `map`, and for the warm start; `seed` is replaced per trial.
    #[serde(default, alias = "map_config")]
    pub map: MapConfig,
    #[serde(default)]
    pub warm_start: bool,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Unobserved pairs reported in `posterior_entries.json`.
    #[serde(default = "default_posterior_pairs")]
    pub posterior_pairs: usize,
    /// Write wall-clock seconds to `errors.csv`. Off by default so reruns
    /// are byte-identical; when off the column holds 0.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.fractions.is_empty() {
            return Err(invalid("fractions must not be empty"));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(invalid(format!("fraction {f} outside (0, 1]")));
        }
        if self.n < 2 || self.d < 1 {
            return Err(invalid("need n >= 2 and d >= 1"));
        }
        if self.threads == 0 {
            return Err(invalid("threads must be >= 1"));
        }
        if self.trials > u32::MAX as usize {
            return Err(invalid("too many trials"));
        }
        NoiseSpec::from_snr_db(self.snr_db).map_err(|e| invalid(e.to_string()))?;
        self.hyperparams
            .resolve(self.d)
            .map_err(|e| invalid(e.to_string()))?;
        self.chain.validate().map_err(|e| invalid(e.to_string()))?;
        self.map.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

/// `base_seed XOR splitmix64(ppm(fraction) << 32 | trial)`. SplitMix64 is a
/// bijection, so distinct (fraction to 1e-6, trial) keys never share a seed.
pub fn derive_trial_seed(base_seed: u64, fraction: f64, trial: usize) -> u64 {
    let ppm = (fraction * 1e6).round() as u64;
    base_seed ^ splitmix64((ppm << 32) | (trial as u64 & 0xFFFF_FFFF))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorEntry {
    pub pair: [usize; 2],
    pub true_value: f64,
    pub posterior_mean: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub fraction: f64,
    pub trial: usize,
    pub seed: u64,
    pub error: f64,
    #[serde(skip)]
    pub seconds: f64,
    /// `relative_error` for the sampler, `objective` for MAP.
    pub trace_kind: &'static str,
    pub trace: Vec<f64>,
    pub posterior_entries: Vec<PosteriorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub fraction: f64,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    /// `(fraction, trial, message)` for trials that failed.
    pub failures: Vec<(f64, usize, String)>,
}

pub fn run_trial(spec: &ExperimentSpec, fraction: f64, trial: usize) -> Result<TrialRecord> {
    let seed = derive_trial_seed(spec.base_seed, fraction, trial);
    let noise = NoiseSpec::from_snr_db(spec.snr_db)?;
    let start = Instant::now();
    let t = generate_trial(spec.n, spec.d, fraction, noise, seed)?;
    let map_cfg = MapConfig {
        seed,
        ..spec.map.clone()
    };
    let mut record = TrialRecord {
        fraction,
        trial,
        seed,
        error: f64::NAN,
        seconds: 0.0,
        trace_kind: "relative_error",
        trace: Vec::new(),
        posterior_entries: Vec::new(),
    };
    match spec.method {
        Method::Map => {
            let r = solve_map(&t.observations, spec.d, &map_cfg)?;
            record.error = relative_error(&r.edm, &t.truth)?;
            record.trace_kind = "objective";
            record.trace = r.objective_trace;
        }
        Method::Bmcgc => {
            let hp = spec.hyperparams.resolve(spec.d)?;
            let picked = sample_unobserved_pairs(&t.observations, spec.posterior_pairs, seed);
            let chain = ChainConfig {
                seed,
                track_pairs: picked.iter().map(|&(i, j)| [i, j]).collect(),
                ..spec.chain.clone()
            };
            let init = if spec.warm_start {
                Some(solve_map(&t.observations, spec.d, &map_cfg)?.points)
            } else {
                None
            };
            let s = run_chain(&t.observations, &hp, &chain, init.as_ref(), Some(&t.truth))?;
            record.error = relative_error(&s.edm_mean, &t.truth)?;
            record.trace = s.error_trace.clone().unwrap_or_default();
            record.posterior_entries = s
                .pair_traces
                .iter()
                .map(|tr| PosteriorEntry {
                    pair: tr.pair,
                    true_value: t.truth.get(tr.pair[0], tr.pair[1]),
                    posterior_mean: s.edm_mean.get(tr.pair[0], tr.pair[1]),
                    samples: tr.values.clone(),
                })
                .collect();
        }
    }
    if spec.record_timing {
        record.seconds = start.elapsed().as_secs_f64();
    }
    Ok(record)
}

fn summarize(spec: &ExperimentSpec, records: &[TrialRecord]) -> Vec<SummaryRow> {
    spec.fractions
        .iter()
        .filter_map(|&f| {
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.fraction == f)
                .map(|r| r.error)
                .collect();
            if errs.is_empty() {
                return None;
            }
            let k = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / k;
            let std = if errs.len() > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            Some(SummaryRow {
                fraction: f,
                mean_error: mean,
                std_error: std,
            })
        })
        .collect()
}

fn write_outputs(
    spec: &ExperimentSpec,
    records: &[TrialRecord],
    summary: &[SummaryRow],
) -> Result<()> {
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut errors = csv::Writer::from_path(dir.join("errors.csv"))?;
    errors.write_record(["fraction", "trial", "error", "seconds"])?;
    for r in records {
        errors.write_record([
            r.fraction.to_string(),
            r.trial.to_string(),
            r.error.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    errors.flush()?;

    let mut sum = csv::Writer::from_path(dir.join("summary.csv"))?;
    sum.write_record(["fraction", "mean_error", "std_error"])?;
    for s in summary {
        sum.write_record([
            s.fraction.to_string(),
            s.mean_error.to_string(),
            s.std_error.to_string(),
        ])?;
    }
    sum.flush()?;

    let traces: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            serde_json::json!({
                "fraction": r.fraction,
                "trial": r.trial,
                "seed": r.seed,
                "kind": r.trace_kind,
                "values": r.trace,
            })
        })
        .collect();
    write_json(&dir.join("traces.json"), &traces)?;

    let entries: Vec<serde_json::Value> = records
        .iter()
        .filter(|r| !r.posterior_entries.is_empty())
        .map(|r| {
            serde_json::json!({
                "fraction": r.fraction,
                "trial": r.trial,
                "seed": r.seed,
                "entries": r.posterior_entries,
            })
        })
        .collect();
    write_json(&dir.join("posterior_entries.json"), &entries)?;
    Ok(())
}

/// Runs every (fraction, trial) cell, writes the output files and returns
/// the records. Completed trials are written even when others fail; the
/// call then returns an error naming the failures.
pub fn cmd_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .fractions
        .iter()
        .flat_map(|&f| (0..spec.trials).map(move |t| (f, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .context("building worker pool")?;
    let results: Vec<Result<TrialRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(f, t)| run_trial(spec, f, t))
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (&(f, t), r) in cells.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((f, t, format!("{e:#}"))),
        }
    }
    let summary = summarize(spec, &records);
    write_outputs(spec, &records, &summary)?;
    if !failures.is_empty() {
        let list: Vec<String> = failures
            .iter()
            .map(|(f, t, m)| format!("fraction {f} trial {t}: {m}"))
            .collect();
        return Err(anyhow!(
            "{} trial(s) failed:\n{}",
            failures.len(),
            list.join("\n")
        ));
    }
    Ok(ExperimentOutcome {
        records,
        summary,
        failures,
    })
}
