//! Metropolis-within-Gibbs sampler for the hierarchical EDM model.
//!
//! Each iteration runs, in order:
//!
//! 1. a Gibbs draw of `(u_p, Delta_p)` from its Normal-Wishart conditional,
//! 2. a Metropolis sweep over the points with an isotropic Gaussian proposal,
//! 3. the EDM sample `D_hat_ij = |p_i - p_j|^2` of the current points,
//! 4. a Gibbs draw of the noise precision from its Gamma conditional.
//!
//! After burn-in every `thin`-th EDM sample is retained; the estimate is the
//! elementwise average of the retained samples.

mod conjugate;
mod metropolis;

pub use conjugate::{
    compute_posterior_hyperparams, noise_precision_posterior, sample_gamma,
    sample_gaussian_with_precision, sample_hyperparams, sample_wishart, PosteriorHyperParams,
};
pub use metropolis::{acceptance_probability, log_acceptance_ratio, mh_update_points, ScanOrder};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EdmError, Result};
use crate::geometry::{relative_error, row_major, DistanceMatrix, PointSet};
use crate::model::{residual_sum_squares, ChainState, ModelHyperParams};
use crate::rng::{stream_rng, streams, RNG_ALGORITHM};
use crate::synthesis::ObservationSet;
use metropolis::{Target, Workspace};

/// Acceptance rate targeted by the optional proposal adaptation.
pub const ADAPTIVE_TARGET_ACCEPTANCE: f64 = 0.3;

/// Iteration schedule and options for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub samples_to_average: usize,
    pub seed: u64,
    /// Visit points in a fresh random order each sweep instead of ascending.
    pub random_scan: bool,
    /// Robbins-Monro tuning of the proposal scale during burn-in.
    pub adapt_proposal: bool,
    /// Keep every retained EDM sample in the summary.
    pub keep_samples: bool,
    /// Pairs whose retained values are reported as traces.
    pub track_pairs: Vec<[usize; 2]>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 1500,
            burn_in: 1200,
            thin: 10,
            samples_to_average: 30,
            seed: 0,
            random_scan: false,
            adapt_proposal: false,
            keep_samples: false,
            track_pairs: Vec::new(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.samples_to_average == 0 {
            return Err(EdmError::InvalidParameter(
                "thin and samples_to_average must be >= 1".into(),
            ));
        }
        if self.burn_in >= self.total_iterations {
            return Err(EdmError::InvalidParameter(format!(
                "burn-in {} must be below total iterations {}",
                self.burn_in, self.total_iterations
            )));
        }
        let available = (self.total_iterations - self.burn_in) / self.thin;
        if available < self.samples_to_average {
            return Err(EdmError::InvalidParameter(format!(
                "schedule yields only {available} retained samples, {} requested",
                self.samples_to_average
            )));
        }
        Ok(())
    }

    /// Whether iteration `t` (1-based) contributes a retained sample,
    /// given how many were already kept.
    fn retains(&self, t: usize, kept: usize) -> bool {
        t > self.burn_in
            && (t - self.burn_in).is_multiple_of(self.thin)
            && kept < self.samples_to_average
    }

    fn scan_order(&self) -> ScanOrder {
        if self.random_scan {
            ScanOrder::Random
        } else {
            ScanOrder::Ascending
        }
    }
}

/// One line of the per-iteration diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub noise_precision: f64,
    pub acceptance_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

/// Retained values of one EDM entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTrace {
    pub pair: [usize; 2],
    pub values: Vec<f64>,
}

/// Output of [`run_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// Elementwise mean of the retained EDM samples.
    pub edm_mean: DistanceMatrix,
    /// Elementwise sample standard deviation of the retained EDM samples.
    pub edm_std: DMatrix<f64>,
    /// All retained samples, when requested.
    pub samples: Vec<DistanceMatrix>,
    pub pair_traces: Vec<PairTrace>,
    /// Accepted moves over proposed moves across the whole chain.
    pub acceptance_rate: f64,
    /// Relative error of each iteration's EDM sample, when truth was given.
    pub error_trace: Option<Vec<f64>>,
    pub diagnostics: Vec<DiagnosticRecord>,
    pub final_state: ChainState,
    pub final_tau: f64,
    pub retained: usize,
}

impl PosteriorSummary {
    /// Retained values of entry `(i, j)`; requires `keep_samples`.
    pub fn entry_samples(&self, i: usize, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.get(i, j)).collect()
    }

    pub fn to_json(&self, truth: Option<&DistanceMatrix>) -> serde_json::Value {
        let n = self.edm_mean.n();
        let rows =
            |v: Vec<f64>| -> Vec<Vec<f64>> { v.chunks(n.max(1)).map(|c| c.to_vec()).collect() };
        serde_json::json!({
            "method": "bmcgc",
            "rng": RNG_ALGORITHM,
            "n": n,
            "retained_samples": self.retained,
            "acceptance_rate": self.acceptance_rate,
            "final_tau": self.final_tau,
            "final_noise_precision": self.final_state.noise_precision,
            "relative_error": truth.and_then(|t| relative_error(&self.edm_mean, t).ok()),
            "edm_mean": rows(self.edm_mean.to_row_major()),
            "edm_std": rows(row_major(&self.edm_std)),
            "pair_traces": self.pair_traces,
            "error_trace": self.error_trace,
        })
    }
}

/// Writes diagnostics as newline-delimited JSON.
pub fn write_diagnostics<W: Write>(
    records: &[DiagnosticRecord],
    mut out: W,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Gibbs draw of the noise precision given the current points.
pub fn sample_noise_precision<R: Rng + ?Sized>(
    state: &ChainState,
    obs: &ObservationSet,
    hp: &ModelHyperParams,
    rng: &mut R,
) -> Result<f64> {
    let rss = residual_sum_squares(&state.points, obs);
    let (shape, rate) = noise_precision_posterior(hp, obs.pair_count(), rss);
    sample_gamma(shape, rate, rng)
}

/// Central interval holding `level` of the values, using linearly
/// interpolated empirical quantiles.
pub fn central_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tail = 0.5 * (1.0 - level);
    (
        quantile_sorted(&sorted, tail),
        quantile_sorted(&sorted, 1.0 - tail),
    )
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Initial points drawn i.i.d. from `N(u0, W0^-1)`.
fn initial_points<R: Rng + ?Sized>(
    n: usize,
    hp: &ModelHyperParams,
    rng: &mut R,
) -> Result<PointSet> {
    let d = hp.dim();
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        let x = sample_gaussian_with_precision(&hp.u0, &hp.w0, rng)?;
        coords.extend(x.iter());
    }
    PointSet::from_row_slice(n, d, &coords)
}

/// `a0 / b0`, or 1 when that ratio is not a usable precision.
fn initial_noise_precision(hp: &ModelHyperParams) -> f64 {
    let r = hp.a0 / hp.b0;
    if r.is_finite() && r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Runs one chain. `init` overrides the prior draw of the starting points;
/// `truth` enables the per-iteration error trace.
pub fn run_chain(
    obs: &ObservationSet,
    hp: &ModelHyperParams,
    cfg: &ChainConfig,
    init: Option<&PointSet>,
    truth: Option<&DistanceMatrix>,
) -> Result<PosteriorSummary> {
    run_chain_with_observer(obs, hp, cfg, init, truth, |_| {})
}

/// [`run_chain`] that also hands every diagnostic record to `observer` as
/// soon as its iteration completes.
pub fn run_chain_with_observer<F: FnMut(&DiagnosticRecord)>(
    obs: &ObservationSet,
    hp: &ModelHyperParams,
    cfg: &ChainConfig,
    init: Option<&PointSet>,
    truth: Option<&DistanceMatrix>,
    mut observer: F,
) -> Result<PosteriorSummary> {
    hp.validate()?;
    cfg.validate()?;
    if obs.pair_count() == 0 {
        return Err(EdmError::EmptyObservations);
    }
    let n = obs.n();
    let d = hp.dim();
    if let Some(t) = truth {
        if t.n() != n {
            return Err(EdmError::ShapeMismatch {
                expected: format!("truth over {n} points"),
                actual: t.n().to_string(),
            });
        }
    }
    for &[i, j] in &cfg.track_pairs {
        if i >= n || j >= n {
            return Err(EdmError::InvalidParameter(format!(
                "tracked pair ({i},{j}) out of range"
            )));
        }
    }

    let mut rng = stream_rng(cfg.seed, streams::CHAIN);
    let start = match init {
        Some(p) => {
            if p.n() != n || p.dim() != d {
                return Err(EdmError::ShapeMismatch {
                    expected: format!("{n}x{d} initial points"),
                    actual: format!("{}x{}", p.n(), p.dim()),
                });
            }
            p.clone()
        }
        None => initial_points(n, hp, &mut rng)?,
    };

    let mut ws = Workspace::new(&start);
    let mut mean: DVector<f64> = hp.u0.clone();
    let mut precision: DMatrix<f64> = &hp.w0 * hp.nu0;
    let mut noise_precision = initial_noise_precision(hp);
    let mut tau = hp.tau;
    let order = cfg.scan_order();

    let mut accum = EntryAccumulator::new(n);
    let mut samples = Vec::new();
    let mut traces: Vec<PairTrace> = cfg
        .track_pairs
        .iter()
        .map(|&pair| PairTrace {
            pair,
            values: Vec::new(),
        })
        .collect();
    let mut error_trace = truth.map(|_| Vec::with_capacity(cfg.total_iterations));
    let mut diagnostics = Vec::with_capacity(cfg.total_iterations);
    let mut total_accepted = 0usize;
    let mut last_accepted = 0usize;

    for t in 1..=cfg.total_iterations {
        let post = compute_posterior_hyperparams(&ws.points(), hp)?;
        let (m, p) = sample_hyperparams(&post, &mut rng)?;
        mean = m;
        precision = p;

        let target = Target {
            mean: &mean,
            precision: &precision,
            noise_precision,
        };
        let accepted = ws.sweep(&target, obs, tau, order, &mut rng);
        total_accepted += accepted;
        last_accepted = accepted;
        let sweep_rate = accepted as f64 / n as f64;
        if cfg.adapt_proposal && t <= cfg.burn_in {
            let gain = (t as f64).powf(-0.6);
            tau *= (gain * (sweep_rate - ADAPTIVE_TARGET_ACCEPTANCE)).exp();
        }

        let retain = cfg.retains(t, accum.count);
        let mut iteration_error = None;
        if retain || truth.is_some() {
            let sample = ws.edm();
            if let Some(tr) = truth {
                let e = relative_error(&sample, tr)?;
                iteration_error = Some(e);
                if let Some(trace) = error_trace.as_mut() {
                    trace.push(e);
                }
            }
            if retain {
                debug_assert!(sample.matrix() == &sample.matrix().transpose());
                debug_assert!((0..n).all(|i| sample.get(i, i) == 0.0));
                accum.push(sample.matrix());
                for tr in &mut traces {
                    tr.values.push(sample.get(tr.pair[0], tr.pair[1]));
                }
                if cfg.keep_samples {
                    samples.push(sample);
                }
            }
        }

        let rss = ws.residual_sum_squares(obs);
        let (shape, rate) = noise_precision_posterior(hp, obs.pair_count(), rss);
        noise_precision = sample_gamma(shape, rate, &mut rng)?;

        let pairs = obs.pair_count() as f64;
        let record = DiagnosticRecord {
            iteration: t,
            log_likelihood: 0.5 * pairs * (noise_precision / (2.0 * std::f64::consts::PI)).ln()
                - 0.5 * noise_precision * rss,
            noise_precision,
            acceptance_rate: sweep_rate,
            relative_error: iteration_error,
        };
        observer(&record);
        diagnostics.push(record);
    }

    let retained = accum.count;
    let (edm_mean, edm_std) = accum.finish();
    Ok(PosteriorSummary {
        edm_mean: DistanceMatrix::from_trusted(edm_mean),
        edm_std,
        samples,
        pair_traces: traces,
        acceptance_rate: total_accepted as f64 / (n * cfg.total_iterations) as f64,
        error_trace,
        diagnostics,
        final_state: ChainState {
            points: ws.points(),
            mean,
            precision,
            noise_precision,
            iteration: cfg.total_iterations,
            accept_count: last_accepted,
        },
        final_tau: tau,
        retained,
    })
}

/// Welford running mean and variance per matrix entry.
struct EntryAccumulator {
    count: usize,
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl EntryAccumulator {
    fn new(n: usize) -> Self {
        Self {
            count: 0,
            mean: DMatrix::zeros(n, n),
            m2: DMatrix::zeros(n, n),
        }
    }

    fn push(&mut self, x: &DMatrix<f64>) {
        self.count += 1;
        let c = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x.iter()) {
            let delta = v - *m;
            *m += delta / c;
            *s += delta * (v - *m);
        }
    }

    fn finish(self) -> (DMatrix<f64>, DMatrix<f64>) {
        let denom = (self.count.max(2) - 1) as f64;
        let std = self.m2.map(|s| (s / denom).max(0.0).sqrt());
        (self.mean, std)
    }
}
