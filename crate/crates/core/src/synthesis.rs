//! Synthetic trials: ground-truth points, uniform observation masks and
//! SNR-calibrated Gaussian noise on the observed squared distances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EdmError, Result};
use crate::geometry::{edm_from_points, DistanceMatrix, PointSet};
use crate::rng::{stream_rng, streams, RNG_ALGORITHM};

/// Set of observed unordered pairs, stored with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl Mask {
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(EdmError::InvalidParameter(format!(
                    "mask contains diagonal entry ({a},{a})"
                )));
            }
            if a >= n || b >= n {
                return Err(EdmError::InvalidParameter(format!(
                    "mask pair ({a},{b}) out of range for n={n}"
                )));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        let before = out.len();
        out.dedup();
        if out.len() != before {
            return Err(EdmError::InvalidParameter(
                "mask contains duplicate pairs".into(),
            ));
        }
        Ok(Self { n, pairs: out })
    }

    /// Every off-diagonal pair.
    pub fn full(n: usize) -> Self {
        let pairs = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        Self { n, pairs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Symmetric 0/1 matrix with zero diagonal.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.pairs {
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
        }
        m
    }
}

/// Noise level for a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Noiseless,
    SnrDb(f64),
}

impl NoiseSpec {
    pub fn from_snr_db(snr_db: Option<f64>) -> Result<Self> {
        match snr_db {
            None => Ok(Self::Noiseless),
            Some(s) if s.is_finite() => Ok(Self::SnrDb(s)),
            Some(s) => Err(EdmError::InvalidParameter(format!(
                "SNR must be finite, got {s}"
            ))),
        }
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            Self::Noiseless => None,
            Self::SnrDb(s) => Some(*s),
        }
    }
}

/// One observed entry `D[i][j]` with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedPair {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Noisy observations of a subset of the squared distances.
///
/// Observed values may be negative: Gaussian noise on small squared
/// distances is kept as drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n: usize,
    pairs: Vec<ObservedPair>,
    /// Per point: (neighbor, observed value) for every observed pair touching it.
    neighbors: Vec<Vec<(usize, f64)>>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl ObservationSet {
    pub fn new(n: usize, pairs: Vec<ObservedPair>, snr_db: Option<f64>, seed: u64) -> Result<Self> {
        let mask = Mask::from_pairs(n, pairs.iter().map(|p| (p.i, p.j)))?;
        let mut pairs: Vec<ObservedPair> = pairs
            .into_iter()
            .map(|p| ObservedPair {
                i: p.i.min(p.j),
                j: p.i.max(p.j),
                value: p.value,
            })
            .collect();
        pairs.sort_by_key(|p| (p.i, p.j));
        debug_assert_eq!(pairs.len(), mask.pair_count());
        if let Some(p) = pairs.iter().find(|p| !p.value.is_finite()) {
            return Err(EdmError::InvalidParameter(format!(
                "observed value at ({},{}) is not finite",
                p.i, p.j
            )));
        }
        let mut neighbors = vec![Vec::new(); n];
        for p in &pairs {
            neighbors[p.i].push((p.j, p.value));
            neighbors[p.j].push((p.i, p.value));
        }
        Ok(Self {
            n,
            pairs,
            neighbors,
            snr_db,
            seed,
        })
    }

    /// Observes `truth` exactly on the masked pairs.
    pub fn noiseless(truth: &DistanceMatrix, mask: &Mask) -> Result<Self> {
        check_mask_shape(truth, mask)?;
        let pairs = mask
            .pairs()
            .iter()
            .map(|&(i, j)| ObservedPair {
                i,
                j,
                value: truth.get(i, j),
            })
            .collect();
        Self::new(truth.n(), pairs, None, 0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[ObservedPair] {
        &self.pairs
    }

    /// |Omega|, the number of observed unordered pairs.
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn mask(&self) -> Mask {
        Mask {
            n: self.n,
            pairs: self.pairs.iter().map(|p| (p.i, p.j)).collect(),
        }
    }

    /// Observed values mirrored into a full matrix, zero where unobserved.
    pub fn observed_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for p in &self.pairs {
            m[(p.i, p.j)] = p.value;
            m[(p.j, p.i)] = p.value;
        }
        m
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        let (a, b) = (i.min(j), i.max(j));
        self.neighbors[a].iter().any(|&(k, _)| k == b)
    }

    /// Unordered pairs with no observation, in `(i, j)` lexicographic order.
    pub fn unobserved_pairs(&self) -> Vec<(usize, usize)> {
        let mut observed = vec![false; self.n * self.n];
        for p in &self.pairs {
            observed[p.i * self.n + p.j] = true;
        }
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if !observed[i * self.n + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn check_mask_shape(truth: &DistanceMatrix, mask: &Mask) -> Result<()> {
    if truth.n() != mask.n() {
        return Err(EdmError::ShapeMismatch {
            expected: format!("mask over {} points", truth.n()),
            actual: format!("mask over {} points", mask.n()),
        });
    }
    Ok(())
}

/// `n` points with i.i.d. standard normal coordinates.
pub fn generate_points(n: usize, d: usize, seed: u64) -> Result<PointSet> {
    if n < 2 {
        return Err(EdmError::InvalidParameter(format!("need n >= 2, got {n}")));
    }
    if d < 1 {
        return Err(EdmError::InvalidParameter("need d >= 1".into()));
    }
    let mut rng = stream_rng(seed, streams::POINTS);
    let coords: Vec<f64> = (0..n * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    PointSet::from_row_slice(n, d, &coords)
}

/// Includes each unordered pair independently with probability `fraction`.
pub fn generate_mask(n: usize, fraction: f64, seed: u64) -> Result<Mask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EdmError::InvalidParameter(format!(
            "observed fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(Mask::full(n));
    }
    let mut rng = stream_rng(seed, streams::MASK);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < fraction {
                pairs.push((i, j));
            }
        }
    }
    Ok(Mask { n, pairs })
}

/// Noise variance that hits `snr_db` in expectation for the masked signal:
/// `sigma^2 = |D . M|_F^2 / (|M| 10^(SNR/10))`, with `|M|` the number of
/// masked entries (both triangles).
pub fn noise_variance_for_snr(truth: &DistanceMatrix, mask: &Mask, snr_db: f64) -> f64 {
    let signal: f64 = mask
        .pairs()
        .iter()
        .map(|&(i, j)| 2.0 * truth.get(i, j).powi(2))
        .sum();
    let entries = 2.0 * mask.pair_count() as f64;
    signal / (entries * 10f64.powf(snr_db / 10.0))
}

/// Adds one Gaussian draw per observed unordered pair (mirrored).
pub fn apply_noise(
    truth: &DistanceMatrix,
    mask: &Mask,
    spec: NoiseSpec,
    seed: u64,
) -> Result<ObservationSet> {
    check_mask_shape(truth, mask)?;
    if mask.is_empty() {
        return Err(EdmError::EmptyObservations);
    }
    let pairs = match spec {
        NoiseSpec::Noiseless => mask
            .pairs()
            .iter()
            .map(|&(i, j)| ObservedPair {
                i,
                j,
                value: truth.get(i, j),
            })
            .collect(),
        NoiseSpec::SnrDb(snr) => {
            let sigma = noise_variance_for_snr(truth, mask, snr).sqrt();
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| EdmError::InvalidParameter(format!("noise level: {e}")))?;
            let mut rng = stream_rng(seed, streams::NOISE);
            mask.pairs()
                .iter()
                .map(|&(i, j)| ObservedPair {
                    i,
                    j,
                    value: truth.get(i, j) + normal.sample(&mut rng),
                })
                .collect()
        }
    };
    ObservationSet::new(truth.n(), pairs, spec.snr_db(), seed)
}

/// `10 log10(|D . M|_F^2 / |N . M|_F^2)` for the noise actually present in `obs`.
/// Infinite for noiseless observations.
pub fn realized_snr_db(truth: &DistanceMatrix, obs: &ObservationSet) -> f64 {
    let (mut signal, mut noise) = (0.0, 0.0);
    for p in obs.pairs() {
        let t = truth.get(p.i, p.j);
        signal += t * t;
        noise += (p.value - t).powi(2);
    }
    10.0 * (signal / noise).log10()
}

/// Draws `count` distinct unobserved pairs (fewer if not enough exist),
/// returned in draw order.
pub fn sample_unobserved_pairs(
    obs: &ObservationSet,
    count: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let candidates = obs.unobserved_pairs();
    let k = count.min(candidates.len());
    let mut rng = stream_rng(seed, streams::SELECTION);
    rand::seq::index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|idx| candidates[idx])
        .collect()
}

/// A complete synthetic problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub points: PointSet,
    pub truth: DistanceMatrix,
    pub observations: ObservationSet,
    pub fraction: f64,
}

pub fn generate_trial(
    n: usize,
    d: usize,
    fraction: f64,
    spec: NoiseSpec,
    seed: u64,
) -> Result<Trial> {
    let points = generate_points(n, d, seed)?;
    let truth = edm_from_points(&points);
    let mask = generate_mask(n, fraction, seed)?;
    let observations = apply_noise(&truth, &mask, spec, seed)?;
    Ok(Trial {
        points,
        truth,
        observations,
        fraction,
    })
}

/// JSON layout of a trial on disk.
///
/// `points` holds the ground-truth coordinates row by row and may be absent
/// for real-world data. `mask` lists observed pairs `[i, j]` with `i < j`,
/// `observed` the same pairs with their (noisy) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFixture {
    pub rng: String,
    pub n: usize,
    pub d: usize,
    pub fraction: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    pub mask: Vec<[usize; 2]>,
    pub observed: Vec<FixtureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub pair: [usize; 2],
    pub value: f64,
}

impl TrialFixture {
    pub fn from_trial(trial: &Trial) -> Self {
        let obs = &trial.observations;
        let p = trial.points.matrix();
        Self {
            rng: RNG_ALGORITHM.to_string(),
            n: trial.points.n(),
            d: trial.points.dim(),
            fraction: trial.fraction,
            snr_db: obs.snr_db,
            seed: obs.seed,
            points: Some(p.row_iter().map(|r| r.iter().copied().collect()).collect()),
            mask: obs.pairs().iter().map(|e| [e.i, e.j]).collect(),
            observed: obs
                .pairs()
                .iter()
                .map(|e| FixtureEntry {
                    pair: [e.i, e.j],
                    value: e.value,
                })
                .collect(),
        }
    }

    pub fn observations(&self) -> Result<ObservationSet> {
        let mut observed: Vec<[usize; 2]> = self
            .observed
            .iter()
            .map(|e| [e.pair[0].min(e.pair[1]), e.pair[0].max(e.pair[1])])
            .collect();
        let mut mask: Vec<[usize; 2]> = self
            .mask
            .iter()
            .map(|p| [p[0].min(p[1]), p[0].max(p[1])])
            .collect();
        observed.sort_unstable();
        mask.sort_unstable();
        if observed != mask {
            return Err(EdmError::InvalidFixture(
                "observed pairs do not match the mask".into(),
            ));
        }
        let pairs = self
            .observed
            .iter()
            .map(|e| ObservedPair {
                i: e.pair[0],
                j: e.pair[1],
                value: e.value,
            })
            .collect();
        ObservationSet::new(self.n, pairs, self.snr_db, self.seed)
    }

    pub fn points(&self) -> Result<Option<PointSet>> {
        let Some(rows) = &self.points else {
            return Ok(None);
        };
        if rows.len() != self.n || rows.iter().any(|r| r.len() != self.d) {
            return Err(EdmError::InvalidFixture(format!(
                "points must be {}x{}",
                self.n, self.d
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        PointSet::from_row_slice(self.n, self.d, &flat).map(Some)
    }

    /// Ground-truth EDM when the fixture carries points.
    pub fn truth(&self) -> Result<Option<DistanceMatrix>> {
        Ok(self.points()?.map(|p| edm_from_points(&p)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| EdmError::InvalidFixture(e.to_string()))
    }
}
