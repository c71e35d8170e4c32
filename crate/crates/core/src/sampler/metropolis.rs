//! Random-walk Metropolis updates of the latent points, one point at a time.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{DistanceMatrix, PointSet};
use crate::model::{log_conditional_point, quadratic_form, ChainState, ModelHyperParams};
use crate::synthesis::ObservationSet;

/// `log p(candidate | rest) - log p(current | rest)` for point `i`.
pub fn log_acceptance_ratio(
    i: usize,
    candidate: &[f64],
    state: &ChainState,
    obs: &ObservationSet,
) -> f64 {
    let current: Vec<f64> = state.points.matrix().row(i).iter().copied().collect();
    log_conditional_point(i, candidate, state, obs) - log_conditional_point(i, &current, state, obs)
}

/// `min(1, exp(log_ratio))`.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Order in which points are visited during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanOrder {
    #[default]
    Ascending,
    /// Fresh random permutation every sweep.
    Random,
}

/// Row-major coordinates plus a cache of all pairwise squared distances.
/// Moving point `i` refreshes row and column `i` only.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    n: usize,
    d: usize,
    coords: Vec<f64>,
    sq: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(points: &PointSet) -> Self {
        let (n, d) = (points.n(), points.dim());
        let mut ws = Self {
            n,
            d,
            coords: points.to_row_major(),
            sq: vec![0.0; n * n],
        };
        for i in 0..n {
            ws.refresh(i);
        }
        ws
    }

    pub(crate) fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    fn refresh(&mut self, i: usize) {
        let (n, d) = (self.n, self.d);
        for j in 0..n {
            let s = if i == j {
                0.0
            } else {
                (0..d)
                    .map(|k| (self.coords[i * d + k] - self.coords[j * d + k]).powi(2))
                    .sum()
            };
            self.sq[i * n + j] = s;
            self.sq[j * n + i] = s;
        }
    }

    fn set_point(&mut self, i: usize, x: &[f64]) {
        self.coords[i * self.d..(i + 1) * self.d].copy_from_slice(x);
        self.refresh(i);
    }

    pub(crate) fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.sq[i * self.n + j]
    }

    pub(crate) fn residual_sum_squares(&self, obs: &ObservationSet) -> f64 {
        obs.pairs()
            .iter()
            .map(|e| (e.value - self.squared_distance(e.i, e.j)).powi(2))
            .sum()
    }

    pub(crate) fn points(&self) -> PointSet {
        PointSet::from_row_slice(self.n, self.d, &self.coords)
            .expect("workspace coordinates stay finite")
    }

    /// The EDM of the current points.
    pub(crate) fn edm(&self) -> DistanceMatrix {
        DistanceMatrix::from_trusted(DMatrix::from_row_slice(self.n, self.n, &self.sq))
    }

    /// Same quantity as [`log_acceptance_ratio`], evaluated from the cache.
    fn log_ratio(
        &self,
        i: usize,
        candidate: &[f64],
        target: &Target<'_>,
        obs: &ObservationSet,
    ) -> f64 {
        let d = self.d;
        let current = self.point(i);
        let mut cand_dev = [0.0f64; 8];
        let mut cur_dev = [0.0f64; 8];
        let prior = if d <= 8 {
            for k in 0..d {
                cand_dev[k] = candidate[k] - target.mean[k];
                cur_dev[k] = current[k] - target.mean[k];
            }
            -0.5 * quadratic_form(target.precision, &cand_dev[..d])
                + 0.5 * quadratic_form(target.precision, &cur_dev[..d])
        } else {
            let a: Vec<f64> = (0..d).map(|k| candidate[k] - target.mean[k]).collect();
            let b: Vec<f64> = (0..d).map(|k| current[k] - target.mean[k]).collect();
            -0.5 * quadratic_form(target.precision, &a) + 0.5 * quadratic_form(target.precision, &b)
        };
        let mut delta_rss = 0.0;
        for &(j, value) in obs.neighbors(i) {
            let pj = self.point(j);
            let new_sq: f64 = (0..d).map(|k| (candidate[k] - pj[k]).powi(2)).sum();
            let old_sq = self.squared_distance(i, j);
            delta_rss += (value - new_sq).powi(2) - (value - old_sq).powi(2);
        }
        prior - 0.5 * target.noise_precision * delta_rss
    }

    /// One Metropolis sweep; returns the number of accepted moves.
    pub(crate) fn sweep<R: Rng + ?Sized>(
        &mut self,
        target: &Target<'_>,
        obs: &ObservationSet,
        tau: f64,
        order: ScanOrder,
        rng: &mut R,
    ) -> usize {
        let mut visit: Vec<usize> = (0..self.n).collect();
        if order == ScanOrder::Random {
            visit.shuffle(rng);
        }
        let mut candidate = vec![0.0; self.d];
        let mut accepted = 0;
        for i in visit {
            for (k, c) in candidate.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *c = self.coords[i * self.d + k] + tau * z;
            }
            let log_ratio = self.log_ratio(i, &candidate, target, obs);
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                self.set_point(i, &candidate);
                accepted += 1;
            }
        }
        accepted
    }
}

/// Quantities the point conditional depends on besides the other points.
pub(crate) struct Target<'a> {
    pub mean: &'a DVector<f64>,
    pub precision: &'a DMatrix<f64>,
    pub noise_precision: f64,
}

/// One ascending sweep over all points with proposal scale `hp.tau`.
/// Each accepted move is visible to the points updated after it.
pub fn mh_update_points<R: Rng + ?Sized>(
    state: &ChainState,
    obs: &ObservationSet,
    hp: &ModelHyperParams,
    rng: &mut R,
) -> ChainState {
    let mut ws = Workspace::new(&state.points);
    let target = Target {
        mean: &state.mean,
        precision: &state.precision,
        noise_precision: state.noise_precision,
    };
    let accepted = ws.sweep(&target, obs, hp.tau, ScanOrder::Ascending, rng);
    ChainState {
        points: ws.points(),
        mean: state.mean.clone(),
        precision: state.precision.clone(),
        noise_precision: state.noise_precision,
        iteration: state.iteration,
        accept_count: accepted,
    }
}
