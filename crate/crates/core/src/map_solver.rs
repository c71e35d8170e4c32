//! MAP estimate under an isotropic Gaussian prior on the points.
//!
//! Minimizes `f(P) = (lambda/2) sum_{(i,j) observed} (D_ij - |p_i - p_j|^2)^2 + |P|_F^2`,
//! which is also the factorized trace-regularized (nuclear norm) completion
//! objective since `trace(P P^T) = |P|_F^2`. With prior variance `sigma_p^2`
//! and noise variance `sigma^2` the matching weight is `lambda = 2 sigma_p^2 / sigma^2`.
//!
//! The solver is plain gradient descent. Each step starts from a
//! Barzilai-Borwein trial length and backtracks until the Armijo condition
//! holds, so the objective never increases.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EdmError, Result};
use crate::geometry::{edm_from_points, relative_error, DistanceMatrix, PointSet};
use crate::model::map_objective;
use crate::rng::{stream_rng, streams};
use crate::synthesis::ObservationSet;

/// Backtracking line-search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepRule {
    /// Trial step for the first iteration.
    pub initial_step: f64,
    /// Multiplier applied on each backtrack, in (0, 1).
    pub shrink: f64,
    /// Armijo constant, in (0, 1).
    pub sufficient_decrease: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_step: 1e-3,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_rule: StepRule,
    /// Number of random starts; the lowest final objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
            step_rule: StepRule::default(),
            restarts: 3,
            seed: 0,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(EdmError::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.max_iterations == 0 || self.restarts == 0 {
            return Err(EdmError::InvalidParameter(
                "max_iterations and restarts must be >= 1".into(),
            ));
        }
        if self.gradient_tolerance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            || self.step_rule.initial_step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(EdmError::InvalidParameter(
                "tolerances and steps must be positive".into(),
            ));
        }
        let s = &self.step_rule;
        if !(s.shrink > 0.0 && s.shrink < 1.0)
            || !(s.sufficient_decrease > 0.0 && s.sufficient_decrease < 1.0)
        {
            return Err(EdmError::InvalidParameter(
                "shrink and sufficient_decrease must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// `d f / d p_i = 2 p_i - 2 lambda sum_j r_ij (p_i - p_j)`.
pub fn map_gradient(points: &PointSet, obs: &ObservationSet, lambda: f64) -> DMatrix<f64> {
    let p = points.matrix();
    let d = points.dim();
    let mut grad = p * 2.0;
    for e in obs.pairs() {
        let r = e.value - points.squared_distance(e.i, e.j);
        for k in 0..d {
            let g = -2.0 * lambda * r * (p[(e.i, k)] - p[(e.j, k)]);
            grad[(e.i, k)] += g;
            grad[(e.j, k)] -= g;
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub points: PointSet,
    pub edm: DistanceMatrix,
    /// Objective after each accepted step of the winning start, starting
    /// with its initial value.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl MapResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the initial objective")
    }

    pub fn to_json(&self, lambda: f64, truth: Option<&DistanceMatrix>) -> serde_json::Value {
        let n = self.edm.n();
        let rows: Vec<Vec<f64>> = self
            .edm
            .to_row_major()
            .chunks(n.max(1))
            .map(|c| c.to_vec())
            .collect();
        let pts: Vec<Vec<f64>> = self
            .points
            .matrix()
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        serde_json::json!({
            "method": "map",
            "n": n,
            "lambda": lambda,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "objective": self.objective(),
            "relative_error": truth.and_then(|t| relative_error(&self.edm, t).ok()),
            "points": pts,
            "edm": rows,
            "objective_trace": self.objective_trace,
        })
    }
}

/// Minimizes the MAP objective from `cfg.restarts` standard-normal starts.
/// Hitting `max_iterations` is not an error; check `converged`.
pub fn solve_map(obs: &ObservationSet, d: usize, cfg: &MapConfig) -> Result<MapResult> {
    cfg.validate()?;
    if obs.pair_count() == 0 {
        return Err(EdmError::EmptyObservations);
    }
    if d == 0 {
        return Err(EdmError::InvalidParameter("d must be >= 1".into()));
    }
    let n = obs.n();
    let mut rng = stream_rng(cfg.seed, streams::MAP_INIT);
    let mut best: Option<MapResult> = None;
    for _ in 0..cfg.restarts {
        let coords: Vec<f64> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let start = PointSet::from_row_slice(n, d, &coords)?;
        let run = descend(start, obs, cfg)?;
        if best
            .as_ref()
            .is_none_or(|b| run.objective() < b.objective())
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Gradient descent from a given start.
pub fn descend(start: PointSet, obs: &ObservationSet, cfg: &MapConfig) -> Result<MapResult> {
    let (n, d) = (start.n(), start.dim());
    let lambda = cfg.lambda;
    let rule = &cfg.step_rule;

    let mut x = start.into_matrix();
    let mut f = map_objective(&PointSet::new(x.clone())?, obs, lambda);
    let mut g = map_gradient(&PointSet::new(x.clone())?, obs, lambda);
    let mut trace = vec![f];
    let mut step = rule.initial_step;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        let gnorm = g.norm();
        if gnorm <= cfg.gradient_tolerance * x.norm().max(1.0) {
            converged = true;
            break;
        }
        if let Some((px, pg)) = &prev {
            let s = &x - px;
            let y = &g - pg;
            let sy = s.dot(&y);
            if sy > 0.0 {
                let bb = s.norm_squared() / sy;
                if bb.is_finite() {
                    step = bb;
                }
            } else {
                step *= 2.0;
            }
        }

        let g2 = gnorm * gnorm;
        let mut accepted = None;
        while step > 0.0 && step.is_finite() {
            let cand = &x - &g * step;
            if cand.iter().all(|v| v.is_finite()) {
                let cand_pts = PointSet::new(cand.clone())?;
                let fc = map_objective(&cand_pts, obs, lambda);
                if fc <= f - rule.sufficient_decrease * step * g2 {
                    accepted = Some((cand, cand_pts, fc));
                    break;
                }
            }
            step *= rule.shrink;
            if step < f64::MIN_POSITIVE {
                break;
            }
        }
        let Some((cand, cand_pts, fc)) = accepted else {
            // No step size yields descent; we are at numerical stationarity.
            break;
        };
        let gc = map_gradient(&cand_pts, obs, lambda);
        prev = Some((
            std::mem::replace(&mut x, cand),
            std::mem::replace(&mut g, gc),
        ));
        f = fc;
        trace.push(f);
        iterations += 1;
    }
    if !converged {
        converged = g.norm() <= cfg.gradient_tolerance * x.norm().max(1.0);
    }

    let points = PointSet::new(x)?;
    debug_assert_eq!(points.matrix().shape(), (n, d));
    Ok(MapResult {
        edm: edm_from_points(&points),
        gradient_norm: g.norm(),
        points,
        objective_trace: trace,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{generate_mask, generate_points, generate_trial, NoiseSpec};

    #[test]
    fn gradient_is_ridge_term_when_residuals_vanish() {
        let p = generate_points(6, 3, 1).unwrap();
        let obs =
            ObservationSet::noiseless(&edm_from_points(&p), &generate_mask(6, 0.8, 1).unwrap())
                .unwrap();
        let g = map_gradient(&p, &obs, 50.0);
        assert!((g - p.matrix() * 2.0).amax() < 1e-12);
        let empty = ObservationSet::new(6, vec![], None, 0).unwrap();
        assert_eq!(map_gradient(&p, &empty, 50.0), p.matrix() * 2.0);
    }

    #[test]
    fn tiny_lambda_collapses() {
        let t = generate_trial(20, 3, 0.5, NoiseSpec::Noiseless, 2).unwrap();
        let cfg = MapConfig {
            lambda: 1e-12,
            ..Default::default()
        };
        let r = solve_map(&t.observations, 3, &cfg).unwrap();
        assert!(r.points.frobenius_norm_squared() < 1e-10);
        assert!((relative_error(&r.edm, &t.truth).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_never_increases() {
        let t = generate_trial(25, 3, 0.4, NoiseSpec::SnrDb(20.0), 6).unwrap();
        for lambda in [0.1, 10.0, 1e3] {
            let r = solve_map(
                &t.observations,
                3,
                &MapConfig {
                    lambda,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn bad_config_rejected() {
        let t = generate_trial(5, 2, 1.0, NoiseSpec::Noiseless, 0).unwrap();
        let bad = MapConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(solve_map(&t.observations, 2, &bad).is_err());
        let bad = MapConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(solve_map(&t.observations, 2, &bad).is_err());
    }
}
