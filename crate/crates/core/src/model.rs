//! Likelihood, priors and hyperparameters of the hierarchical model.
//!
//! Observed squared distances are Gaussian around the squared distances of
//! latent points, `D_ij ~ N(|p_i - p_j|^2, 1/alpha)` for each observed pair
//! `i < j`. Points are i.i.d. `N(u_p, Delta_p^-1)` and `(u_p, Delta_p)`
//! carries a Normal-Wishart hyperprior; `alpha` has a Gamma(a0, b0) prior.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EdmError, Result};
use crate::geometry::PointSet;
use crate::synthesis::ObservationSet;

/// Fixed hyperparameters of the hierarchical model plus the MH proposal scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHyperParams {
    /// Prior mean of `u_p`.
    pub u0: DVector<f64>,
    pub beta0: f64,
    /// Wishart scale matrix, `E[Delta_p] = nu0 * w0`.
    pub w0: DMatrix<f64>,
    /// Wishart degrees of freedom, must exceed `d - 1`.
    pub nu0: f64,
    /// Gamma shape for the noise precision.
    pub a0: f64,
    /// Gamma rate for the noise precision.
    pub b0: f64,
    /// Standard deviation of the isotropic random-walk proposal.
    pub tau: f64,
}

impl ModelHyperParams {
    /// `tau = 0.05, a0 = b0 = 1e-6, beta0 = 2, nu0 = d + 2, u0 = 0, W0 = I`.
    pub fn defaults(d: usize) -> Self {
        Self {
            u0: DVector::zeros(d),
            beta0: 2.0,
            w0: DMatrix::identity(d, d),
            nu0: d as f64 + 2.0,
            a0: 1e-6,
            b0: 1e-6,
            tau: 0.05,
        }
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(EdmError::InvalidParameter("dimension must be >= 1".into()));
        }
        if self.w0.shape() != (d, d) {
            return Err(EdmError::ShapeMismatch {
                expected: format!("W0 of shape {d}x{d}"),
                actual: format!("{:?}", self.w0.shape()),
            });
        }
        let positive = [
            ("beta0", self.beta0),
            ("a0", self.a0),
            ("b0", self.b0),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EdmError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.nu0.partial_cmp(&(d as f64 - 1.0)) != Some(std::cmp::Ordering::Greater) {
            return Err(EdmError::InvalidParameter(format!(
                "nu0 must exceed d - 1 = {}, got {}",
                d - 1,
                self.nu0
            )));
        }
        if self.w0 != self.w0.transpose() {
            return Err(EdmError::InvalidParameter("W0 must be symmetric".into()));
        }
        if self.w0.clone().cholesky().is_none() {
            return Err(EdmError::NotPositiveDefinite("W0".into()));
        }
        Ok(())
    }
}

/// Serializable form of [`ModelHyperParams`]; unset fields take the defaults
/// for the problem dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    /// Rows of W0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl HyperParamsConfig {
    pub fn resolve(&self, d: usize) -> Result<ModelHyperParams> {
        let mut hp = ModelHyperParams::defaults(d);
        if let Some(u0) = &self.u0 {
            if u0.len() != d {
                return Err(EdmError::ShapeMismatch {
                    expected: format!("u0 of length {d}"),
                    actual: u0.len().to_string(),
                });
            }
            hp.u0 = DVector::from_column_slice(u0);
        }
        if let Some(rows) = &self.w0 {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(EdmError::ShapeMismatch {
                    expected: format!("W0 of shape {d}x{d}"),
                    actual: format!("{} rows", rows.len()),
                });
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            hp.w0 = DMatrix::from_row_slice(d, d, &flat);
        }
        hp.beta0 = self.beta0.unwrap_or(hp.beta0);
        hp.nu0 = self.nu0.unwrap_or(hp.nu0);
        hp.a0 = self.a0.unwrap_or(hp.a0);
        hp.b0 = self.b0.unwrap_or(hp.b0);
        hp.tau = self.tau.unwrap_or(hp.tau);
        hp.validate()?;
        Ok(hp)
    }
}

/// Current state of the Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub points: PointSet,
    /// `u_p`
    pub mean: DVector<f64>,
    /// `Delta_p`
    pub precision: DMatrix<f64>,
    /// `alpha = 1 / sigma^2`
    pub noise_precision: f64,
    pub iteration: usize,
    /// MH acceptances during the most recent sweep.
    pub accept_count: usize,
}

impl ChainState {
    pub fn validate(&self) -> Result<()> {
        let d = self.points.dim();
        if self.mean.len() != d || self.precision.shape() != (d, d) {
            return Err(EdmError::ShapeMismatch {
                expected: format!("mean of length {d} and {d}x{d} precision"),
                actual: format!("{} and {:?}", self.mean.len(), self.precision.shape()),
            });
        }
        if !(self.noise_precision > 0.0 && self.noise_precision.is_finite()) {
            return Err(EdmError::InvalidParameter(format!(
                "noise precision must be positive, got {}",
                self.noise_precision
            )));
        }
        if self.precision.clone().cholesky().is_none() {
            return Err(EdmError::NotPositiveDefinite("point precision".into()));
        }
        Ok(())
    }
}

/// Sum of squared residuals `r_ij = D_ij - |p_i - p_j|^2` over observed pairs.
pub fn residual_sum_squares(points: &PointSet, obs: &ObservationSet) -> f64 {
    obs.pairs()
        .iter()
        .map(|e| (e.value - points.squared_distance(e.i, e.j)).powi(2))
        .sum()
}

pub fn log_likelihood(points: &PointSet, obs: &ObservationSet, noise_precision: f64) -> f64 {
    let count = obs.pair_count() as f64;
    0.5 * count * (noise_precision / (2.0 * PI)).ln()
        - 0.5 * noise_precision * residual_sum_squares(points, obs)
}

/// Normalized log-density of the points under `N(mean, precision^-1)`.
pub fn log_point_prior(
    points: &PointSet,
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
) -> Result<f64> {
    let d = points.dim();
    if mean.len() != d || precision.shape() != (d, d) {
        return Err(EdmError::ShapeMismatch {
            expected: format!("mean of length {d} and {d}x{d} precision"),
            actual: format!("{} and {:?}", mean.len(), precision.shape()),
        });
    }
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| EdmError::NotPositiveDefinite("point precision".into()))?;
    let log_det: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|x| x.ln())
            .sum::<f64>();
    let per_point_const = 0.5 * log_det - 0.5 * d as f64 * (2.0 * PI).ln();
    let mut total = 0.0;
    for i in 0..points.n() {
        let diff = points.point(i) - mean;
        total += per_point_const - 0.5 * quadratic_form(precision, diff.as_slice());
    }
    Ok(total)
}

pub(crate) fn quadratic_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut total = 0.0;
    for a in 0..d {
        let mut row = 0.0;
        for b in 0..d {
            row += m[(a, b)] * x[b];
        }
        total += x[a] * row;
    }
    total
}

/// Unnormalized log-density of point `i` at `candidate` given everything else:
/// `-1/2 (x - u_p)^T Delta_p (x - u_p) - alpha/2 sum_j r_ij^2`, summing once
/// over each observed pair that touches `i`.
pub fn log_conditional_point(
    i: usize,
    candidate: &[f64],
    state: &ChainState,
    obs: &ObservationSet,
) -> f64 {
    let points = state.points.matrix();
    let d = candidate.len();
    let diff: Vec<f64> = (0..d).map(|k| candidate[k] - state.mean[k]).collect();
    let prior = -0.5 * quadratic_form(&state.precision, &diff);
    let mut rss = 0.0;
    for &(j, value) in obs.neighbors(i) {
        let sq: f64 = (0..d)
            .map(|k| (candidate[k] - points[(j, k)]).powi(2))
            .sum();
        rss += (value - sq).powi(2);
    }
    prior - 0.5 * state.noise_precision * rss
}

/// `(lambda/2) sum_{i<j} Omega_ij (D_ij - |p_i - p_j|^2)^2 + |P|_F^2`.
pub fn map_objective(points: &PointSet, obs: &ObservationSet, lambda: f64) -> f64 {
    0.5 * lambda * residual_sum_squares(points, obs) + points.frobenius_norm_squared()
}
