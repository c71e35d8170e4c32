//! Exact Gibbs draws: the Normal-Wishart posterior over `(u_p, Delta_p)`
//! and the Gamma posterior over the noise precision.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{EdmError, Result};
use crate::geometry::{symmetrize, PointSet};
use crate::model::ModelHyperParams;

/// Parameters of the Normal-Wishart conditional `p(u_p, Delta_p | P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorHyperParams {
    pub beta_star: f64,
    pub u_star: DVector<f64>,
    pub nu_star: f64,
    /// Wishart scale (not its inverse).
    pub w_star: DMatrix<f64>,
}

pub fn compute_posterior_hyperparams(
    points: &PointSet,
    hp: &ModelHyperParams,
) -> Result<PosteriorHyperParams> {
    let p = points.matrix();
    let (n, d) = p.shape();
    if hp.dim() != d {
        return Err(EdmError::ShapeMismatch {
            expected: format!("hyperparameters of dimension {d}"),
            actual: hp.dim().to_string(),
        });
    }
    let nf = n as f64;
    let p_bar: DVector<f64> = p.row_sum().transpose() / nf;

    let mut scatter = DMatrix::zeros(d, d);
    for i in 0..n {
        let dev = p.row(i).transpose() - &p_bar;
        scatter += &dev * dev.transpose();
    }

    let beta_star = hp.beta0 + nf;
    let nu_star = hp.nu0 + nf;
    let u_star = (&hp.u0 * hp.beta0 + &p_bar * nf) / beta_star;

    let w0_inv = hp
        .w0
        .clone()
        .cholesky()
        .ok_or_else(|| EdmError::NotPositiveDefinite("W0".into()))?
        .inverse();
    let shift = &p_bar - &hp.u0;
    let mut w_star_inv =
        w0_inv + scatter + (&shift * shift.transpose()) * (hp.beta0 * nf / beta_star);
    symmetrize(&mut w_star_inv);
    let mut w_star = w_star_inv
        .cholesky()
        .ok_or_else(|| EdmError::Singular("posterior inverse scale (W*)^-1".into()))?
        .inverse();
    symmetrize(&mut w_star);
    if w_star.iter().any(|x| !x.is_finite()) {
        return Err(EdmError::Singular("posterior scale W*".into()));
    }

    Ok(PosteriorHyperParams {
        beta_star,
        u_star,
        nu_star,
        w_star,
    })
}

/// Wishart draw with scale `scale` and `dof` degrees of freedom via the
/// Bartlett decomposition, `L A A^T L^T` with `L L^T = scale`.
pub fn sample_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if dof.partial_cmp(&(d as f64 - 1.0)) != Some(std::cmp::Ordering::Greater) {
        return Err(EdmError::InvalidParameter(format!(
            "Wishart degrees of freedom {dof} must exceed d - 1 = {}",
            d as f64 - 1.0
        )));
    }
    let l = scale
        .clone()
        .cholesky()
        .ok_or_else(|| EdmError::NotPositiveDefinite("Wishart scale".into()))?
        .unpack();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| EdmError::InvalidParameter(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let mut out = &la * la.transpose();
    symmetrize(&mut out);
    if out.clone().cholesky().is_none() {
        return Err(EdmError::NotPositiveDefinite("Wishart draw".into()));
    }
    Ok(out)
}

/// Draws `x ~ N(mean, precision^-1)`.
pub fn sample_gaussian_with_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| EdmError::NotPositiveDefinite("precision".into()))?;
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    // With precision = L L^T, x = mean + L^-T z has covariance (L L^T)^-1.
    let offset = chol
        .l_dirty()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| EdmError::Singular("precision factor".into()))?;
    Ok(mean + offset)
}

/// Draws `Delta_p ~ W(W*, nu*)` then `u_p ~ N(u*, (beta* Delta_p)^-1)`.
pub fn sample_hyperparams<R: Rng + ?Sized>(
    post: &PosteriorHyperParams,
    rng: &mut R,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let precision = sample_wishart(&post.w_star, post.nu_star, rng)?;
    let mean = sample_gaussian_with_precision(&post.u_star, &(&precision * post.beta_star), rng)?;
    Ok((mean, precision))
}

/// Shape and rate of the Gamma conditional for the noise precision.
pub fn noise_precision_posterior(
    hp: &ModelHyperParams,
    observed_pairs: usize,
    residual_sum_squares: f64,
) -> (f64, f64) {
    (
        hp.a0 + 0.5 * observed_pairs as f64,
        hp.b0 + 0.5 * residual_sum_squares,
    )
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| {
        EdmError::InvalidParameter(format!("gamma(shape={shape}, rate={rate}): {e}"))
    })?;
    Ok(g.sample(rng))
}
