//! Completion and denoising of Euclidean distance matrices (EDMs) from
//! sparse, noisy observations of squared pairwise distances.
//!
//! Two estimators are provided:
//!
//! * [`sampler::run_chain`]: a hierarchical Bayesian model over the latent
//!   points (Gaussian points with a Normal-Wishart hyperprior and a Gamma
//!   prior on the noise precision), sampled by Metropolis-within-Gibbs. It
//!   returns the posterior-mean EDM together with per-entry uncertainty.
//! * [`map_solver::solve_map`]: the MAP point estimate under a fixed
//!   isotropic Gaussian prior, equivalent to trace-regularized least squares.
//!
//! [`synthesis`] generates reproducible synthetic trials and [`geometry`]
//! holds the EDM/Gram conversions and error metrics.

pub mod error;
pub mod geometry;
pub mod map_solver;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod synthesis;

pub use error::{EdmError, Result};
pub use geometry::{DistanceMatrix, GramMatrix, PointSet};
pub use map_solver::{MapConfig, MapResult};
pub use model::{ChainState, ModelHyperParams};
pub use sampler::{ChainConfig, PosteriorSummary};
pub use synthesis::{NoiseSpec, ObservationSet, Trial};
