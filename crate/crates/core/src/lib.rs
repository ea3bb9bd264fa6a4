//! Bayesian estimation of the distribution of unobserved Gaussian inputs of
//! an expensive forward model, using kriging metamodels, a
//! Metropolis-Hastings-within-Gibbs sampler and adaptive designs of
//! experiments (ECD, WIMSE, MMSE, maximin LHD).

pub mod criteria;
pub mod doe;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gp;
pub mod linalg;
pub mod mcmc;
pub mod prior;

pub use error::{Error, Result};
