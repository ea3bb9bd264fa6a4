//! Metropolis–Hastings-within-Gibbs sampling of `(m, C, X)` given field
//! data, with the metamodel error folded into the likelihood.

mod chain;
mod diagnostics;
mod gibbs;
mod likelihood;

pub use chain::{
    read_posterior_csv, run_chain, run_chain_from, write_posterior_csv, ChainCheckpoint, ChainRun, McmcConfig, ThetaDraw,
};
pub use diagnostics::{brooks_gelman, brooks_gelman_multi};
pub(crate) use gibbs::stream_rng;
pub use gibbs::{
    gibbs_step, gibbs_step_with, independent_mh_step, initial_state, mh_sweep, mh_update_missing, sample_c_full_conditional,
    sample_m_full_conditional, ChainState,
};
pub use likelihood::{
    assemble_block_system, dense_log_density, log_missing_conditional, BlockOrdering, Emulator,
    LikelihoodContext, ObservationSet,
};
