//! Metropolis-coupled MCMC over trees, branch lengths and model
//! parameters, plus the summaries computed from its tree samples.

mod chain;
mod config;
mod run;
mod stream;
mod summary;

use thiserror::Error;

use crate::phylomodel::PhyloError;

pub use chain::{
    log_prior, mh_accept, multiplier, perturb, propose, swap_attempt, ChainState, Proposal,
    SwapOutcome,
};
pub use config::{heat, McmcConfig, Priors, ProposalKind};
pub use run::{
    run_mcmc, run_single, OutputSink, Progress, RunFiles, RunOutcome, RunResult, SampleRow,
    Sampler, SwapRecord, MCMC_HEADER, P_HEADER,
};
pub use stream::{chain_rng, stream_seed};
pub use summary::{
    burn_in, consensus_of_runs, convergence_diag, exact_topology_posterior, majority_rule_consensus,
    parse_tree_file, split_frequencies, ConsensusClade, ConsensusTree, TopologyPosterior,
    TreeSample, DEFAULT_BURNIN, MAX_EXACT_TAXA,
};

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] PhyloError),
    #[error("burn-in fraction must be in [0, 1), got {0}")]
    BurnInFraction(f64),
    #[error("burn-in leaves no samples ({dropped} of {total} dropped)")]
    EmptyRetained { dropped: usize, total: usize },
    #[error("trees are over different taxa")]
    TaxaMismatch,
    #[error("convergence needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("{n} taxa is too many for exact enumeration (max {max})")]
    TooManyTaxa { n: usize, max: usize },
    #[error("malformed tree file: {0}")]
    TreeFile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = McmcError> = std::result::Result<T, E>;
