//! Job orchestration: proxies, the job state machine, on-disk job records,
//! the master block, and the staged pipeline that drives the executor.

mod engine;
mod master;
mod proxy;
mod state;
mod store;

use thiserror::Error;

pub use engine::{
    AlignmentView, Artifact, ConfigureRequest, ConsensusReport, JobSummary, ProxyChoice, Resolved, RunProgress,
    StatusReport, Workflow, WorkflowOptions,
};
pub use master::{render_master_block, MasterBlock};
pub use proxy::{Clock, ManualClock, ProxyCredential, ProxyKind, SystemClock};
pub use state::{Coarse, HistoryEntry, Job, JobState, Operation, StatusView};
pub use store::{JobStore, RECORD_LOG};

use crate::aligner::AlignError;
use crate::executor::ExecError;
use crate::mcmc::McmcError;
use crate::phylomodel::PhyloError;
use crate::seqio::SeqError;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("job '{0}' not found")]
    NotFound(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("cannot {op} a job in state {from}")]
    InvalidTransition { from: JobState, op: Operation },
    #[error("the proxy credential has expired")]
    ExpiredProxy,
    #[error("no proxy credential available")]
    NoProxy,
    #[error("only administrator proxies can be renewed")]
    RenewOnUserProxy,
    #[error("the alignment is not aligned")]
    NotAligned,
    #[error("replacement has a different taxon set")]
    TaxaMismatch,
    #[error("replacement residues differ from the uploaded sequences (taxon '{0}')")]
    ContentMismatch(String),
    #[error("job is not configured")]
    NotConfigured,
    #[error("job has no outputs yet")]
    NoOutputs,
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Phylo(#[from] PhyloError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("storage error at {path}: {msg}")]
    Storage { path: String, msg: String },
}

pub type Result<T, E = WorkflowError> = std::result::Result<T, E>;
