use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::proxy::ProxyKind;
use super::{Result, WorkflowError};
use crate::aligner::{ConservationProfile, ScoringParams};
use crate::mcmc::McmcConfig;
use crate::phylomodel::SubstitutionModel;
use crate::seqio::Alignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JobState {
    Draft,
    SequencesLoaded,
    Aligning,
    AlignmentReady,
    Configured,
    Queued,
    Running,
    Complete,
    Failed,
    Cancelled,
}

impl JobState {
    pub const ALL: [JobState; 10] = [
        JobState::Draft,
        JobState::SequencesLoaded,
        JobState::Aligning,
        JobState::AlignmentReady,
        JobState::Configured,
        JobState::Queued,
        JobState::Running,
        JobState::Complete,
        JobState::Failed,
        JobState::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Complete | JobState::Failed | JobState::Cancelled)
    }

    /// The transition table. Every state change of a job goes through here.
    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        match (self, to) {
            (from, Cancelled) => !from.is_terminal(),
            (Draft, SequencesLoaded) => true,
            (SequencesLoaded, SequencesLoaded | Aligning | AlignmentReady | Configured) => true,
            (Aligning, AlignmentReady | SequencesLoaded) => true,
            (AlignmentReady, Aligning | AlignmentReady | Configured) => true,
            (Configured, Configured | Queued) => true,
            (Queued, Running | Failed) => true,
            (Running, Complete | Failed) => true,
            _ => false,
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// User-facing operations, named in transition errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    AttachSequences,
    RequestAlignment,
    AcceptAlignment,
    ReplaceAlignment,
    Configure,
    RenderMasterBlock,
    Submit,
    Cancel,
    FetchOutputs,
    Consensus,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Operation::AttachSequences => "attach sequences to",
            Operation::RequestAlignment => "align",
            Operation::AcceptAlignment => "accept the alignment of",
            Operation::ReplaceAlignment => "replace the alignment of",
            Operation::Configure => "configure",
            Operation::RenderMasterBlock => "render the master block of",
            Operation::Submit => "submit",
            Operation::Cancel => "cancel",
            Operation::FetchOutputs => "fetch outputs of",
            Operation::Consensus => "summarize",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coarse {
    #[serde(rename = "in progress")]
    InProgress,
    #[serde(rename = "complete")]
    Complete,
}

impl fmt::Display for Coarse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coarse::InProgress => "in progress",
            Coarse::Complete => "complete",
        })
    }
}

/// Two-word status with the precise state as detail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusView {
    pub coarse: Coarse,
    pub detail: JobState,
}

impl From<JobState> for StatusView {
    fn from(s: JobState) -> Self {
        Self {
            coarse: if s == JobState::Complete {
                Coarse::Complete
            } else {
                Coarse::InProgress
            },
            detail: s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: DateTime<Utc>,
    pub state: JobState,
    pub note: String,
}

/// A job's full record. Sequence data lives in separate files and is not
/// part of the serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub owner: String,
    pub name: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    pub state: JobState,
    pub alignment_accepted: bool,
    pub scoring: Option<ScoringParams>,
    pub lset: Option<String>,
    pub model: Option<SubstitutionModel<f64>>,
    pub mcmc: Option<McmcConfig>,
    pub datafile: Option<String>,
    pub runs: usize,
    pub outputs: Vec<String>,
    pub proxy: Option<ProxyKind>,
    /// State before the current alignment task, restored if it fails.
    pub align_return: Option<JobState>,
    #[serde(skip)]
    pub history: Vec<HistoryEntry>,
    #[serde(skip)]
    pub sequences: Option<Alignment>,
    #[serde(skip)]
    pub alignment: Option<Alignment>,
    #[serde(skip)]
    pub profile: Option<ConservationProfile>,
}

impl Job {
    pub fn new(id: String, owner: &str, name: &str, description: &str, at: DateTime<Utc>) -> Self {
        Self {
            id,
            owner: owner.to_string(),
            name: name.to_string(),
            description: description.to_string(),
            created_at: at,
            state: JobState::Draft,
            alignment_accepted: false,
            scoring: None,
            lset: None,
            model: None,
            mcmc: None,
            datafile: None,
            runs: 0,
            outputs: Vec::new(),
            proxy: None,
            align_return: None,
            history: vec![HistoryEntry {
                at,
                state: JobState::Draft,
                note: "created".into(),
            }],
            sequences: None,
            alignment: None,
            profile: None,
        }
    }

    pub fn status(&self) -> StatusView {
        self.state.into()
    }

    /// The alignment the job would analyse: the working alignment if one
    /// exists, else the uploaded sequences when they are already aligned.
    pub fn effective_alignment(&self) -> Option<&Alignment> {
        self.alignment
            .as_ref()
            .or(self.sequences.as_ref().filter(|s| s.is_aligned()))
    }

    /// Moves to `to` if the table allows it and appends a history entry
    /// (timestamps never go backwards).
    pub fn transition(&mut self, to: JobState, note: &str, at: DateTime<Utc>, op: Operation) -> Result<()> {
        if !self.state.can_transition(to) {
            return Err(WorkflowError::InvalidTransition { from: self.state, op });
        }
        self.state = to;
        self.record(note, at);
        Ok(())
    }

    /// Appends a history entry for the current state.
    pub fn record(&mut self, note: &str, at: DateTime<Utc>) {
        let at = self.history.last().map_or(at, |h| h.at.max(at));
        self.history.push(HistoryEntry {
            at,
            state: self.state,
            note: note.to_string(),
        });
    }

    pub fn require(&self, op: Operation, allowed: &[JobState]) -> Result<()> {
        if allowed.contains(&self.state) {
            Ok(())
        } else {
            Err(WorkflowError::InvalidTransition { from: self.state, op })
        }
    }
}
