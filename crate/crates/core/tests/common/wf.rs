//! Workflow fixtures: sample uploads, a master-block reader and the
//! randomized operation-sequence harness.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use phylogrid_core::workflow::{
    ConfigureRequest, JobState, ManualClock, MasterBlock, Operation, ProxyChoice, Workflow,
    WorkflowError, WorkflowOptions,
};
use proptest::prelude::*;

pub const ALIGNED_FASTA: &str = ">a\nACGTACGTAC-A\n>b\nACGTTCGTAAGA\n>c\nAGGAACCTAA-A\n>d\nTGCAACC-ACTA\n";
pub const UNALIGNED_FASTA: &str = ">a\nACGTACGTACA\n>b\nACGTTCGTAAGA\n>c\nAGGAACCTAAA\n>d\nTGCAACCACTA\n";
/// Same residues as [`ALIGNED_FASTA`], different gap placement.
pub const REPLACEMENT_FASTA: &str = ">a\nACGTACGTA-CA\n>b\nACGTTCGTAAGA\n>c\nAGGAACCTA-AA\n>d\nTGCAACCA-CTA\n";
pub const WRONG_TAXA_FASTA: &str = ">a\nACGTACGTAC-A\n>b\nACGTTCGTAAGA\n>c\nAGGAACCTAA-A\n>e\nTGCAACC-ACTA\n";
pub const WRONG_CONTENT_FASTA: &str = ">a\nACGTACGTAC-A\n>b\nACGTTCGTAAGA\n>c\nAGGAACCTAA-A\n>d\nTGCAACC-ACTT\n";
pub const GARBAGE: &str = "this is not a sequence file\n";

pub fn start_time() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z").unwrap().into()
}

pub fn open(root: &std::path::Path, workers: usize, clock: &ManualClock) -> Workflow {
    let mut opts = WorkflowOptions::new(root);
    opts.workers = workers;
    Workflow::open(opts, Arc::new(clock.clone())).unwrap()
}

pub fn request(ngen: u64, samplefreq: u64, runs: usize, filebase: &str) -> ConfigureRequest {
    ConfigureRequest {
        lset: "nst=6 rates=gamma".into(),
        ngen,
        samplefreq,
        runs,
        filebase: filebase.into(),
        seed: Some(7),
        nchains: Some(2),
        datafile: None,
    }
}

/// Creates a job owned by `user` and takes it to Configured.
pub fn configured_job(wf: &Workflow, user: &str, req: &ConfigureRequest) -> String {
    let id = wf.create_job(user, "primates", "test job").unwrap().id;
    wf.attach_sequences(user, &id, ALIGNED_FASTA).unwrap();
    wf.accept_alignment(user, &id).unwrap();
    wf.configure(user, &id, req).unwrap();
    id
}

/// Reads a master block back into its inputs. Strict about layout: any
/// deviation from the rendered form yields `None`.
pub fn parse_master_block(text: &str) -> Option<MasterBlock> {
    let body = text.strip_suffix('\n')?;
    let lines: Vec<&str> = body.split('\n').collect();
    if lines.len() < 6 || lines[0] != "begin mrbayes;" || lines[1] != "  set autoclose=yes nowarn=yes;" {
        return None;
    }
    if *lines.last()? != "end;" {
        return None;
    }
    let datafile = lines[2].strip_prefix("  execute ")?.strip_suffix(';')?.to_string();
    let lset = lines[3].strip_prefix("  lset ")?.strip_suffix(';')?.to_string();
    let mcmc = lines[4].strip_prefix("  mcmc nruns=1 ")?.strip_suffix(';')?;
    let mut ngen = None;
    let mut samplefreq = None;
    let mut file = None;
    for kv in mcmc.split(' ') {
        let (k, v) = kv.split_once('=')?;
        match k {
            "ngen" => ngen = Some(v.parse().ok()?),
            "samplefreq" => samplefreq = Some(v.parse().ok()?),
            "file" => file = Some(v.to_string()),
            _ => return None,
        }
    }
    let filebase = file?.strip_suffix('1')?.to_string();
    let rest = &lines[5..lines.len() - 1];
    for (i, l) in rest.iter().enumerate() {
        if *l != format!("  mcmc file={filebase}{};", i + 2) {
            return None;
        }
    }
    Some(MasterBlock {
        datafile,
        lset,
        ngen: ngen?,
        samplefreq: samplefreq?,
        runs: rest.len() + 1,
        filebase,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum Upload {
    Aligned,
    Unaligned,
    Garbage,
}

#[derive(Debug, Clone, Copy)]
pub enum Replacement {
    Good,
    WrongTaxa,
    WrongContent,
    Unaligned,
}

#[derive(Debug, Clone)]
pub enum Op {
    Attach(Upload),
    Align,
    Accept,
    Replace(Replacement),
    Configure { runs: usize, valid: bool },
    Master,
    InitProxy(i64),
    InitAdminProxy(i64),
    RenewAdmin,
    Advance(i64),
    Submit(ProxyChoice),
    RunPending,
    Poll,
    Fetch,
    Consensus(f64),
    Cancel,
}

pub fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => prop_oneof![Just(Upload::Aligned), Just(Upload::Unaligned), Just(Upload::Garbage)].prop_map(Op::Attach),
        2 => Just(Op::Align),
        3 => Just(Op::Accept),
        1 => prop_oneof![
            Just(Replacement::Good),
            Just(Replacement::WrongTaxa),
            Just(Replacement::WrongContent),
            Just(Replacement::Unaligned)
        ]
        .prop_map(Op::Replace),
        3 => (1usize..=3, prop::bool::weighted(0.8)).prop_map(|(runs, valid)| Op::Configure { runs, valid }),
        1 => Just(Op::Master),
        2 => (1i64..4000).prop_map(Op::InitProxy),
        1 => (1i64..4000).prop_map(Op::InitAdminProxy),
        1 => Just(Op::RenewAdmin),
        1 => (0i64..3000).prop_map(Op::Advance),
        3 => prop_oneof![Just(ProxyChoice::User), Just(ProxyChoice::Admin), Just(ProxyChoice::Auto)].prop_map(Op::Submit),
        3 => Just(Op::RunPending),
        1 => Just(Op::Poll),
        1 => Just(Op::Fetch),
        1 => prop_oneof![Just(0.25), Just(0.0), Just(1.0)].prop_map(Op::Consensus),
        1 => Just(Op::Cancel),
    ]
}

/// Free sequences, plus sequences that start from a configured job with a
/// proxy so that the run-time states are reached often.
pub fn sequence_strategy() -> impl Strategy<Value = Vec<Op>> {
    let free = prop::collection::vec(op_strategy(), 1..16);
    let prefix = (1usize..=3, 1i64..4000).prop_map(|(runs, life)| {
        vec![
            Op::Attach(Upload::Aligned),
            Op::Accept,
            Op::Configure { runs, valid: true },
            Op::InitProxy(life),
        ]
    });
    let staged = (prefix, prop::collection::vec(op_strategy(), 1..12)).prop_map(|(mut p, rest)| {
        p.extend(rest);
        p
    });
    prop_oneof![free, staged]
}

/// States in which an operation may be called at all.
fn allowed(op: &Op) -> Option<&'static [JobState]> {
    use JobState::*;
    Some(match op {
        Op::Attach(_) => &[Draft, SequencesLoaded],
        Op::Align | Op::Accept | Op::Replace(_) => &[SequencesLoaded, AlignmentReady],
        Op::Configure { .. } => &[SequencesLoaded, AlignmentReady, Configured],
        Op::Master => &[Configured, Queued, Running, Complete, Failed, Cancelled],
        Op::Submit(_) => &[Configured],
        Op::Fetch => &[Running, Complete, Cancelled, Failed],
        Op::Consensus(_) => &[Complete],
        Op::Cancel => &[Draft, SequencesLoaded, Aligning, AlignmentReady, Configured, Queued, Running],
        _ => return None,
    })
}

/// Everything an observer can see of a job.
fn snapshot(wf: &Workflow, user: &str, id: &str) -> String {
    format!("{:?}", wf.job(user, id).unwrap())
}

fn check_invariants(wf: &Workflow, user: &str, id: &str) -> Result<(), String> {
    let job = wf.job(user, id).map_err(|e| e.to_string())?;
    for w in job.history.windows(2) {
        if w[1].at < w[0].at {
            return Err(format!("history goes back in time: {w:?}"));
        }
        if w[0].state != w[1].state && !w[0].state.can_transition(w[1].state) {
            return Err(format!("history holds an undefined transition {} -> {}", w[0].state, w[1].state));
        }
    }
    if job.history.last().map(|h| h.state) != Some(job.state) {
        return Err("last history entry disagrees with the state".into());
    }
    if job.state == JobState::Configured
        && (job.model.is_none() || job.mcmc.is_none() || !job.effective_alignment().is_some_and(|a| a.is_aligned()))
    {
        return Err("configured job lacks model, settings or aligned data".into());
    }
    if !job.outputs.is_empty() && !matches!(job.state, JobState::Running | JobState::Complete) {
        return Err(format!("outputs listed in state {}", job.state));
    }
    let coarse = job.status().coarse.to_string();
    let want = if job.state == JobState::Complete { "complete" } else { "in progress" };
    if coarse != want {
        return Err(format!("coarse status {coarse} for {}", job.state));
    }
    Ok(())
}

/// Applies `ops` to a fresh job of `user`. Illegal calls must fail and
/// leave the job untouched; legal ones must keep every invariant.
pub fn run_sequence(wf: &Workflow, clock: &ManualClock, user: &str, ops: &[Op]) -> Result<Vec<JobState>, String> {
    let id = wf.create_job(user, "job", "").map_err(|e| e.to_string())?.id;
    for op in ops {
        let before = snapshot(wf, user, &id);
        let state = wf.job(user, &id).unwrap().state;
        let r: Result<(), WorkflowError> = match op {
            Op::Attach(u) => wf
                .attach_sequences(user, &id, match u {
                    Upload::Aligned => ALIGNED_FASTA,
                    Upload::Unaligned => UNALIGNED_FASTA,
                    Upload::Garbage => GARBAGE,
                })
                .map(drop),
            Op::Align => wf.request_alignment(user, &id, None).map(drop),
            Op::Accept => wf.accept_alignment(user, &id).map(drop),
            Op::Replace(r) => wf
                .submit_replacement_alignment(user, &id, match r {
                    Replacement::Good => REPLACEMENT_FASTA,
                    Replacement::WrongTaxa => WRONG_TAXA_FASTA,
                    Replacement::WrongContent => WRONG_CONTENT_FASTA,
                    Replacement::Unaligned => UNALIGNED_FASTA,
                })
                .map(drop),
            Op::Configure { runs, valid } => {
                let mut req = request(20, 10, *runs, "run");
                if !valid {
                    req.samplefreq = 40;
                }
                wf.configure(user, &id, &req).map(drop)
            }
            Op::Master => wf.render_master_block(user, &id).map(drop),
            Op::InitProxy(s) => wf.init_proxy(user, *s).map(drop),
            Op::InitAdminProxy(s) => wf.init_admin_proxy("admin", *s).map(drop),
            Op::RenewAdmin => wf.renew_admin_proxy().map(drop),
            Op::Advance(s) => {
                clock.advance(Duration::seconds(*s));
                Ok(())
            }
            Op::Submit(c) => wf.submit(user, &id, *c).map(drop),
            Op::RunPending => {
                wf.pool().resume();
                wf.wait_job(&id);
                wf.pool().pause();
                Ok(())
            }
            Op::Poll => wf.poll_status(user, &id).map(drop),
            Op::Fetch => wf.fetch_outputs(user, &id).map(drop),
            Op::Consensus(b) => wf.compute_consensus(user, &id, *b).map(drop),
            Op::Cancel => wf.cancel(user, &id).map(drop),
        };
        match (&r, allowed(op)) {
            (Ok(()), Some(states)) if !states.contains(&state) => {
                return Err(format!("{op:?} succeeded in state {state}"));
            }
            (Err(WorkflowError::InvalidTransition { from, op: o }), Some(states)) => {
                if states.contains(from) && *o != Operation::Configure {
                    return Err(format!("{op:?} refused in allowed state {from}"));
                }
            }
            (Err(WorkflowError::InvalidTransition { .. }), None) => {
                return Err(format!("{op:?} reported an invalid transition"));
            }
            _ => {}
        }
        if r.is_err() {
            let after = snapshot(wf, user, &id);
            if after != before {
                return Err(format!("failed {op:?} changed the job:\n{before}\n{after}"));
            }
        }
        check_invariants(wf, user, &id)?;
    }
    Ok(wf.job(user, &id).unwrap().history.iter().map(|h| h.state).collect())
}

pub struct SuiteStats {
    pub sequences: u32,
    /// Job states reached at least once across all sequences.
    pub visited: HashSet<JobState>,
}

/// Runs `cases` random sequences against one shared workflow with a
/// paused pool, one fresh user per sequence.
pub fn property_suite(cases: u32, root: &std::path::Path) -> Result<SuiteStats, String> {
    use proptest::test_runner::{Config, TestCaseError, TestRunner};
    use std::sync::atomic::{AtomicU32, Ordering};
    let clock = ManualClock::new(start_time());
    let mut opts = WorkflowOptions::new(root);
    opts.workers = 1;
    opts.durable = false;
    let wf = Workflow::open(opts, Arc::new(clock.clone())).unwrap();
    wf.pool().pause();
    let counter = AtomicU32::new(0);
    let visited = Mutex::new(HashSet::new());
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&sequence_strategy(), |ops| {
            let n = counter.fetch_add(1, Ordering::Relaxed);
            let states = run_sequence(&wf, &clock, &format!("user{n}"), &ops).map_err(TestCaseError::fail)?;
            visited.lock().unwrap().extend(states);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    wf.pool().resume();
    Ok(SuiteStats {
        sequences: counter.load(Ordering::Relaxed),
        visited: visited.into_inner().unwrap(),
    })
}
