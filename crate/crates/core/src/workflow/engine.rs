use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::Receiver;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::master;
use super::proxy::{Clock, ProxyCredential, ProxyKind};
use super::state::{HistoryEntry, Job, JobState, Operation, StatusView};
use super::store::JobStore;
use super::{Result, WorkflowError};
use crate::aligner::{conservation_profile, realign, ConservationProfile, ScoringParams};
use crate::executor::{
    mcmc_payload, EventKind, ExecutionEvent, PoolConfig, ProgressPayload, TaskEnd, TaskId, TaskKind,
    WorkerPool,
};
use crate::mcmc::{
    consensus_of_runs, parse_tree_file, McmcConfig, OutputSink,
};
use crate::phylomodel::{lset_parse, PhyloTree, SubstitutionModel};
use crate::seqio::{parse_any, Alignment};

const CONSENSUS_FILE: &str = "consensus.tre";

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Clone)]
pub struct WorkflowOptions {
    /// Directory holding `jobs/`.
    pub root: PathBuf,
    pub workers: usize,
    pub start_latency: Vec<Duration>,
    /// Sync each record-log append to disk.
    pub durable: bool,
}

impl WorkflowOptions {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            start_latency: Vec::new(),
            durable: true,
        }
    }
}

/// Parameters of the configure step. Unset optional fields take the
/// defaults of [`McmcConfig`]; `datafile` defaults to `filebase`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigureRequest {
    pub lset: String,
    pub ngen: u64,
    pub samplefreq: u64,
    pub runs: usize,
    pub filebase: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub nchains: Option<usize>,
    #[serde(default)]
    pub datafile: Option<String>,
}

/// A validated [`ConfigureRequest`].
#[derive(Debug, Clone)]
pub struct Resolved {
    /// `lset` parameters without the keyword.
    pub lset: String,
    pub model: SubstitutionModel<f64>,
    pub mcmc: McmcConfig,
}

impl ConfigureRequest {
    /// Validates names, parses `lset` (the keyword is optional) and fills
    /// unset MCMC fields with their defaults. The command-line `run` goes
    /// through here too, so both produce the same chain settings.
    pub fn resolve(&self) -> Result<Resolved> {
        let plain = |what: &str, s: &str| -> Result<()> {
            if s.is_empty()
                || !s
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
            {
                return Err(WorkflowError::Validation(format!(
                    "{what} must be a non-empty name of letters, digits, '.', '_' or '-'"
                )));
            }
            Ok(())
        };
        plain("filebase", &self.filebase)?;
        if let Some(d) = &self.datafile {
            plain("datafile", d)?;
        }
        if self.runs < 1 {
            return Err(WorkflowError::Validation("runs must be at least 1".into()));
        }
        let lset = self.lset.trim().trim_end_matches(';').trim();
        let lset = lset.strip_prefix("lset ").unwrap_or(lset).trim();
        let model = lset_parse::<f64>(&format!("lset {lset}"))?;
        let defaults = McmcConfig::default();
        let cfg = McmcConfig {
            nruns: self.runs,
            ngen: self.ngen,
            samplefreq: self.samplefreq,
            nchains: self.nchains.unwrap_or(defaults.nchains),
            seed: self.seed.unwrap_or(defaults.seed),
            filebase: self.filebase.clone(),
            ..defaults
        };
        cfg.validate()?;
        Ok(Resolved {
            lset: lset.to_string(),
            model,
            mcmc: cfg,
        })
    }
}

/// Which proxy a submission runs under. `Auto` prefers a valid user proxy
/// and falls back to the administrator proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyChoice {
    User,
    Admin,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProgress {
    pub run: usize,
    pub gen: u64,
    pub ngen: u64,
    pub cold_lnl: Option<f64>,
    pub swaps_attempted: u64,
    pub swaps_accepted: u64,
    pub finished: bool,
}

impl RunProgress {
    fn new(run: usize, ngen: u64) -> Self {
        Self {
            run,
            gen: 0,
            ngen,
            cold_lnl: None,
            swaps_attempted: 0,
            swaps_accepted: 0,
            finished: false,
        }
    }

    pub fn swap_acceptance(&self) -> Option<f64> {
        (self.swaps_attempted > 0).then(|| self.swaps_accepted as f64 / self.swaps_attempted as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub id: String,
    pub name: String,
    pub status: StatusView,
    pub alignment_accepted: bool,
    pub progress: Vec<RunProgress>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub name: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    pub status: StatusView,
}

impl From<&Job> for JobSummary {
    fn from(j: &Job) -> Self {
        Self {
            id: j.id.clone(),
            name: j.name.clone(),
            description: j.description.clone(),
            created_at: j.created_at,
            status: j.status(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub newick: String,
    pub burnin: f64,
    /// Trees pooled after per-run burn-in.
    pub ntrees: usize,
    /// Mean standard deviation of split frequencies; present for two or
    /// more runs.
    pub convergence: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AlignmentView {
    pub alignment: Alignment,
    pub profile: Option<ConservationProfile>,
    pub accepted: bool,
}

/// In-memory task bookkeeping of one job. Lost on restart, which is why
/// interrupted jobs are failed when the store is reopened.
#[derive(Default)]
struct Live {
    tasks: BTreeMap<TaskId, TaskKind>,
    align_task: Option<TaskId>,
    progress: BTreeMap<usize, RunProgress>,
}

struct Entry {
    job: Job,
    live: Live,
}

type AlignOutcome = std::result::Result<(Alignment, ConservationProfile), String>;

/// The job pipeline: upload, align loop, configure, submit, monitor and
/// summarize. Mutations of a job are serialized by its lock and every
/// successful one appends to the job's record log before it is visible.
/// Executor events are applied by [`Workflow::pump`], which every
/// operation runs first.
pub struct Workflow {
    store: JobStore,
    clock: Arc<dyn Clock>,
    pool: WorkerPool,
    events: Mutex<Receiver<ExecutionEvent>>,
    jobs: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    next_id: AtomicU64,
    active: Mutex<BTreeSet<String>>,
    align_results: Arc<Mutex<HashMap<TaskId, AlignOutcome>>>,
    user_proxies: Mutex<HashMap<String, ProxyCredential>>,
    admin_proxy: Mutex<Option<ProxyCredential>>,
}

impl Workflow {
    /// Opens the store under `opts.root`, reloads every job and fails the
    /// ones whose tasks were lost with the previous process.
    pub fn open(opts: WorkflowOptions, clock: Arc<dyn Clock>) -> Result<Self> {
        let store = JobStore::open(&opts.root, opts.durable)?;
        let pool = WorkerPool::new(PoolConfig {
            workers: opts.workers,
            start_latency: opts.start_latency.clone(),
        })?;
        let events = Mutex::new(pool.subscribe());
        let loaded = store.load_all()?;
        let mut max_id = 0;
        let mut jobs = HashMap::new();
        for mut job in loaded {
            if let Some(n) = job.id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let now = clock.now();
            let recovered = match job.state {
                JobState::Queued | JobState::Running => {
                    job.outputs.clear();
                    job.transition(JobState::Failed, "interrupted by a restart", now, Operation::Submit)?;
                    true
                }
                JobState::Aligning => {
                    let back = job.align_return.take().unwrap_or(JobState::SequencesLoaded);
                    job.transition(back, "alignment interrupted by a restart", now, Operation::RequestAlignment)?;
                    true
                }
                _ => false,
            };
            if recovered {
                store.append(&job)?;
            }
            jobs.insert(
                job.id.clone(),
                Arc::new(Mutex::new(Entry {
                    job,
                    live: Live::default(),
                })),
            );
        }
        Ok(Self {
            store,
            clock,
            pool,
            events,
            jobs: RwLock::new(jobs),
            next_id: AtomicU64::new(max_id + 1),
            active: Mutex::new(BTreeSet::new()),
            align_results: Arc::new(Mutex::new(HashMap::new())),
            user_proxies: Mutex::new(HashMap::new()),
            admin_proxy: Mutex::new(None),
        })
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn store(&self) -> &JobStore {
        &self.store
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn entry(&self, id: &str) -> Option<Arc<Mutex<Entry>>> {
        self.jobs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
    }

    fn owned(&self, user: &str, id: &str) -> Result<Arc<Mutex<Entry>>> {
        let e = self.entry(id).ok_or_else(|| WorkflowError::NotFound(id.to_string()))?;
        if lock(&e).job.owner != user {
            return Err(WorkflowError::NotFound(id.to_string()));
        }
        Ok(e)
    }

    /// Runs `f` on a copy of the job; on success the copy is persisted (if
    /// its history grew) and replaces the original. On error nothing
    /// changes.
    fn mutate<R>(
        &self,
        entry: &mut Entry,
        f: impl FnOnce(&mut Job, &mut Live, DateTime<Utc>) -> Result<R>,
    ) -> Result<R> {
        let mut job = entry.job.clone();
        let before = job.history.len();
        let r = f(&mut job, &mut entry.live, self.clock.now())?;
        if job.history.len() != before {
            self.store.append(&job)?;
        }
        let active = matches!(job.state, JobState::Queued | JobState::Running);
        {
            let mut a = lock(&self.active);
            if active {
                a.insert(job.id.clone());
            } else {
                a.remove(&job.id);
            }
        }
        entry.job = job;
        Ok(r)
    }

    fn with_job<R>(
        &self,
        user: &str,
        id: &str,
        f: impl FnOnce(&mut Job, &mut Live, DateTime<Utc>) -> Result<R>,
    ) -> Result<R> {
        self.pump();
        let e = self.owned(user, id)?;
        let mut g = lock(&e);
        self.mutate(&mut g, f)
    }

    fn read_job<R>(&self, user: &str, id: &str, f: impl FnOnce(&Entry) -> Result<R>) -> Result<R> {
        self.pump();
        let e = self.owned(user, id)?;
        let g = lock(&e);
        f(&g)
    }

    pub fn create_job(&self, user: &str, name: &str, description: &str) -> Result<Job> {
        if user.trim().is_empty() {
            return Err(WorkflowError::Validation("user must be set".into()));
        }
        if name.trim().is_empty() {
            return Err(WorkflowError::Validation("job name must not be empty".into()));
        }
        let id = format!("job-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let job = Job::new(id.clone(), user, name.trim(), description, self.clock.now());
        self.store.append(&job)?;
        let out = job.clone();
        self.jobs
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(
                id,
                Arc::new(Mutex::new(Entry {
                    job,
                    live: Live::default(),
                })),
            );
        Ok(out)
    }

    /// A snapshot of the job.
    pub fn job(&self, user: &str, id: &str) -> Result<Job> {
        self.read_job(user, id, |e| Ok(e.job.clone()))
    }

    /// The user's jobs, newest first.
    pub fn list_jobs(&self, user: &str) -> Vec<JobSummary> {
        self.pump();
        let entries: Vec<_> = self
            .jobs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        let mut out: Vec<JobSummary> = entries
            .iter()
            .filter_map(|e| {
                let g = lock(e);
                (g.job.owner == user).then(|| JobSummary::from(&g.job))
            })
            .collect();
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| b.id.cmp(&a.id)));
        out
    }

    /// Parses `text` in any supported format and stores it as the job's
    /// sequences. Replaces earlier uploads and clears any alignment.
    pub fn attach_sequences(&self, user: &str, id: &str, text: &str) -> Result<Job> {
        let (format, aln) = parse_any(text)?;
        self.with_job(user, id, |job, _, now| {
            job.require(Operation::AttachSequences, &[JobState::Draft, JobState::SequencesLoaded])?;
            let profile = if aln.is_aligned() {
                Some(conservation_profile(&aln)?)
            } else {
                None
            };
            let file = self.store.write_sequences(&job.id, &aln)?;
            let note = format!("{} sequences uploaded ({format:?}), stored as {file}", aln.ntax());
            job.sequences = Some(aln);
            job.alignment = None;
            job.profile = profile;
            job.alignment_accepted = false;
            job.transition(JobState::SequencesLoaded, &note, now, Operation::AttachSequences)?;
            Ok(job.clone())
        })
    }

    /// Schedules a realignment of the uploaded sequences.
    pub fn request_alignment(&self, user: &str, id: &str, scoring: Option<ScoringParams>) -> Result<TaskId> {
        let scoring = scoring.unwrap_or_default();
        scoring.validate()?;
        self.with_job(user, id, |job, live, now| {
            job.require(
                Operation::RequestAlignment,
                &[JobState::SequencesLoaded, JobState::AlignmentReady],
            )?;
            let seqs = job.sequences.clone().ok_or(WorkflowError::InvalidTransition {
                from: job.state,
                op: Operation::RequestAlignment,
            })?;
            let results = Arc::clone(&self.align_results);
            let task = self.pool.submit_task(
                &job.id,
                TaskKind::Align,
                Box::new(move |ctx| {
                    let out = realign(&seqs, &scoring)
                        .and_then(|a| conservation_profile(&a).map(|p| (a, p)))
                        .map_err(|e| e.to_string());
                    let failed = out.as_ref().err().cloned();
                    lock(&results).insert(ctx.id(), out);
                    match failed {
                        Some(msg) => Err(msg),
                        None => Ok(TaskEnd::Done),
                    }
                }),
            )?;
            job.align_return = Some(job.state);
            job.scoring = Some(scoring);
            job.transition(JobState::Aligning, "alignment requested", now, Operation::RequestAlignment)?;
            live.tasks.insert(task, TaskKind::Align);
            live.align_task = Some(task);
            Ok(task)
        })
    }

    pub fn accept_alignment(&self, user: &str, id: &str) -> Result<Job> {
        self.with_job(user, id, |job, _, now| {
            job.require(
                Operation::AcceptAlignment,
                &[JobState::SequencesLoaded, JobState::AlignmentReady],
            )?;
            if !job.effective_alignment().is_some_and(Alignment::is_aligned) {
                return Err(WorkflowError::NotAligned);
            }
            job.alignment_accepted = true;
            let state = job.state;
            job.transition(state, "alignment accepted", now, Operation::AcceptAlignment)?;
            Ok(job.clone())
        })
    }

    /// Replaces the working alignment with a user-edited one. It must hold
    /// the same taxa and, gaps removed, the same residues as the upload.
    /// The replacement counts as accepted.
    pub fn submit_replacement_alignment(&self, user: &str, id: &str, text: &str) -> Result<Job> {
        let (_, aln) = parse_any(text)?;
        self.with_job(user, id, |job, _, now| {
            job.require(
                Operation::ReplaceAlignment,
                &[JobState::SequencesLoaded, JobState::AlignmentReady],
            )?;
            if !aln.is_aligned() {
                return Err(WorkflowError::NotAligned);
            }
            let seqs = job.sequences.as_ref().ok_or(WorkflowError::InvalidTransition {
                from: job.state,
                op: Operation::ReplaceAlignment,
            })?;
            let mut want = seqs.taxa();
            let mut got = aln.taxa();
            want.sort_unstable();
            got.sort_unstable();
            if want != got {
                return Err(WorkflowError::TaxaMismatch);
            }
            for r in aln.records() {
                let orig = seqs.get(&r.id).expect("taxa sets are equal");
                if orig.ungapped() != r.ungapped() {
                    return Err(WorkflowError::ContentMismatch(r.id.clone()));
                }
            }
            let profile = conservation_profile(&aln)?;
            self.store.write_alignment(&job.id, &aln)?;
            job.alignment = Some(aln);
            job.profile = Some(profile);
            job.alignment_accepted = true;
            job.transition(
                JobState::AlignmentReady,
                "replacement alignment accepted",
                now,
                Operation::ReplaceAlignment,
            )?;
            Ok(job.clone())
        })
    }

    pub fn alignment(&self, user: &str, id: &str) -> Result<AlignmentView> {
        self.read_job(user, id, |e| {
            let job = &e.job;
            let alignment = job
                .alignment
                .clone()
                .or_else(|| job.sequences.clone())
                .ok_or(WorkflowError::NotFound(format!("{}/alignment", job.id)))?;
            Ok(AlignmentView {
                alignment,
                profile: job.profile.clone(),
                accepted: job.alignment_accepted,
            })
        })
    }

    pub fn configure(&self, user: &str, id: &str, req: &ConfigureRequest) -> Result<Job> {
        let Resolved { lset, model, mcmc: cfg } = req.resolve()?;
        self.with_job(user, id, |job, _, now| {
            job.require(
                Operation::Configure,
                &[JobState::SequencesLoaded, JobState::AlignmentReady, JobState::Configured],
            )?;
            if !job.alignment_accepted {
                return Err(WorkflowError::InvalidTransition {
                    from: job.state,
                    op: Operation::Configure,
                });
            }
            let ntax = job.effective_alignment().map_or(0, Alignment::ntax);
            if ntax < 3 {
                return Err(WorkflowError::Validation(format!(
                    "an analysis needs at least 3 taxa, the alignment has {ntax}"
                )));
            }
            let note = format!(
                "configured: lset {}, ngen={} samplefreq={} runs={}",
                model.lset_params(),
                cfg.ngen,
                cfg.samplefreq,
                cfg.nruns
            );
            job.lset = Some(lset);
            job.model = Some(model);
            job.runs = cfg.nruns;
            job.datafile = Some(req.datafile.clone().unwrap_or_else(|| cfg.filebase.clone()));
            job.mcmc = Some(cfg);
            job.transition(JobState::Configured, &note, now, Operation::Configure)?;
            Ok(job.clone())
        })
    }

    pub fn render_master_block(&self, user: &str, id: &str) -> Result<String> {
        self.read_job(user, id, |e| master::render_master_block(&e.job))
    }

    pub fn init_proxy(&self, user: &str, lifetime_s: i64) -> Result<ProxyCredential> {
        let p = ProxyCredential::init(user, lifetime_s, ProxyKind::User, self.clock.now())?;
        lock(&self.user_proxies).insert(user.to_string(), p.clone());
        Ok(p)
    }

    pub fn init_admin_proxy(&self, owner: &str, lifetime_s: i64) -> Result<ProxyCredential> {
        let p = ProxyCredential::init(owner, lifetime_s, ProxyKind::Admin, self.clock.now())?;
        *lock(&self.admin_proxy) = Some(p.clone());
        Ok(p)
    }

    /// User proxies cannot be renewed; this always errors for them.
    pub fn renew_proxy(&self, user: &str) -> Result<ProxyCredential> {
        let g = lock(&self.user_proxies);
        let p = g.get(user).ok_or(WorkflowError::NoProxy)?;
        p.renew(self.clock.now())
    }

    pub fn renew_admin_proxy(&self) -> Result<ProxyCredential> {
        let mut g = lock(&self.admin_proxy);
        let p = g.as_ref().ok_or(WorkflowError::NoProxy)?.renew(self.clock.now())?;
        *g = Some(p.clone());
        Ok(p)
    }

    pub fn proxy(&self, user: &str) -> Option<ProxyCredential> {
        lock(&self.user_proxies).get(user).cloned()
    }

    pub fn admin_proxy(&self) -> Option<ProxyCredential> {
        lock(&self.admin_proxy).clone()
    }

    fn resolve_proxy(&self, user: &str, choice: ProxyChoice) -> Result<ProxyKind> {
        let now = self.clock.now();
        let check = |p: Option<ProxyCredential>| match p {
            None => Err(WorkflowError::NoProxy),
            Some(p) if !p.is_valid(now) => Err(WorkflowError::ExpiredProxy),
            Some(_) => Ok(()),
        };
        match choice {
            ProxyChoice::User => check(self.proxy(user)).map(|_| ProxyKind::User),
            ProxyChoice::Admin => check(self.admin_proxy()).map(|_| ProxyKind::Admin),
            ProxyChoice::Auto => match check(self.proxy(user)) {
                Ok(()) => Ok(ProxyKind::User),
                Err(user_err) => match check(self.admin_proxy()) {
                    Ok(()) => Ok(ProxyKind::Admin),
                    Err(WorkflowError::NoProxy) => Err(user_err),
                    Err(e) => Err(e),
                },
            },
        }
    }

    /// Queues one executor task per run.
    pub fn submit(&self, user: &str, id: &str, choice: ProxyChoice) -> Result<Job> {
        self.with_job(user, id, |job, live, now| {
            job.require(Operation::Submit, &[JobState::Configured])?;
            let kind = self.resolve_proxy(user, choice)?;
            let (Some(cfg), Some(model), Some(data)) =
                (job.mcmc.clone(), job.model.clone(), job.effective_alignment().cloned())
            else {
                return Err(WorkflowError::NotConfigured);
            };
            let out = self.store.out_dir(&job.id);
            fs::create_dir_all(&out).map_err(|e| WorkflowError::Storage {
                path: out.display().to_string(),
                msg: e.to_string(),
            })?;
            let cfg = Arc::new(cfg);
            let data = Arc::new(data);
            let mut tasks = Vec::with_capacity(cfg.nruns);
            for run in 1..=cfg.nruns {
                let payload = mcmc_payload(
                    Arc::clone(&cfg),
                    Arc::clone(&data),
                    model.clone(),
                    run,
                    OutputSink::Directory(out.clone()),
                );
                match self.pool.submit_task(&job.id, TaskKind::McmcRun(run), payload) {
                    Ok(t) => tasks.push((t, run)),
                    Err(e) => {
                        for (t, _) in tasks {
                            let _ = self.pool.cancel_task(t);
                        }
                        return Err(e.into());
                    }
                }
            }
            for (t, run) in tasks {
                live.tasks.insert(t, TaskKind::McmcRun(run));
                live.progress.insert(run, RunProgress::new(run, cfg.ngen));
            }
            job.proxy = Some(kind);
            let note = format!("submitted {} run(s) under the {kind:?} proxy", cfg.nruns).to_lowercase();
            job.transition(JobState::Queued, &note, now, Operation::Submit)?;
            Ok(job.clone())
        })
    }

    pub fn poll_status(&self, user: &str, id: &str) -> Result<StatusReport> {
        self.read_job(user, id, |e| {
            let job = &e.job;
            let progress = if e.live.progress.is_empty() {
                self.progress_from_files(job)
            } else {
                e.live.progress.values().cloned().collect()
            };
            Ok(StatusReport {
                id: job.id.clone(),
                name: job.name.clone(),
                status: job.status(),
                alignment_accepted: job.alignment_accepted,
                progress,
                history: job.history.clone(),
            })
        })
    }

    /// Progress recovered from the `.mcmc` files of an earlier process.
    fn progress_from_files(&self, job: &Job) -> Vec<RunProgress> {
        let Some(cfg) = &job.mcmc else {
            return Vec::new();
        };
        let dir = self.store.out_dir(&job.id);
        let mut out = Vec::new();
        for run in 1..=cfg.nruns {
            let Ok(text) = fs::read_to_string(dir.join(format!("{}.mcmc", cfg.run_stem(run)))) else {
                continue;
            };
            let mut p = RunProgress::new(run, cfg.ngen);
            if let Some(last) = text.lines().skip(1).filter(|l| l.split('\t').count() == 4).last() {
                let f: Vec<&str> = last.split('\t').collect();
                p.gen = f[0].parse().unwrap_or(0);
                p.swaps_attempted = f[1].parse().unwrap_or(0);
                p.swaps_accepted = f[2].parse().unwrap_or(0);
                p.cold_lnl = f[3].parse().ok();
            }
            p.finished = job.state == JobState::Complete;
            out.push(p);
        }
        out
    }

    fn list_outputs(&self, job: &Job) -> Result<Vec<Artifact>> {
        let mut out = Vec::new();
        let mut add = |dir: PathBuf, only: Option<&str>| {
            let Ok(rd) = fs::read_dir(&dir) else { return };
            for e in rd.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                let is_file = e.file_type().is_ok_and(|t| t.is_file());
                if is_file && only.is_none_or(|o| o == name) && !name.ends_with(".tmp") {
                    let bytes = e.metadata().map_or(0, |m| m.len());
                    out.push(Artifact { name, bytes });
                }
            }
        };
        add(self.store.out_dir(&job.id), None);
        add(self.store.job_dir(&job.id), Some(CONSENSUS_FILE));
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    /// Output files of a job that has started running. Partial files of a
    /// running, cancelled or failed job are listed as they are.
    pub fn fetch_outputs(&self, user: &str, id: &str) -> Result<Vec<Artifact>> {
        self.read_job(user, id, |e| {
            use JobState::*;
            if !matches!(e.job.state, Running | Complete | Cancelled | Failed) {
                return Err(WorkflowError::NoOutputs);
            }
            let files = self.list_outputs(&e.job)?;
            if files.is_empty() {
                return Err(WorkflowError::NoOutputs);
            }
            Ok(files)
        })
    }

    pub fn read_output(&self, user: &str, id: &str, name: &str) -> Result<Vec<u8>> {
        let files = self.fetch_outputs(user, id)?;
        if !files.iter().any(|a| a.name == name) {
            return Err(WorkflowError::NotFound(format!("{id}/{name}")));
        }
        let path = if name == CONSENSUS_FILE {
            self.store.job_dir(id).join(name)
        } else {
            self.store.out_dir(id).join(name)
        };
        fs::read(&path).map_err(|e| WorkflowError::Storage {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Majority-rule consensus of all runs, each trimmed by `burnin` before
    /// pooling. Refreshes `consensus.tre` but leaves the job record alone.
    pub fn compute_consensus(&self, user: &str, id: &str, burnin: f64) -> Result<ConsensusReport> {
        self.read_job(user, id, |e| {
            let job = &e.job;
            job.require(Operation::Consensus, &[JobState::Complete])?;
            let cfg = job.mcmc.as_ref().ok_or(WorkflowError::NotConfigured)?;
            let dir = self.store.out_dir(&job.id);
            let mut runs: Vec<Vec<PhyloTree<f64>>> = Vec::with_capacity(cfg.nruns);
            for run in 1..=cfg.nruns {
                let path = dir.join(format!("{}.t", cfg.run_stem(run)));
                let text = fs::read_to_string(&path).map_err(|e| WorkflowError::Storage {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
                runs.push(parse_tree_file::<f64>(&text)?.into_iter().map(|s| s.tree).collect());
            }
            let (tree, convergence) = consensus_of_runs(&runs, burnin)?;
            let newick = tree.to_newick();
            self.store
                .write_file(&job.id, CONSENSUS_FILE, format!("{newick}\n").as_bytes())?;
            Ok(ConsensusReport {
                newick,
                burnin,
                ntrees: tree.ntrees,
                convergence,
            })
        })
    }

    /// Cancels a job in any non-terminal state and signals its tasks.
    /// Files already written are kept.
    pub fn cancel(&self, user: &str, id: &str) -> Result<Job> {
        self.with_job(user, id, |job, live, now| {
            job.transition(JobState::Cancelled, "cancelled by the user", now, Operation::Cancel)?;
            job.outputs.clear();
            for &t in live.tasks.keys() {
                let _ = self.pool.cancel_task(t);
            }
            live.align_task = None;
            Ok(job.clone())
        })
    }

    /// Blocks until every task of the job has ended, then applies events.
    pub fn wait_job(&self, id: &str) {
        let ids: Vec<TaskId> = match self.entry(id) {
            Some(e) => lock(&e).live.tasks.keys().copied().collect(),
            None => return,
        };
        self.pool.wait(&ids);
        self.pump();
    }

    /// Applies pending executor events and enforces proxy lifetimes of
    /// running jobs.
    pub fn pump(&self) {
        let rx = lock(&self.events);
        let events: Vec<ExecutionEvent> = rx.try_iter().collect();
        for ev in events {
            if let Some(e) = self.entry(&ev.job) {
                let mut g = lock(&e);
                if let Err(err) = self.apply(&mut g, &ev) {
                    eprintln!("job {}: failed to record event: {err}", ev.job);
                }
            }
        }
        self.check_proxies();
    }

    fn apply(&self, entry: &mut Entry, ev: &ExecutionEvent) -> Result<()> {
        let Some(&kind) = entry.live.tasks.get(&ev.task) else {
            return Ok(());
        };
        match kind {
            TaskKind::Align => {
                if !ev.kind.is_terminal() {
                    return Ok(());
                }
                let outcome = lock(&self.align_results).remove(&ev.task);
                if entry.live.align_task != Some(ev.task) {
                    return Ok(());
                }
                entry.live.align_task = None;
                self.mutate(entry, |job, _, now| {
                    if job.state != JobState::Aligning {
                        return Ok(());
                    }
                    let back = job.align_return.take().unwrap_or(JobState::SequencesLoaded);
                    let op = Operation::RequestAlignment;
                    match (&ev.kind, outcome) {
                        (EventKind::Finished, Some(Ok((aln, profile)))) => {
                            self.store.write_alignment(&job.id, &aln)?;
                            job.alignment = Some(aln);
                            job.profile = Some(profile);
                            job.alignment_accepted = false;
                            job.transition(JobState::AlignmentReady, "alignment finished", now, op)
                        }
                        (EventKind::Failed { reason }, _) => {
                            job.transition(back, &format!("alignment failed: {reason}"), now, op)
                        }
                        _ => job.transition(back, "alignment did not complete", now, op),
                    }
                })
            }
            TaskKind::McmcRun(run) => {
                if let EventKind::Progress {
                    payload: ProgressPayload::Mcmc(p),
                } = &ev.kind
                {
                    let slot = entry
                        .live
                        .progress
                        .entry(run)
                        .or_insert_with(|| RunProgress::new(run, p.ngen));
                    if p.gen >= slot.gen {
                        slot.gen = p.gen;
                        slot.cold_lnl = Some(p.cold_lnl);
                        slot.swaps_attempted = p.swaps_attempted;
                        slot.swaps_accepted = p.swaps_accepted;
                    }
                    return Ok(());
                }
                if ev.kind == EventKind::Finished {
                    if let Some(p) = entry.live.progress.get_mut(&run) {
                        p.finished = true;
                    }
                }
                let all_done = entry.live.progress.values().all(|p| p.finished);
                let siblings: Vec<TaskId> = entry.live.tasks.keys().copied().collect();
                self.mutate(entry, |job, _, now| {
                    let op = Operation::Submit;
                    match &ev.kind {
                        EventKind::Started if job.state == JobState::Queued => {
                            job.outputs = expected_outputs(job);
                            job.transition(JobState::Running, &format!("run {run} started"), now, op)
                        }
                        EventKind::Finished if job.state == JobState::Running && all_done => {
                            job.outputs = expected_outputs(job);
                            job.transition(JobState::Complete, "all runs finished", now, op)
                        }
                        EventKind::Failed { reason }
                            if matches!(job.state, JobState::Queued | JobState::Running) =>
                        {
                            for &t in &siblings {
                                let _ = self.pool.cancel_task(t);
                            }
                            job.outputs.clear();
                            let note = format!("run {run} failed: {reason}");
                            job.transition(JobState::Failed, &note, now, op)
                        }
                        EventKind::Cancelled
                            if matches!(job.state, JobState::Queued | JobState::Running) =>
                        {
                            for &t in &siblings {
                                let _ = self.pool.cancel_task(t);
                            }
                            job.outputs.clear();
                            let note = format!("run {run} was cancelled by the executor");
                            job.transition(JobState::Failed, &note, now, op)
                        }
                        _ => Ok(()),
                    }
                })
            }
        }
    }

    fn check_proxies(&self) {
        let active: Vec<String> = lock(&self.active).iter().cloned().collect();
        if active.is_empty() {
            return;
        }
        let now = self.clock.now();
        let mut admin_renewed = false;
        for id in active {
            let Some(e) = self.entry(&id) else { continue };
            let mut g = lock(&e);
            let r = match g.job.proxy {
                Some(ProxyKind::Admin) => {
                    let expired = self.admin_proxy().is_none_or(|p| !p.is_valid(now));
                    if !expired {
                        continue;
                    }
                    if !admin_renewed {
                        if self.renew_admin_proxy().is_err() {
                            continue;
                        }
                        admin_renewed = true;
                    }
                    self.mutate(&mut g, |job, _, now| {
                        job.record("administrator proxy renewed", now);
                        Ok(())
                    })
                }
                Some(ProxyKind::User) => {
                    let owner = g.job.owner.clone();
                    if self.proxy(&owner).is_some_and(|p| p.is_valid(now)) {
                        continue;
                    }
                    let tasks: Vec<TaskId> = g.live.tasks.keys().copied().collect();
                    self.mutate(&mut g, |job, _, now| {
                        for &t in &tasks {
                            let _ = self.pool.cancel_task(t);
                        }
                        job.outputs.clear();
                        job.transition(JobState::Failed, "user proxy expired", now, Operation::Submit)
                    })
                }
                None => continue,
            };
            if let Err(err) = r {
                eprintln!("job {id}: failed to record proxy check: {err}");
            }
        }
    }
}

fn expected_outputs(job: &Job) -> Vec<String> {
    let Some(cfg) = &job.mcmc else {
        return Vec::new();
    };
    (1..=cfg.nruns)
        .flat_map(|r| {
            let stem = cfg.run_stem(r);
            ["p", "t", "mcmc"].map(|ext| format!("{stem}.{ext}"))
        })
        .collect()
}

impl Workflow {
    /// Stops the executor. With `drain` queued and running tasks finish
    /// and their events are applied; otherwise they are cancelled, and the
    /// affected jobs are failed when the store is next opened.
    pub fn shutdown(&self, drain: bool) {
        if !drain {
            for t in self.pool.tasks() {
                if !t.state.is_terminal() {
                    let _ = self.pool.cancel_task(t.id);
                }
            }
        }
        self.pool.shutdown();
        if drain {
            self.pump();
        }
    }
}

impl Drop for Workflow {
    fn drop(&mut self) {
        self.shutdown(false);
    }
}
