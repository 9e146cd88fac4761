//! In-process worker pool standing in for a batch cluster: FIFO dispatch,
//! per-task progress events, cancellation and panic isolation.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcmc::{run_single, McmcConfig, OutputSink, Progress, RunOutcome};
use crate::phylomodel::SubstitutionModel;
use crate::scalar::Real;
use crate::seqio::Alignment;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("the worker pool has been shut down")]
    PoolClosed,
    #[error("no task with id {0}")]
    UnknownTask(TaskId),
    #[error("a pool needs at least one worker")]
    NoWorkers,
}

pub type Result<T, E = ExecError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "run", rename_all = "snake_case")]
pub enum TaskKind {
    Align,
    McmcRun(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed | TaskState::Cancelled)
    }
}

/// Progress payloads a task may report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProgressPayload {
    Mcmc(Progress),
    Align { done: usize, total: usize },
    Message { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Started,
    Progress { payload: ProgressPayload },
    Finished,
    Failed { reason: String },
    Cancelled,
}

impl EventKind {
    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::Finished | EventKind::Failed { .. } | EventKind::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub task: TaskId,
    pub job: String,
    pub kind: EventKind,
    pub at: DateTime<Utc>,
}

/// Snapshot of a task's bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub id: TaskId,
    pub job: String,
    pub kind: TaskKind,
    pub state: TaskState,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub worker: Option<usize>,
}

/// How a payload ended when it did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskEnd {
    Done,
    Cancelled,
}

/// Handle given to a running payload.
#[derive(Clone)]
pub struct TaskContext {
    id: TaskId,
    job: String,
    cancel: Arc<AtomicBool>,
    inner: Arc<Inner>,
}

impl TaskContext {
    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    /// The flag checked by long-running work (e.g. once per generation).
    pub fn cancel_flag(&self) -> &AtomicBool {
        &self.cancel
    }

    pub fn progress(&self, payload: ProgressPayload) {
        self.inner.emit(self.id, &self.job, EventKind::Progress { payload });
    }
}

pub type Payload = Box<dyn FnOnce(&TaskContext) -> std::result::Result<TaskEnd, String> + Send>;

struct Entry {
    info: TaskInfo,
    payload: Option<Payload>,
    cancel: Arc<AtomicBool>,
}

#[derive(Default)]
struct State {
    queue: VecDeque<TaskId>,
    tasks: HashMap<TaskId, Entry>,
    next_id: u64,
    closed: bool,
    paused: bool,
    last_stamp: Option<DateTime<Utc>>,
}

struct Inner {
    state: Mutex<State>,
    work: Condvar,
    finished: Condvar,
    subscribers: Mutex<Vec<Sender<ExecutionEvent>>>,
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn emit(&self, task: TaskId, job: &str, kind: EventKind) {
        let at = {
            let mut s = self.lock();
            stamp(&mut s)
        };
        self.emit_at(task, job, kind, at);
    }

    fn emit_at(&self, task: TaskId, job: &str, kind: EventKind, at: DateTime<Utc>) {
        let ev = ExecutionEvent {
            task,
            job: job.to_string(),
            kind,
            at,
        };
        let mut subs = self.subscribers.lock().unwrap_or_else(|p| p.into_inner());
        subs.retain(|tx| tx.send(ev.clone()).is_ok());
    }
}

/// Wall-clock timestamp that never goes backwards within a pool.
fn stamp(s: &mut State) -> DateTime<Utc> {
    let now = Utc::now();
    let t = match s.last_stamp {
        Some(prev) if prev > now => prev,
        _ => now,
    };
    s.last_stamp = Some(t);
    t
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolConfig {
    pub workers: usize,
    /// Simulated dispatch delay per worker before it starts a task; the
    /// last entry repeats for workers beyond the list.
    pub start_latency: Vec<Duration>,
}

impl PoolConfig {
    pub fn new(workers: usize) -> Self {
        Self {
            workers,
            start_latency: Vec::new(),
        }
    }

    fn latency(&self, worker: usize) -> Duration {
        self.start_latency
            .get(worker)
            .or(self.start_latency.last())
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelAck {
    /// Removed from the queue before starting.
    Dequeued,
    /// Running; the payload sees the flag at its next check.
    Signalled,
    /// Already terminal; nothing done.
    AlreadyFinished,
}

pub struct WorkerPool {
    inner: Arc<Inner>,
    handles: Mutex<Vec<JoinHandle<()>>>,
    workers: usize,
}

impl WorkerPool {
    pub fn new(cfg: PoolConfig) -> Result<Self> {
        if cfg.workers == 0 {
            return Err(ExecError::NoWorkers);
        }
        let inner = Arc::new(Inner {
            state: Mutex::new(State::default()),
            work: Condvar::new(),
            finished: Condvar::new(),
            subscribers: Mutex::new(Vec::new()),
        });
        let handles = (0..cfg.workers)
            .map(|w| {
                let inner = Arc::clone(&inner);
                let latency = cfg.latency(w);
                std::thread::Builder::new()
                    .name(format!("phylogrid-worker-{w}"))
                    .spawn(move || worker_loop(inner, w, latency))
                    .expect("spawn worker thread")
            })
            .collect();
        Ok(Self {
            inner,
            handles: Mutex::new(handles),
            workers: cfg.workers,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Receives every event emitted after this call.
    pub fn subscribe(&self) -> Receiver<ExecutionEvent> {
        let (tx, rx) = channel();
        self.inner
            .subscribers
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(tx);
        rx
    }

    pub fn submit_task(&self, job: &str, kind: TaskKind, payload: Payload) -> Result<TaskId> {
        let mut s = self.inner.lock();
        if s.closed {
            return Err(ExecError::PoolClosed);
        }
        let id = TaskId(s.next_id);
        s.next_id += 1;
        let now = stamp(&mut s);
        s.tasks.insert(
            id,
            Entry {
                info: TaskInfo {
                    id,
                    job: job.to_string(),
                    kind,
                    state: TaskState::Pending,
                    submitted_at: now,
                    started_at: None,
                    finished_at: None,
                    worker: None,
                },
                payload: Some(payload),
                cancel: Arc::new(AtomicBool::new(false)),
            },
        );
        s.queue.push_back(id);
        drop(s);
        self.inner.work.notify_one();
        Ok(id)
    }

    pub fn cancel_task(&self, id: TaskId) -> Result<CancelAck> {
        let mut s = self.inner.lock();
        let entry = s.tasks.get_mut(&id).ok_or(ExecError::UnknownTask(id))?;
        match entry.info.state {
            TaskState::Pending => {
                entry.payload = None;
                entry.info.state = TaskState::Cancelled;
                let job = entry.info.job.clone();
                s.queue.retain(|&q| q != id);
                let at = stamp(&mut s);
                s.tasks.get_mut(&id).expect("present").info.finished_at = Some(at);
                drop(s);
                self.inner.emit_at(id, &job, EventKind::Cancelled, at);
                self.inner.finished.notify_all();
                Ok(CancelAck::Dequeued)
            }
            TaskState::Running => {
                entry.cancel.store(true, Ordering::Relaxed);
                Ok(CancelAck::Signalled)
            }
            _ => Ok(CancelAck::AlreadyFinished),
        }
    }

    pub fn task(&self, id: TaskId) -> Option<TaskInfo> {
        self.inner.lock().tasks.get(&id).map(|e| e.info.clone())
    }

    pub fn tasks(&self) -> Vec<TaskInfo> {
        let s = self.inner.lock();
        let mut v: Vec<TaskInfo> = s.tasks.values().map(|e| e.info.clone()).collect();
        v.sort_by_key(|t| t.id);
        v
    }

    /// Blocks until every listed task is terminal.
    pub fn wait(&self, ids: &[TaskId]) {
        let mut s = self.inner.lock();
        while !ids
            .iter()
            .all(|id| s.tasks.get(id).is_none_or(|e| e.info.state.is_terminal()))
        {
            s = self.inner.finished.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Stops accepting tasks, lets queued work finish and joins workers.
    pub fn shutdown(&self) {
        self.inner.lock().closed = true;
        self.inner.work.notify_all();
        let handles = std::mem::take(&mut *self.handles.lock().unwrap_or_else(|p| p.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }

    /// Holds queued tasks back until [`WorkerPool::resume`]. Running tasks
    /// are unaffected.
    pub fn pause(&self) {
        self.inner.lock().paused = true;
    }

    pub fn resume(&self) {
        self.inner.lock().paused = false;
        self.inner.work.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(inner: Arc<Inner>, worker: usize, latency: Duration) {
    loop {
        let (id, job, payload, cancel) = {
            let mut s = inner.lock();
            loop {
                if s.paused && !s.closed {
                    s = inner.work.wait(s).unwrap_or_else(|p| p.into_inner());
                    continue;
                }
                if let Some(id) = s.queue.pop_front() {
                    let e = s.tasks.get_mut(&id).expect("queued task exists");
                    let payload = e.payload.take().expect("queued task has payload");
                    break (id, e.info.job.clone(), payload, Arc::clone(&e.cancel));
                }
                if s.closed {
                    return;
                }
                s = inner.work.wait(s).unwrap_or_else(|p| p.into_inner());
            }
        };
        if !latency.is_zero() {
            std::thread::sleep(latency);
        }
        {
            let mut s = inner.lock();
            let at = stamp(&mut s);
            let e = s.tasks.get_mut(&id).expect("task exists");
            e.info.state = TaskState::Running;
            e.info.started_at = Some(at);
            e.info.worker = Some(worker);
            drop(s);
            inner.emit_at(id, &job, EventKind::Started, at);
        }
        let ctx = TaskContext {
            id,
            job: job.clone(),
            cancel: Arc::clone(&cancel),
            inner: Arc::clone(&inner),
        };
        let result = catch_unwind(AssertUnwindSafe(|| payload(&ctx)));
        let (state, kind) = match result {
            Ok(Ok(TaskEnd::Done)) => (TaskState::Done, EventKind::Finished),
            Ok(Ok(TaskEnd::Cancelled)) => (TaskState::Cancelled, EventKind::Cancelled),
            Ok(Err(reason)) => (TaskState::Failed, EventKind::Failed { reason }),
            Err(panic) => {
                let reason = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "task panicked".into());
                (TaskState::Failed, EventKind::Failed { reason: format!("panic: {reason}") })
            }
        };
        let mut s = inner.lock();
        let at = stamp(&mut s);
        let e = s.tasks.get_mut(&id).expect("task exists");
        e.info.state = state;
        e.info.finished_at = Some(at);
        drop(s);
        inner.emit_at(id, &job, kind, at);
        inner.finished.notify_all();
    }
}

/// Payload running chain set `run` of `cfg`, reporting each sample as
/// progress and honouring cancellation once per generation.
pub fn mcmc_payload<T: Real>(
    cfg: Arc<McmcConfig>,
    data: Arc<Alignment>,
    m0: SubstitutionModel<T>,
    run: usize,
    sink: OutputSink,
) -> Payload {
    Box::new(move |ctx: &TaskContext| {
        let report = |p: &Progress| ctx.progress(ProgressPayload::Mcmc(*p));
        let r = run_single(&cfg, &data, &m0, run, &sink, &report, Some(ctx.cancel_flag()))
            .map_err(|e| e.to_string())?;
        Ok(match r.outcome {
            RunOutcome::Completed => TaskEnd::Done,
            RunOutcome::Cancelled => TaskEnd::Cancelled,
        })
    })
}

/// A task description for [`run_to_completion`].
pub struct TaskSpec {
    pub job: String,
    pub kind: TaskKind,
    pub payload: Payload,
}

/// Runs `tasks` on a fresh pool and returns every event plus the wall time
/// from first submission to last completion.
pub fn run_to_completion(cfg: PoolConfig, tasks: Vec<TaskSpec>) -> Result<(Vec<ExecutionEvent>, Duration)> {
    let pool = WorkerPool::new(cfg)?;
    let rx = pool.subscribe();
    let start = Instant::now();
    let ids: Vec<TaskId> = tasks
        .into_iter()
        .map(|t| pool.submit_task(&t.job, t.kind, t.payload))
        .collect::<Result<_>>()?;
    pool.wait(&ids);
    let wall = start.elapsed();
    pool.shutdown();
    drop(pool);
    Ok((rx.try_iter().collect(), wall))
}
