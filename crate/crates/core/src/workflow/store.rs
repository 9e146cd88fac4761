//! On-disk layout: `jobs/<id>/record.log` (one JSON object per line, each
//! carrying a history entry and the job metadata at that point), the
//! uploaded data (`data.nex`, or `data.fasta` when unaligned),
//! `alignment.nex`, `out/` and `consensus.tre`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::{HistoryEntry, Job};
use super::{Result, WorkflowError};
use crate::aligner::conservation_profile;
use crate::seqio::{parse_any, write_fasta, write_nexus, Alignment};

pub const RECORD_LOG: &str = "record.log";
const ALIGNMENT_FILE: &str = "alignment.nex";

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(flatten)]
    entry: HistoryEntry,
    job: Job,
}

fn storage<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> WorkflowError + '_ {
    move |e| WorkflowError::Storage {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct JobStore {
    root: PathBuf,
    durable: bool,
}

impl JobStore {
    /// Uses (and creates) `<root>/jobs`. A durable store syncs every
    /// record to disk before returning.
    pub fn open(root: impl Into<PathBuf>, durable: bool) -> Result<Self> {
        let root = root.into().join("jobs");
        fs::create_dir_all(&root).map_err(storage(&root))?;
        Ok(Self { root, durable })
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn out_dir(&self, id: &str) -> PathBuf {
        self.job_dir(id).join("out")
    }

    /// Appends the job's latest history entry with its current metadata.
    pub fn append(&self, job: &Job) -> Result<()> {
        let dir = self.job_dir(&job.id);
        fs::create_dir_all(&dir).map_err(storage(&dir))?;
        let entry = job.history.last().cloned().expect("jobs always have history");
        let line = serde_json::to_string(&Record {
            entry,
            job: job.clone(),
        })
        .map_err(storage(&dir))?;
        let path = dir.join(RECORD_LOG);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(storage(&path))?;
        f.write_all(format!("{line}\n").as_bytes())
            .and_then(|_| if self.durable { f.sync_data() } else { Ok(()) })
            .map_err(storage(&path))
    }

    /// Writes the uploaded sequences; returns the file name used.
    pub fn write_sequences(&self, id: &str, a: &Alignment) -> Result<&'static str> {
        let dir = self.job_dir(id);
        fs::create_dir_all(&dir).map_err(storage(&dir))?;
        let (name, other, text) = if a.is_aligned() {
            ("data.nex", "data.fasta", write_nexus(a)?)
        } else {
            ("data.fasta", "data.nex", write_fasta(a))
        };
        let _ = fs::remove_file(dir.join(other));
        let _ = fs::remove_file(dir.join(ALIGNMENT_FILE));
        write_atomic(&dir.join(name), text.as_bytes())?;
        Ok(name)
    }

    pub fn write_alignment(&self, id: &str, a: &Alignment) -> Result<()> {
        let dir = self.job_dir(id);
        fs::create_dir_all(&dir).map_err(storage(&dir))?;
        write_atomic(&dir.join(ALIGNMENT_FILE), write_nexus(a)?.as_bytes())
    }

    pub fn write_file(&self, id: &str, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.job_dir(id).join(name), bytes)
    }

    /// Every job found on disk, rebuilt from its record log and data files.
    /// Unreadable trailing log lines (an interrupted write) are ignored.
    pub fn load_all(&self) -> Result<Vec<Job>> {
        let mut jobs = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(storage(&self.root))?;
        for entry in entries {
            let entry = entry.map_err(storage(&self.root))?;
            let log = entry.path().join(RECORD_LOG);
            if !log.is_file() {
                continue;
            }
            if let Some(job) = self.load(&entry.path(), &log)? {
                jobs.push(job);
            }
        }
        jobs.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(jobs)
    }

    fn load(&self, dir: &Path, log: &Path) -> Result<Option<Job>> {
        let text = fs::read_to_string(log).map_err(storage(log))?;
        let mut history = Vec::new();
        let mut last: Option<Job> = None;
        for line in text.lines() {
            match serde_json::from_str::<Record>(line) {
                Ok(r) => {
                    history.push(r.entry);
                    last = Some(r.job);
                }
                Err(_) => break,
            }
        }
        let Some(mut job) = last else {
            return Ok(None);
        };
        job.history = history;
        let read = |name: &str| -> Result<Option<Alignment>> {
            let p = dir.join(name);
            if !p.is_file() {
                return Ok(None);
            }
            let text = fs::read_to_string(&p).map_err(storage(&p))?;
            Ok(Some(parse_any(&text)?.1))
        };
        job.sequences = match read("data.nex")? {
            Some(a) => Some(a),
            None => read("data.fasta")?,
        };
        job.alignment = read(ALIGNMENT_FILE)?;
        job.profile = job
            .effective_alignment()
            .and_then(|a| conservation_profile(a).ok());
        Ok(Some(job))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(storage(path))
}
