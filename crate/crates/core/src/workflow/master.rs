use super::state::{Job, JobState};
use super::{Result, WorkflowError};

/// Inputs of a master block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterBlock {
    pub datafile: String,
    /// `lset` parameters without the keyword, e.g. `nst=6 rates=gamma`.
    pub lset: String,
    pub ngen: u64,
    pub samplefreq: u64,
    pub runs: usize,
    pub filebase: String,
}

impl MasterBlock {
    /// The command block, one `mcmc` line per run; ends with a newline.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("begin mrbayes;\n");
        s.push_str("  set autoclose=yes nowarn=yes;\n");
        s.push_str(&format!("  execute {};\n", self.datafile));
        s.push_str(&format!("  lset {};\n", self.lset));
        s.push_str(&format!(
            "  mcmc nruns=1 ngen={} samplefreq={} file={}1;\n",
            self.ngen, self.samplefreq, self.filebase
        ));
        for r in 2..=self.runs {
            s.push_str(&format!("  mcmc file={}{};\n", self.filebase, r));
        }
        s.push_str("end;\n");
        s
    }
}

/// Master block for a configured (or later) job.
pub fn render_master_block(job: &Job) -> Result<String> {
    use JobState::*;
    if matches!(job.state, Draft | SequencesLoaded | Aligning | AlignmentReady) {
        return Err(WorkflowError::NotConfigured);
    }
    let (Some(model), Some(cfg)) = (&job.model, &job.mcmc) else {
        return Err(WorkflowError::NotConfigured);
    };
    Ok(MasterBlock {
        datafile: job.datafile.clone().unwrap_or_else(|| cfg.filebase.clone()),
        lset: model.lset_params(),
        ngen: cfg.ngen,
        samplefreq: cfg.samplefreq,
        runs: cfg.nruns,
        filebase: cfg.filebase.clone(),
    }
    .render())
}
