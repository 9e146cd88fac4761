//! Driving the coupled chains of one run and writing `.p`, `.t` and
//! `.mcmc` files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{mh_accept, propose, swap_attempt, ChainState, Proposal, SwapOutcome};
use super::config::McmcConfig;
use super::stream::chain_rng;
use super::{McmcError, Result};
use crate::phylomodel::{random_tree, PhyloTree, SitePatterns, SubstitutionModel};
use crate::scalar::{fmt_sig6, Real};
use crate::seqio::Alignment;

pub const P_HEADER: &str = "Gen\tLnL\tAlpha\tpiA\tpiC\tpiG\tpiT\trAC\trAG\trAT\trCG\trCT\trGT";
pub const MCMC_HEADER: &str = "Gen\tSwapsAttempted\tSwapsAccepted\tColdLnL";

/// One sample of the cold chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub gen: u64,
    pub lnl: f64,
    pub gamma_shape: f64,
    pub freqs: [f64; 4],
    /// Exchangeabilities in AC, AG, AT, CG, CT, GT order (GT = 1).
    pub rel_rates: [f64; 6],
    /// Canonical Newick with taxon labels.
    pub tree: String,
}

impl SampleRow {
    /// The `.p` line for this sample (no trailing newline).
    pub fn p_line(&self) -> String {
        let mut cols = vec![self.gen.to_string(), fmt_sig6(self.lnl), fmt_sig6(self.gamma_shape)];
        cols.extend(self.freqs.iter().map(|&x| fmt_sig6(x)));
        cols.extend(self.rel_rates.iter().map(|&x| fmt_sig6(x)));
        cols.join("\t")
    }
}

/// Progress report for the cold chain, emitted at every sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub run: usize,
    pub gen: u64,
    pub ngen: u64,
    pub cold_lnl: f64,
    pub swaps_attempted: u64,
    pub swaps_accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputSink {
    /// Files `<stem>.p`, `<stem>.t`, `<stem>.mcmc` in this directory,
    /// flushed after every sample.
    Directory(PathBuf),
    /// Kept in memory and returned in [`RunResult::files`].
    Memory,
}

/// Contents of the three output files of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFiles {
    pub p: String,
    pub t: String,
    pub mcmc: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunOutcome {
    Completed,
    Cancelled,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub stem: String,
    pub outcome: RunOutcome,
    /// Last generation completed.
    pub generations: u64,
    pub rows: usize,
    pub swaps_attempted: u64,
    pub swaps_accepted: u64,
    pub final_cold_lnl: f64,
    pub wall_time: Duration,
    /// Present for [`OutputSink::Memory`].
    pub files: Option<RunFiles>,
    /// Sampled rows; kept only for [`OutputSink::Memory`].
    pub samples: Vec<SampleRow>,
}

/// An accepted exchange between two chain slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapRecord {
    pub gen: u64,
    pub i: usize,
    pub j: usize,
}

/// The coupled chains of one run, advanced one generation at a time.
pub struct Sampler<T> {
    run: usize,
    pats: SitePatterns,
    kernel: Proposal,
    chains: Vec<ChainState<T>>,
    rngs: Vec<ChaCha8Rng>,
    swap_rng: ChaCha8Rng,
    gen: u64,
    swaps_attempted: u64,
    swaps_accepted: u64,
    swap_log: Option<Vec<SwapRecord>>,
}

impl<T: Real> Sampler<T> {
    /// Sets up run `run` (1-based): each chain starts from its own random
    /// tree and `m0`.
    pub fn new(
        cfg: &McmcConfig,
        data: &Alignment,
        m0: &SubstitutionModel<T>,
        run: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        m0.validate()?;
        if !data.is_aligned() {
            return Err(McmcError::Model(crate::phylomodel::PhyloError::NotAligned));
        }
        let taxa: Vec<String> = data.taxa().iter().map(|s| s.to_string()).collect();
        let kernel = Proposal::new(cfg, m0, taxa.len());
        let heats = cfg.heats();
        let mut rngs = Vec::with_capacity(cfg.nchains);
        let mut chains = Vec::with_capacity(cfg.nchains);
        let mut pats = None;
        for (k, &beta) in heats.iter().enumerate() {
            let mut rng = chain_rng(cfg.seed, run as u64, k as u64);
            let mut tree: PhyloTree<T> = random_tree(&taxa, cfg.priors.branch_mean, &mut rng)?;
            if let Some(b) = cfg.fixed_branch_length {
                tree.set_all_branch_lengths(T::of(b));
            }
            let p = match &pats {
                Some(p) => p,
                None => pats.insert(SitePatterns::new(tree.taxa(), data)?),
            };
            chains.push(ChainState::new(tree, m0.clone(), p, &kernel, beta, k)?);
            rngs.push(rng);
        }
        Ok(Self {
            run,
            pats: pats.expect("at least one chain"),
            kernel,
            chains,
            rngs,
            swap_rng: chain_rng(cfg.seed, run as u64, cfg.nchains as u64),
            gen: 0,
            swaps_attempted: 0,
            swaps_accepted: 0,
            swap_log: None,
        })
    }

    /// Keeps a log of accepted swaps (see [`Sampler::swap_log`]).
    pub fn record_swaps(&mut self) {
        self.swap_log.get_or_insert_with(Vec::new);
    }

    pub fn run(&self) -> usize {
        self.run
    }

    pub fn gen(&self) -> u64 {
        self.gen
    }

    pub fn chains(&self) -> &[ChainState<T>] {
        &self.chains
    }

    pub fn cold(&self) -> &ChainState<T> {
        &self.chains[0]
    }

    pub fn kernel(&self) -> &Proposal {
        &self.kernel
    }

    pub fn patterns(&self) -> &SitePatterns {
        &self.pats
    }

    pub fn swaps(&self) -> (u64, u64) {
        (self.swaps_attempted, self.swaps_accepted)
    }

    pub fn swap_log(&self) -> Option<&[SwapRecord]> {
        self.swap_log.as_deref()
    }

    /// One generation: a proposal in every chain, then one swap attempt.
    pub fn step(&mut self) -> Result<Option<SwapOutcome>> {
        self.gen += 1;
        for (chain, rng) in self.chains.iter_mut().zip(self.rngs.iter_mut()) {
            if let Some((cand, h, _)) = propose(chain, &self.kernel, &self.pats, rng)? {
                if mh_accept(chain, &cand, h, chain.heat, rng) {
                    *chain = cand;
                }
            }
        }
        let outcome = swap_attempt(&mut self.chains, &mut self.swap_rng);
        if let Some(o) = outcome {
            self.swaps_attempted += 1;
            if o.accepted {
                self.swaps_accepted += 1;
                if let Some(log) = &mut self.swap_log {
                    log.push(SwapRecord {
                        gen: self.gen,
                        i: o.i,
                        j: o.j,
                    });
                }
            }
        }
        Ok(outcome)
    }

    /// The cold chain as a sample row.
    pub fn sample(&self) -> SampleRow {
        let c = self.cold();
        let m = &c.model;
        SampleRow {
            gen: self.gen,
            lnl: c.lnl,
            gamma_shape: m.gamma_shape().as_f64(),
            freqs: m.freqs().map(|x| x.as_f64()),
            rel_rates: m.exchangeabilities().map(|x| x.as_f64()),
            tree: c.tree.to_newick(),
        }
    }

    /// `.t` tree line for the cold chain (translate indices are 1-based).
    pub fn tree_line(&self) -> String {
        let newick = self.cold().tree.to_newick_with(|i, _| (i + 1).to_string());
        format!("  tree gen.{} = {};", self.gen, newick)
    }

    fn translate_block(&self) -> String {
        let taxa = self.cold().tree.taxa();
        let mut s = String::from("#NEXUS\nbegin trees;\n  translate\n");
        for (i, t) in taxa.iter().enumerate() {
            let end = if i + 1 == taxa.len() { ';' } else { ',' };
            s.push_str(&format!("    {} {}{}\n", i + 1, t, end));
        }
        s
    }
}

enum Target {
    Files([BufWriter<File>; 3], [PathBuf; 3]),
    Memory(RunFiles),
}

impl Target {
    fn open(sink: &OutputSink, stem: &str) -> Result<Self> {
        match sink {
            OutputSink::Memory => Ok(Target::Memory(RunFiles::default())),
            OutputSink::Directory(dir) => {
                let paths = ["p", "t", "mcmc"].map(|ext| dir.join(format!("{stem}.{ext}")));
                let open = |p: &Path| {
                    File::create(p).map(BufWriter::new).map_err(|e| McmcError::Io {
                        path: p.display().to_string(),
                        source: e,
                    })
                };
                Ok(Target::Files(
                    [open(&paths[0])?, open(&paths[1])?, open(&paths[2])?],
                    paths,
                ))
            }
        }
    }

    /// Appends text to file `which` (0 = .p, 1 = .t, 2 = .mcmc).
    fn write(&mut self, which: usize, text: &str) -> Result<()> {
        match self {
            Target::Memory(f) => {
                [&mut f.p, &mut f.t, &mut f.mcmc][which].push_str(text);
                Ok(())
            }
            Target::Files(w, paths) => w[which].write_all(text.as_bytes()).map_err(|e| McmcError::Io {
                path: paths[which].display().to_string(),
                source: e,
            }),
        }
    }

    fn flush(&mut self) -> Result<()> {
        if let Target::Files(w, paths) = self {
            for (w, p) in w.iter_mut().zip(paths.iter()) {
                w.flush().map_err(|e| McmcError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
            }
        }
        Ok(())
    }
}

/// Runs chain set `run` (1-based) of `cfg` to completion or cancellation.
/// Output bytes depend only on `(cfg, data, m0, run)`.
pub fn run_single<T: Real>(
    cfg: &McmcConfig,
    data: &Alignment,
    m0: &SubstitutionModel<T>,
    run: usize,
    sink: &OutputSink,
    progress: &(dyn Fn(&Progress) + Send + Sync),
    cancel: Option<&AtomicBool>,
) -> Result<RunResult> {
    let start = Instant::now();
    if run == 0 || run > cfg.nruns {
        return Err(McmcError::Config(format!("run {run} outside 1..={}", cfg.nruns)));
    }
    let mut sampler = Sampler::new(cfg, data, m0, run)?;
    let stem = cfg.run_stem(run);
    let mut out = Target::open(sink, &stem)?;
    let keep = matches!(sink, OutputSink::Memory);
    let mut samples = Vec::new();
    let mut rows = 0usize;

    out.write(0, &format!("[ID: {} run {} seed {}]\n{}\n", cfg.filebase, run, cfg.seed, P_HEADER))?;
    out.write(1, &sampler.translate_block())?;
    out.write(2, &format!("{MCMC_HEADER}\n"))?;

    let mut outcome = RunOutcome::Completed;
    loop {
        if sampler.gen() % cfg.samplefreq == 0 {
            let row = sampler.sample();
            debug_assert!({
                let c = sampler.cold();
                let again = crate::phylomodel::log_likelihood_patterns(&c.tree, sampler.patterns(), &c.model)
                    .map(|x| x.as_f64())
                    .unwrap_or(f64::NAN);
                (again - c.lnl).abs() <= 1e-9 * c.lnl.abs().max(1.0)
            });
            let (att, acc) = sampler.swaps();
            out.write(0, &format!("{}\n", row.p_line()))?;
            out.write(1, &format!("{}\n", sampler.tree_line()))?;
            out.write(2, &format!("{}\t{}\t{}\t{}\n", row.gen, att, acc, fmt_sig6(row.lnl)))?;
            out.flush()?;
            rows += 1;
            progress(&Progress {
                run,
                gen: row.gen,
                ngen: cfg.ngen,
                cold_lnl: row.lnl,
                swaps_attempted: att,
                swaps_accepted: acc,
            });
            if keep {
                samples.push(row);
            }
        }
        if sampler.gen() >= cfg.ngen {
            break;
        }
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            outcome = RunOutcome::Cancelled;
            break;
        }
        sampler.step()?;
    }
    out.write(1, "end;\n")?;
    out.flush()?;
    let (swaps_attempted, swaps_accepted) = sampler.swaps();
    Ok(RunResult {
        run,
        stem,
        outcome,
        generations: sampler.gen(),
        rows,
        swaps_attempted,
        swaps_accepted,
        final_cold_lnl: sampler.cold().lnl,
        wall_time: start.elapsed(),
        files: match out {
            Target::Memory(f) => Some(f),
            Target::Files(..) => None,
        },
        samples,
    })
}

/// Runs every chain set of `cfg` in turn. Stops early on cancellation.
pub fn run_mcmc<T: Real>(
    cfg: &McmcConfig,
    data: &Alignment,
    m0: &SubstitutionModel<T>,
    sink: &OutputSink,
    progress: &(dyn Fn(&Progress) + Send + Sync),
    cancel: Option<&AtomicBool>,
) -> Result<Vec<RunResult>> {
    let mut out = Vec::with_capacity(cfg.nruns);
    for run in 1..=cfg.nruns {
        let r = run_single(cfg, data, m0, run, sink, progress, cancel)?;
        let stop = r.outcome == RunOutcome::Cancelled;
        out.push(r);
        if stop {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylomodel::{Nst, RateVariation, RATE_LABELS};
    use std::sync::Mutex;

    fn data() -> Alignment {
        Alignment::from_pairs([
            ("human", "ACGTACGTAAGTCC"),
            ("chimp", "ACGTACGTAAGTCA"),
            ("gorilla", "ACGAACGTTAGTCA"),
            ("orang", "ACCAACTTTAGGCA"),
            ("gibbon", "TCCAACTTTAGGGA"),
        ])
        .unwrap()
    }

    fn small_cfg() -> McmcConfig {
        McmcConfig {
            ngen: 200,
            samplefreq: 20,
            nruns: 2,
            seed: 42,
            filebase: "test.nex".into(),
            ..Default::default()
        }
    }

    #[test]
    fn row_counts_and_headers() {
        let m = SubstitutionModel::<f64>::new(Nst::Six, RateVariation::Gamma);
        let res = run_mcmc(&small_cfg(), &data(), &m, &OutputSink::Memory, &|_| {}, None).unwrap();
        assert_eq!(res.len(), 2);
        for r in &res {
            let f = r.files.as_ref().unwrap();
            let p: Vec<&str> = f.p.lines().collect();
            assert_eq!(p[0], format!("[ID: test.nex run {} seed 42]", r.run));
            assert_eq!(p[1], P_HEADER);
            assert_eq!(p.len(), 2 + 11);
            assert_eq!(f.t.lines().filter(|l| l.starts_with("  tree gen.")).count(), 11);
            assert!(f.t.ends_with("end;\n"));
            assert_eq!(f.mcmc.lines().count(), 1 + 11);
            assert_eq!(r.rows, 11);
            assert_eq!(p[2].split('\t').count(), 13);
            assert!(p[2].starts_with("0\t"));
            assert!(p.last().unwrap().starts_with("200\t"));
            assert_eq!(r.stem, format!("test.nex{}", r.run));
        }
    }

    #[test]
    fn progress_reported_every_sample() {
        let m = SubstitutionModel::<f64>::jukes_cantor();
        let seen = Mutex::new(Vec::new());
        let cfg = McmcConfig {
            nruns: 1,
            ..small_cfg()
        };
        run_mcmc(&cfg, &data(), &m, &OutputSink::Memory, &|p| seen.lock().unwrap().push(p.gen), None)
            .unwrap();
        assert_eq!(*seen.lock().unwrap(), (0..=200).step_by(20).collect::<Vec<u64>>());
    }

    #[test]
    fn cancelled_run_closes_tree_block() {
        let m = SubstitutionModel::<f64>::jukes_cantor();
        let flag = AtomicBool::new(true);
        let r = run_single(&small_cfg(), &data(), &m, 1, &OutputSink::Memory, &|_| {}, Some(&flag)).unwrap();
        assert_eq!(r.outcome, RunOutcome::Cancelled);
        assert_eq!(r.rows, 1);
        assert!(r.files.unwrap().t.ends_with("end;\n"));
    }

    #[test]
    fn directory_sink_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let m = SubstitutionModel::<f64>::new(Nst::Two, RateVariation::Equal);
        let cfg = small_cfg();
        let mem = run_single(&cfg, &data(), &m, 2, &OutputSink::Memory, &|_| {}, None).unwrap();
        run_single(&cfg, &data(), &m, 2, &OutputSink::Directory(dir.path().into()), &|_| {}, None).unwrap();
        let f = mem.files.unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("test.nex2.p")).unwrap(), f.p);
        assert_eq!(std::fs::read_to_string(dir.path().join("test.nex2.t")).unwrap(), f.t);
        assert_eq!(std::fs::read_to_string(dir.path().join("test.nex2.mcmc")).unwrap(), f.mcmc);
    }

    #[test]
    fn header_matches_rate_labels() {
        let tail: Vec<String> = P_HEADER.split('\t').skip(7).map(String::from).collect();
        assert_eq!(tail, RATE_LABELS.map(|l| format!("r{l}")).to_vec());
    }
}
