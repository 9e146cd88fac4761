//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 runtime error.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use phylogrid_core::aligner::{conservation_profile, realign_with_workers, ScoringParams};
use phylogrid_core::executor::{mcmc_payload, run_to_completion, EventKind, PoolConfig, TaskKind, TaskSpec};
use phylogrid_core::mcmc::{consensus_of_runs, parse_tree_file, McmcConfig, OutputSink, DEFAULT_BURNIN};
use phylogrid_core::phylomodel::{count_topologies, scientific, PhyloTree};
use phylogrid_core::seqio::{parse_any, write_fasta, write_nexus, Alignment};
use phylogrid_core::workflow::{ConfigureRequest, SystemClock};

use crate::client::{Client, ClientError};
use crate::server::{bind, ServeConfig, ServeError, DEFAULT_UPLOAD_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Runtime = 3,
}

#[derive(Debug, Parser)]
#[command(name = "phylogrid", version, about = "Sequence alignment and Bayesian phylogenetics pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Nexus,
    Fasta,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert FASTA, PHYLIP, Clustal or NEXUS input.
    Convert {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "nexus")]
        to: Target,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Progressive alignment; writes NEXUS.
    Align {
        input: PathBuf,
        #[arg(long = "match", allow_negative_numbers = true)]
        match_score: Option<i32>,
        #[arg(long, allow_negative_numbers = true)]
        mismatch: Option<i32>,
        #[arg(long, allow_negative_numbers = true)]
        gap_open: Option<i32>,
        #[arg(long, allow_negative_numbers = true)]
        gap_extend: Option<i32>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the chains of an analysis into `<out>/<filebase><r>.{p,t,mcmc}`.
    Run {
        data: PathBuf,
        #[arg(long)]
        lset: String,
        #[arg(long)]
        ngen: Option<u64>,
        #[arg(long)]
        samplefreq: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        nchains: Option<usize>,
        /// Defaults to the file name of the data.
        #[arg(long)]
        filebase: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Majority-rule consensus of tree files, one per run.
    Consensus {
        #[arg(required = true)]
        trees: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BURNIN)]
        burnin: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Number of unrooted binary topologies on N taxa.
    CountTrees { n: usize },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long)]
        workers: Option<usize>,
        /// User allowed to manage the administrator proxy; repeatable.
        #[arg(long = "admin", default_value = "admin")]
        admins: Vec<String>,
        #[arg(long, default_value_t = 12 * 3600)]
        session_ttl: i64,
        #[arg(long, default_value_t = 12 * 3600)]
        proxy_lifetime: i64,
        #[arg(long, default_value_t = DEFAULT_UPLOAD_LIMIT)]
        upload_limit: usize,
        /// Let running tasks finish on shutdown instead of cancelling them.
        #[arg(long)]
        drain: bool,
    },
    /// Inspect or cancel jobs on a running server.
    Jobs {
        #[command(subcommand)]
        action: JobsAction,
        #[arg(long, global = true, default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long, global = true, env = "PHYLOGRID_USER", default_value = "cli")]
        user: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum JobsAction {
    List,
    Show { id: String },
    Cancel { id: String },
}

/// A failure with its exit code; the message goes to stderr.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub msg: String,
}

fn fail(exit: Exit, msg: impl Display) -> Failure {
    Failure {
        exit,
        msg: msg.to_string(),
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(Exit::Data, format!("{}: {e}", path.display())))
}

fn parse_file(path: &Path) -> Result<Alignment, Failure> {
    let text = read_input(path)?;
    parse_any(&text)
        .map(|(_, a)| a)
        .map_err(|e| fail(Exit::Data, format!("{}: {e}", path.display())))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| fail(Exit::Runtime, format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| fail(Exit::Runtime, e)),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage as i32 } else { Exit::Ok as i32 };
        }
    };
    match execute(cli.cmd) {
        Ok(()) => Exit::Ok as i32,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.exit as i32
        }
    }
}

pub fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Convert { input, to, output } => {
            let a = parse_file(&input)?;
            let text = match to {
                Target::Nexus => write_nexus(&a).map_err(|e| fail(Exit::Data, format!("{}: {e}", input.display())))?,
                Target::Fasta => write_fasta(&a),
            };
            emit(output.as_deref(), &text)
        }
        Command::Align {
            input,
            match_score,
            mismatch,
            gap_open,
            gap_extend,
            workers,
            output,
        } => {
            let d = ScoringParams::default();
            let s = ScoringParams::new(
                match_score.unwrap_or(d.match_score),
                mismatch.unwrap_or(d.mismatch),
                gap_open.unwrap_or(d.gap_open),
                gap_extend.unwrap_or(d.gap_extend),
            )
            .map_err(|e| fail(Exit::Usage, e))?;
            let a = parse_file(&input)?;
            let aligned = realign_with_workers(&a, &s, workers.max(1)).map_err(|e| fail(Exit::Data, e))?;
            let text = write_nexus(&aligned).map_err(|e| fail(Exit::Runtime, e))?;
            if let Ok(p) = conservation_profile(&aligned) {
                eprintln!(
                    "{} sequences, {} columns, mean conservation {:.3}",
                    aligned.ntax(),
                    aligned.nchar().unwrap_or(0),
                    p.mean
                );
            }
            emit(output.as_deref(), &text)
        }
        Command::Run {
            data,
            lset,
            ngen,
            samplefreq,
            runs,
            seed,
            nchains,
            filebase,
            workers,
            out,
        } => run(
            &data,
            RunArgs {
                lset,
                ngen,
                samplefreq,
                runs,
                seed,
                nchains,
                filebase,
            },
            workers,
            &out,
        ),
        Command::Consensus { trees, burnin, output } => {
            let mut runs: Vec<Vec<PhyloTree<f64>>> = Vec::with_capacity(trees.len());
            for p in &trees {
                let text = read_input(p)?;
                let samples =
                    parse_tree_file::<f64>(&text).map_err(|e| fail(Exit::Data, format!("{}: {e}", p.display())))?;
                runs.push(samples.into_iter().map(|s| s.tree).collect());
            }
            let (tree, convergence) = consensus_of_runs(&runs, burnin).map_err(|e| fail(Exit::Data, e))?;
            match convergence {
                Some(c) => eprintln!("{} trees after burn-in {burnin}; split frequency sd {c:.6}", tree.ntrees),
                None => eprintln!("{} trees after burn-in {burnin}", tree.ntrees),
            }
            emit(output.as_deref(), &format!("{}\n", tree.to_newick()))
        }
        Command::CountTrees { n } => {
            let c = count_topologies(n).map_err(|e| fail(Exit::Usage, e))?;
            emit(None, &format!("{c}\n≈{}\n", scientific(&c, 3)))
        }
        Command::Serve {
            port,
            data,
            bind: addr,
            workers,
            admins,
            session_ttl,
            proxy_lifetime,
            upload_limit,
            drain,
        } => {
            let mut cfg = ServeConfig::new(port, data);
            cfg.bind = addr;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.admins = admins;
            cfg.session_ttl_s = session_ttl;
            cfg.proxy_lifetime_s = proxy_lifetime;
            cfg.upload_limit = upload_limit;
            cfg.drain = drain;
            serve(cfg)
        }
        Command::Jobs { action, server, user } => jobs(action, &server, &user),
    }
}

/// Chain settings of `run`, resolved exactly as a configured job would be.
pub struct RunArgs {
    pub lset: String,
    pub ngen: Option<u64>,
    pub samplefreq: Option<u64>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub nchains: Option<usize>,
    pub filebase: Option<String>,
}

fn run(data: &Path, args: RunArgs, workers: usize, out: &Path) -> Result<(), Failure> {
    let d = McmcConfig::default();
    let filebase = match args.filebase {
        Some(f) => f,
        None => data
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| fail(Exit::Usage, "cannot derive --filebase from the data path"))?,
    };
    let req = ConfigureRequest {
        lset: args.lset,
        ngen: args.ngen.unwrap_or(d.ngen),
        samplefreq: args.samplefreq.unwrap_or(d.samplefreq),
        runs: args.runs.unwrap_or(d.nruns),
        filebase,
        seed: args.seed,
        nchains: args.nchains,
        datafile: None,
    };
    let resolved = req.resolve().map_err(|e| fail(Exit::Usage, e))?;
    let a = parse_file(data)?;
    if !a.is_aligned() {
        return Err(fail(
            Exit::Data,
            format!("{}: sequences are not aligned; run `phylogrid align` first", data.display()),
        ));
    }
    if a.ntax() < 3 {
        return Err(fail(Exit::Data, format!("{}: an analysis needs at least 3 taxa", data.display())));
    }
    fs::create_dir_all(out).map_err(|e| fail(Exit::Runtime, format!("{}: {e}", out.display())))?;
    let cfg = Arc::new(resolved.mcmc);
    let data = Arc::new(a);
    let tasks = (1..=cfg.nruns)
        .map(|r| TaskSpec {
            job: "cli".into(),
            kind: TaskKind::McmcRun(r),
            payload: mcmc_payload(
                Arc::clone(&cfg),
                Arc::clone(&data),
                resolved.model.clone(),
                r,
                OutputSink::Directory(out.to_path_buf()),
            ),
        })
        .collect();
    let (events, wall) = run_to_completion(PoolConfig::new(workers.max(1)), tasks).map_err(|e| fail(Exit::Runtime, e))?;
    for ev in &events {
        if let EventKind::Failed { reason } = &ev.kind {
            return Err(fail(Exit::Runtime, reason));
        }
    }
    for r in 1..=cfg.nruns {
        let stem = cfg.run_stem(r);
        for ext in ["p", "t", "mcmc"] {
            println!("{}", out.join(format!("{stem}.{ext}")).display());
        }
    }
    eprintln!("{} run(s) of {} generations in {:.2?}", cfg.nruns, cfg.ngen, wall);
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| fail(Exit::Runtime, e))
}

fn serve(cfg: ServeConfig) -> Result<(), Failure> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    runtime()?.block_on(async {
        let server = bind(&cfg, Arc::new(SystemClock)).await.map_err(|e| match e {
            ServeError::DataDir { .. } => fail(Exit::Data, e),
            _ => fail(Exit::Runtime, e),
        })?;
        tracing::info!("listening on http://{}", server.local_addr());
        server
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
            .map_err(|e| fail(Exit::Runtime, e))
    })
}

fn jobs(action: JobsAction, server: &str, user: &str) -> Result<(), Failure> {
    let code = |e: ClientError| {
        if e.is_client_side() {
            fail(Exit::Data, e)
        } else {
            fail(Exit::Runtime, e)
        }
    };
    runtime()?.block_on(async {
        let c = Client::login(server, user).await.map_err(code)?;
        match action {
            JobsAction::List => {
                for j in c.list().await.map_err(code)? {
                    println!(
                        "{}\t{}\t{}\t{}\t{}",
                        j.id,
                        j.status.coarse,
                        j.status.detail,
                        j.created_at.to_rfc3339(),
                        j.name
                    );
                }
            }
            JobsAction::Show { id } => {
                let s = c.status(&id).await.map_err(code)?;
                println!("{}", serde_json::to_string_pretty(&s).map_err(|e| fail(Exit::Runtime, e))?);
            }
            JobsAction::Cancel { id } => {
                let j = c.cancel(&id).await.map_err(code)?;
                println!("{}\t{}", j.id, j.status.detail);
            }
        }
        Ok(())
    })
}
