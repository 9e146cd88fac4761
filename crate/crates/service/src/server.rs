use std::collections::HashSet;
use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use phylogrid_core::workflow::{Clock, Workflow, WorkflowOptions};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::api::{router, AppState, Shared};
use crate::session::{OpenAuthenticator, Sessions};

pub const DEFAULT_UPLOAD_LIMIT: usize = 10 * 1024 * 1024;
const PUMP_EVERY: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub data: PathBuf,
    pub workers: usize,
    pub session_ttl_s: i64,
    /// Lifetime of a proxy created without an explicit one.
    pub proxy_lifetime_s: i64,
    pub admins: Vec<String>,
    pub upload_limit: usize,
    /// On shutdown, let queued and running tasks finish instead of
    /// cancelling them.
    pub drain: bool,
    pub durable: bool,
}

impl ServeConfig {
    pub fn new(port: u16, data: impl Into<PathBuf>) -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port,
            data: data.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            session_ttl_s: 12 * 3600,
            proxy_lifetime_s: 12 * 3600,
            admins: vec!["admin".into()],
            upload_limit: DEFAULT_UPLOAD_LIMIT,
            drain: false,
            durable: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {addr} is already in use")]
    PortBusy { addr: SocketAddr },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("bad data directory {path}: {msg}")]
    DataDir { path: String, msg: String },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// A bound but not yet serving instance.
pub struct Server {
    listener: TcpListener,
    state: AppState,
    drain: bool,
}

/// Checks the data directory, takes the port, then opens the job store.
/// The store is only touched once the port is ours, so a second instance
/// started by mistake cannot disturb the jobs of the first.
pub async fn bind(cfg: &ServeConfig, clock: Arc<dyn Clock>) -> Result<Server, ServeError> {
    let data_err = |msg: String| ServeError::DataDir {
        path: cfg.data.display().to_string(),
        msg,
    };
    if cfg.data.exists() && !cfg.data.is_dir() {
        return Err(data_err("not a directory".into()));
    }
    std::fs::create_dir_all(&cfg.data).map_err(|e| data_err(e.to_string()))?;
    let addr = SocketAddr::new(cfg.bind, cfg.port);
    let listener = TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortBusy { addr }
        } else {
            ServeError::Bind { addr, source: e }
        }
    })?;
    let opts = WorkflowOptions {
        workers: cfg.workers,
        durable: cfg.durable,
        ..WorkflowOptions::new(&cfg.data)
    };
    let wf = Workflow::open(opts, Arc::clone(&clock)).map_err(|e| data_err(e.to_string()))?;
    let state = AppState(Arc::new(Shared {
        wf: Arc::new(wf),
        sessions: Sessions::new(clock, cfg.session_ttl_s, Box::new(OpenAuthenticator)),
        admins: cfg.admins.iter().cloned().collect::<HashSet<_>>(),
        proxy_lifetime_s: cfg.proxy_lifetime_s,
        upload_limit: cfg.upload_limit,
    }));
    Ok(Server {
        listener,
        state,
        drain: cfg.drain,
    })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn workflow(&self) -> Arc<Workflow> {
        Arc::clone(&self.state.0.wf)
    }

    /// Serves until `shutdown` resolves, then stops the workflow: running
    /// tasks are drained or cancelled according to the configuration.
    /// Executor events are applied in the background so jobs progress
    /// without requests.
    pub async fn run_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        let wf = Arc::clone(&self.state.0.wf);
        let stop = Arc::new(AtomicBool::new(false));
        let pump = {
            let wf = Arc::clone(&wf);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    wf.pump();
                    std::thread::sleep(PUMP_EVERY);
                }
            })
        };
        let app = router(self.state);
        let served = axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await;
        stop.store(true, Ordering::Relaxed);
        let drain = self.drain;
        tokio::task::spawn_blocking(move || {
            let _ = pump.join();
            wf.shutdown(drain);
        })
        .await
        .map_err(std::io::Error::other)?;
        served.map_err(ServeError::Io)
    }

    /// Starts serving on the current runtime.
    pub fn spawn(self) -> RunningServer {
        let addr = self.local_addr();
        let wf = self.workflow();
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(self.run_until(async {
            let _ = rx.await;
        }));
        RunningServer { addr, wf, tx, task }
    }
}

pub struct RunningServer {
    pub addr: SocketAddr,
    pub wf: Arc<Workflow>,
    tx: oneshot::Sender<()>,
    task: JoinHandle<Result<(), ServeError>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(self) -> Result<(), ServeError> {
        let _ = self.tx.send(());
        drop(self.wf);
        self.task.await.map_err(std::io::Error::other)?
    }
}
