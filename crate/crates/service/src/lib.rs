//! HTTP API and command-line front end over `phylogrid-core`.

pub mod api;
pub mod cli;
pub mod client;
pub mod error;
pub mod server;
pub mod session;

pub use error::ApiError;
pub use server::{bind, RunningServer, ServeConfig, ServeError, Server};
