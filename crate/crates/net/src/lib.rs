//! HTTP surface: the coordinator REST server, the client used by the CLI and
//! agents, and the provider agent daemon.

pub mod client;
pub mod daemon;
pub mod error;
pub mod server;

pub use client::{ApiClient, AsyncLink, ClientError, LocalAgentClient};
pub use daemon::{start as start_agent, DaemonConfig, DaemonError, LocalStatus, RunningDaemon};
pub use error::{ApiError, ErrorBody};
pub use server::{router, CoordinatorHandle, ServeOptions};
