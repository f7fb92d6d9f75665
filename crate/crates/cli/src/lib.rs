//! Session server and analytics CLI built on `scriptmeet-core`.

pub mod commands;
pub mod config;
pub mod gateway;
pub mod hub;
pub mod server;

pub use commands::{Cli, CliCommand, CliError};
pub use config::ServerConfig;
pub use hub::{Hub, HubError, HubSettings, SessionHandle};
