use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use scriptmeet_core::{ExpiryPolicy, SegmenterConfig};

use crate::hub::HubSettings;

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a positive number of seconds, got {s}"))
    }
}

fn nonzero(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// Options for `serve`. Every flag can also be set through a
/// `SCRIPTMEET_`-prefixed environment variable.
#[derive(Debug, Clone, Args)]
pub struct ServerConfig {
    #[arg(long, env = "SCRIPTMEET_LISTEN_ADDRESS", default_value = "127.0.0.1:8080")]
    pub listen_address: SocketAddr,

    /// Seconds a finalized bubble nobody interacted with stays visible.
    #[arg(long, env = "SCRIPTMEET_TTL_SECONDS", default_value_t = 180.0, value_parser = positive)]
    pub ttl_seconds: f64,

    /// Silence in seconds that ends an utterance.
    #[arg(long, env = "SCRIPTMEET_SILENCE_THRESHOLD", default_value_t = 0.7, value_parser = positive)]
    pub silence_threshold: f64,

    /// Seconds between expiry sweeps.
    #[arg(long, env = "SCRIPTMEET_TICK_INTERVAL", default_value_t = 1.0, value_parser = positive)]
    pub tick_interval: f64,

    /// Events kept per session for reconnecting clients.
    #[arg(long, env = "SCRIPTMEET_BACKLOG_WINDOW", default_value_t = 1000, value_parser = nonzero)]
    pub backlog_window: usize,

    #[arg(long, env = "SCRIPTMEET_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen_address: ([127, 0, 0, 1], 8080).into(),
            ttl_seconds: 180.0,
            silence_threshold: 0.7,
            tick_interval: 1.0,
            backlog_window: 1000,
            data_dir: PathBuf::from("data"),
        }
    }
}

impl ServerConfig {
    pub fn tick_period(&self) -> Duration {
        Duration::from_secs_f64(self.tick_interval)
    }

    pub fn hub_settings(&self) -> anyhow::Result<HubSettings> {
        Ok(HubSettings {
            data_dir: self.data_dir.clone(),
            policy: ExpiryPolicy::new(self.ttl_seconds)?,
            backlog_window: self.backlog_window,
            segmenter: SegmenterConfig::new(
                self.silence_threshold,
                scriptmeet_core::ingest::DEFAULT_INTERIM_EMIT_INTERVAL,
            )?,
        })
    }
}
