//! Read-only analysis subcommands over a session log.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use scriptmeet_core::analytics::{
    participation_metrics, slice_timeline, usage_breakdown, write_metrics_csv, write_slices_csv,
    write_usage_csv, AnalyticsError, DEFAULT_SLICES,
};
use scriptmeet_core::persistence::{EventLog, ExportFormat, PersistError};
use scriptmeet_core::{BubbleState, SessionState, UserToken};
use thiserror::Error;

use crate::config::ServerConfig;

#[derive(Debug, Parser)]
#[command(name = "scriptmeet", version, about = "Collaborative transcript server and log analytics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

fn export_format(s: &str) -> Result<ExportFormat, String> {
    s.parse().map_err(|e: PersistError| e.to_string())
}

fn slice_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run the session server.
    Serve(ServerConfig),
    /// Rebuild a session from its log and summarize it.
    Replay {
        log: PathBuf,
        /// Print the full canonical state instead of a summary.
        #[arg(long)]
        state: bool,
    },
    /// Per-participant verbal and transcript interaction measures.
    Metrics {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        out: OutFormat,
    },
    /// Share of each interaction kind.
    Usage {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        out: OutFormat,
    },
    /// Dominant interaction kind per equal slice of the session.
    Slices {
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SLICES, value_parser = slice_count)]
        n: usize,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        out: OutFormat,
    },
    /// Transcript with annotations as seen by one participant.
    Export {
        log: PathBuf,
        #[arg(long, default_value = "text", value_parser = export_format)]
        format: ExportFormat,
        /// Token of the viewing participant; their private comments are included.
        #[arg(long)]
        viewer: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: PersistError },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("write failed: {0}")]
    Output(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Output(e.to_string())
    }
}

fn output<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Output(e.to_string())
}

/// Reads a log and checks it replays cleanly.
pub fn load(path: &Path) -> Result<(EventLog, SessionState), CliError> {
    let wrap = |source| CliError::Log {
        path: path.to_path_buf(),
        source,
    };
    let log = EventLog::read(path).map_err(wrap)?;
    if log.has_torn_tail() {
        eprintln!(
            "warning: {}: ignoring incomplete record after seq {}",
            path.display(),
            log.last_seq()
        );
    }
    let state = log.replay().map_err(wrap)?;
    Ok((log, state))
}

fn write_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Runs an analysis subcommand, writing its result to `out`. `serve` is
/// handled by the binary.
pub fn run(command: &CliCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        CliCommand::Serve(_) => Ok(()),
        CliCommand::Replay { log, state } => {
            let (log, st) = load(log)?;
            if *state {
                writeln!(out, "{}", st.canonical_json())?;
            } else {
                summarize(out, &log, &st)?;
            }
            Ok(())
        }
        CliCommand::Metrics { log, out: format } => {
            let (log, _) = load(log)?;
            let metrics = participation_metrics(&log.events)?;
            match format {
                OutFormat::Csv => write_metrics_csv(out, &metrics).map_err(output),
                OutFormat::Json => write_json(out, &metrics.values().collect::<Vec<_>>()),
            }
        }
        CliCommand::Usage { log, out: format } => {
            let (log, _) = load(log)?;
            let usage = usage_breakdown(&log.events);
            match format {
                OutFormat::Csv => write_usage_csv(out, &usage).map_err(output),
                OutFormat::Json => write_json(out, &usage),
            }
        }
        CliCommand::Slices { log, n, out: format } => {
            let (log, _) = load(log)?;
            let timeline = slice_timeline(&log.events, *n)?;
            match format {
                OutFormat::Csv => write_slices_csv(out, &timeline).map_err(output),
                OutFormat::Json => write_json(out, &timeline),
            }
        }
        CliCommand::Export { log, format, viewer } => {
            let (_, st) = load(log)?;
            let viewer = viewer.clone().map(UserToken::new);
            let text = scriptmeet_core::persistence::export(&st, *format, viewer.as_ref());
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                writeln!(out)?;
            }
            Ok(())
        }
    }
}

fn summarize(out: &mut dyn Write, log: &EventLog, st: &SessionState) -> Result<(), CliError> {
    let present = st.participants.values().filter(|p| p.present).count();
    let count = |s: BubbleState| st.bubbles.values().filter(|b| b.state == s).count();
    writeln!(out, "session {}", st.session_id)?;
    writeln!(out, "events {}", log.last_seq())?;
    writeln!(out, "ttl_seconds {}", log.header.ttl_seconds)?;
    writeln!(out, "participants {} ({present} present)", st.participants.len())?;
    writeln!(
        out,
        "bubbles {} ({} interim, {} finalized, {} hidden)",
        st.bubbles.len(),
        count(BubbleState::Interim),
        count(BubbleState::Finalized),
        count(BubbleState::Hidden)
    )?;
    writeln!(out, "annotations {}", st.annotations.len())?;
    Ok(())
}
