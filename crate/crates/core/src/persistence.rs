//! Append-only JSON Lines event logs, advisory snapshots and exports.
//!
//! Log layout: one header object on the first line, then one record per
//! line in seq order 1..n. Each record wraps the event with a CRC-32 of its
//! canonical JSON so in-place corruption is detected on read. A final line
//! without its newline is a torn write and is dropped (and truncated away
//! when the log is reopened for writing).

use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::engine::{
    EngineError, EventPayload, Session, SessionConfig, SessionEvent, SessionId, SessionSnapshot,
    SessionState, SCHEMA_VERSION,
};
use crate::model::{ExpiryPolicy, UserToken};
use crate::view::{BubbleView, ParticipantView, ViewerView};

pub const LOG_SUFFIX: &str = ".events.jsonl";
pub const SNAPSHOT_SUFFIX: &str = ".snapshot.json";
pub const SNAPSHOT_INTERVAL: u64 = 500;
pub const SYNC_INTERVAL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("seq gap: expected {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("corrupt record {seq}: {reason}")]
    CorruptRecord { seq: u64, reason: String },
    #[error("bad log header: {0}")]
    BadHeader(String),
    #[error("log already exists: {0}")]
    AlreadyExists(PathBuf),
    #[error("unknown export format `{0}` (expected `text` or `json`)")]
    UnknownFormat(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub fn log_path(dir: impl AsRef<Path>, session_id: &SessionId) -> PathBuf {
    dir.as_ref().join(format!("{session_id}{LOG_SUFFIX}"))
}

pub fn snapshot_path(dir: impl AsRef<Path>, session_id: &SessionId) -> PathBuf {
    dir.as_ref().join(format!("{session_id}{SNAPSHOT_SUFFIX}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub session_id: SessionId,
    pub schema_version: u32,
    pub created_at: f64,
    /// Expiry window the session ran with; replay needs it to re-check
    /// hide events.
    pub ttl_seconds: f64,
}

impl LogHeader {
    pub fn new(session_id: SessionId, created_at: f64, policy: ExpiryPolicy) -> Self {
        Self {
            session_id,
            schema_version: SCHEMA_VERSION,
            created_at,
            ttl_seconds: policy.ttl_seconds,
        }
    }

    pub fn session_config(&self) -> Result<SessionConfig, PersistError> {
        let policy =
            ExpiryPolicy::new(self.ttl_seconds).map_err(|e| PersistError::BadHeader(e.to_string()))?;
        Ok(SessionConfig {
            policy,
            ..SessionConfig::default()
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    crc32: u32,
    event: SessionEvent,
}

fn encode_record(event: &SessionEvent) -> String {
    let body = serde_json::to_string(event).expect("events are serializable");
    let crc32 = crc32fast::hash(body.as_bytes());
    format!("{{\"crc32\":{crc32},\"event\":{body}}}\n")
}

fn decode_record(line: &str, expected_seq: u64) -> Result<SessionEvent, PersistError> {
    let corrupt = |reason: String| PersistError::CorruptRecord {
        seq: expected_seq,
        reason,
    };
    let record: Record = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
    let body = serde_json::to_string(&record.event).expect("events are serializable");
    if crc32fast::hash(body.as_bytes()) != record.crc32 {
        return Err(corrupt("checksum mismatch".into()));
    }
    if record.event.seq != expected_seq {
        return Err(corrupt(format!("record carries seq {}", record.event.seq)));
    }
    Ok(record.event)
}

fn header_line(header: &LogHeader) -> String {
    let mut line = serde_json::to_string(header).expect("header is serializable");
    line.push('\n');
    line
}

/// The exact bytes [`LogWriter`] produces for `header` followed by `events`.
pub fn render_log(header: &LogHeader, events: &[SessionEvent]) -> String {
    let mut out = header_line(header);
    for e in events {
        out.push_str(&encode_record(e));
    }
    out
}

/// A fully read event log.
#[derive(Debug, Clone)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<SessionEvent>,
    /// Bytes of the complete lines read; anything past this is a torn tail.
    valid_len: u64,
    torn_tail: bool,
}

impl EventLog {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let bytes = fs::read(path)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, PersistError> {
        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        let torn_tail = complete < bytes.len();
        let text = std::str::from_utf8(&bytes[..complete])
            .map_err(|e| PersistError::BadHeader(format!("log is not UTF-8: {e}")))?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| PersistError::BadHeader("missing header line".into()))?;
        let header: LogHeader = serde_json::from_str(header_line)
            .map_err(|e| PersistError::BadHeader(e.to_string()))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(PersistError::BadHeader(format!(
                "unsupported schema version {}",
                header.schema_version
            )));
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            events.push(decode_record(line, i as u64 + 1)?);
        }
        Ok(Self {
            header,
            events,
            valid_len: complete as u64,
            torn_tail,
        })
    }

    pub fn has_torn_tail(&self) -> bool {
        self.torn_tail
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn session_id(&self) -> &SessionId {
        &self.header.session_id
    }

    /// Rebuilds the session by folding every event.
    pub fn replay_session(&self, clock: Arc<dyn Clock>) -> Result<Session, PersistError> {
        let config = self.header.session_config()?;
        Session::replay(
            self.header.session_id.clone(),
            config,
            clock,
            self.events.iter().cloned(),
        )
        .map_err(corrupt_from_engine)
    }

    pub fn replay(&self) -> Result<SessionState, PersistError> {
        let clock = Arc::new(crate::clock::VirtualClock::default());
        Ok(self.replay_session(clock)?.state().clone())
    }

    /// Like [`EventLog::replay_session`] but starting from `snapshot` and
    /// applying only the events after it.
    pub fn replay_from_snapshot(
        &self,
        snapshot: SessionSnapshot,
        clock: Arc<dyn Clock>,
    ) -> Result<Session, PersistError> {
        if snapshot.state.session_id != self.header.session_id {
            return Err(PersistError::Snapshot("snapshot belongs to another session".into()));
        }
        if snapshot.last_seq() > self.last_seq() {
            return Err(PersistError::Snapshot(format!(
                "snapshot at seq {} is ahead of the log ({})",
                snapshot.last_seq(),
                self.last_seq()
            )));
        }
        let config = self.header.session_config()?;
        let from = snapshot.last_seq() as usize;
        let mut session = Session::from_snapshot(snapshot, config, clock);
        session
            .apply_all(self.events[from..].iter().cloned())
            .map_err(corrupt_from_engine)?;
        Ok(session)
    }

    pub fn export(
        &self,
        format: ExportFormat,
        viewer: Option<&UserToken>,
    ) -> Result<String, PersistError> {
        Ok(export(&self.replay()?, format, viewer))
    }
}

fn corrupt_from_engine(e: EngineError) -> PersistError {
    match e {
        EngineError::InvalidEvent { seq, reason } => PersistError::CorruptRecord { seq, reason },
        other => PersistError::CorruptRecord {
            seq: 0,
            reason: other.to_string(),
        },
    }
}

/// Single writer for one session's log.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    path: PathBuf,
    last_seq: u64,
    last_sync: Instant,
    unsynced: bool,
}

impl LogWriter {
    /// Creates a new log containing only the header. Fails if the file
    /// already exists.
    pub fn create(path: impl AsRef<Path>, header: &LogHeader) -> Result<Self, PersistError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => PersistError::AlreadyExists(path.clone()),
                _ => PersistError::IoFailure(e),
            })?;
        file.write_all(header_line(header).as_bytes())?;
        file.sync_all()?;
        Ok(Self {
            file,
            path,
            last_seq: 0,
            last_sync: Instant::now(),
            unsynced: false,
        })
    }

    /// Opens an existing log for appending, truncating a torn final line.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, EventLog), PersistError> {
        let path = path.as_ref().to_path_buf();
        let log = EventLog::read(&path)?;
        let mut file = OpenOptions::new().write(true).open(&path)?;
        if log.has_torn_tail() {
            file.set_len(log.valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let writer = Self {
            file,
            path,
            last_seq: log.last_seq(),
            last_sync: Instant::now(),
            unsynced: false,
        };
        Ok((writer, log))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Appends one event. The record reaches the OS before this returns;
    /// finalizations and hides are also fsynced immediately, other events
    /// at most [`SYNC_INTERVAL`] later.
    pub fn append(&mut self, event: &SessionEvent) -> Result<(), PersistError> {
        let expected = self.last_seq + 1;
        if event.seq != expected {
            return Err(PersistError::SeqGap {
                expected,
                got: event.seq,
            });
        }
        self.file.write_all(encode_record(event).as_bytes())?;
        self.last_seq = event.seq;
        self.unsynced = true;
        let urgent = matches!(
            event.payload,
            EventPayload::UtteranceFinalized { .. } | EventPayload::BubblesHidden { .. }
        );
        if urgent || self.last_sync.elapsed() >= SYNC_INTERVAL {
            self.sync()?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<(), PersistError> {
        if self.unsynced {
            self.file.sync_data()?;
            self.unsynced = false;
        }
        self.last_sync = Instant::now();
        Ok(())
    }

    /// Syncs if a batched write has been pending for longer than
    /// [`SYNC_INTERVAL`].
    pub fn sync_if_due(&mut self) -> Result<(), PersistError> {
        if self.unsynced && self.last_sync.elapsed() >= SYNC_INTERVAL {
            self.sync()?;
        }
        Ok(())
    }

    pub fn snapshot_due(&self) -> bool {
        self.last_seq > 0 && self.last_seq % SNAPSHOT_INTERVAL == 0
    }
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        let _ = self.sync();
    }
}

/// Writes a snapshot atomically (temp file + rename).
pub fn write_snapshot(path: impl AsRef<Path>, snapshot: &SessionSnapshot) -> Result<(), PersistError> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    {
        let mut file = File::create(&tmp)?;
        serde_json::to_writer(&mut file, snapshot)
            .map_err(|e| PersistError::Snapshot(e.to_string()))?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<SessionSnapshot, PersistError> {
    let bytes = fs::read(path)?;
    let snapshot: SessionSnapshot =
        serde_json::from_slice(&bytes).map_err(|e| PersistError::Snapshot(e.to_string()))?;
    if snapshot.schema_version != SCHEMA_VERSION {
        return Err(PersistError::Snapshot(format!(
            "unsupported schema version {}",
            snapshot.schema_version
        )));
    }
    Ok(snapshot)
}

/// Recovers a session from its log, using the snapshot next to it when one
/// is present and consistent. Torn tails are truncated.
pub fn recover(
    dir: impl AsRef<Path>,
    session_id: &SessionId,
    clock: Arc<dyn Clock>,
    backlog_window: usize,
) -> Result<(Session, LogWriter, LogHeader), PersistError> {
    let dir = dir.as_ref();
    let (writer, log) = LogWriter::open(log_path(dir, session_id))?;
    let config = SessionConfig {
        backlog_window,
        ..log.header.session_config()?
    };
    let from_snapshot = read_snapshot(snapshot_path(dir, session_id))
        .ok()
        .filter(|snap| {
            snap.state.session_id == log.header.session_id && snap.last_seq() <= log.last_seq()
        })
        .and_then(|snap| {
            let from = snap.last_seq() as usize;
            let mut session = Session::from_snapshot(snap, config, clock.clone());
            session
                .apply_all(log.events[from..].iter().cloned())
                .ok()
                .map(|_| session)
        });
    let session = match from_snapshot {
        Some(s) => s,
        None => Session::replay(
            log.header.session_id.clone(),
            config,
            clock,
            log.events.iter().cloned(),
        )
        .map_err(corrupt_from_engine)?,
    };
    Ok((session, writer, log.header))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Text,
    Json,
}

impl FromStr for ExportFormat {
    type Err = PersistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            other => Err(PersistError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBubble {
    #[serde(flatten)]
    pub bubble: BubbleView,
    pub hidden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExport {
    pub schema_version: u32,
    pub session_id: SessionId,
    pub last_seq: u64,
    pub participants: Vec<ParticipantView>,
    /// Display order. Hidden bubbles are kept and flagged.
    pub bubbles: Vec<ExportBubble>,
}

pub fn format_timestamp(seconds: f64) -> String {
    let total = seconds.max(0.0).floor() as u64;
    format!("[{:02}:{:02}]", total / 60, total % 60)
}

/// Renders a transcript document for `viewer` (`None` = anonymous reader).
pub fn export(state: &SessionState, format: ExportFormat, viewer: Option<&UserToken>) -> String {
    let view = ViewerView::project(state, viewer);
    match format {
        ExportFormat::Text => {
            let mut out = format!("# Transcript of session {}\n", state.session_id);
            for b in view.ordered() {
                if b.state == crate::model::BubbleState::Interim {
                    continue;
                }
                out.push_str(&format!(
                    "{} {}: {}\n",
                    format_timestamp(b.t_start),
                    b.speaker_name,
                    b.text
                ));
            }
            out
        }
        ExportFormat::Json => {
            let doc = AnnotatedExport {
                schema_version: SCHEMA_VERSION,
                session_id: view.session_id.clone(),
                last_seq: view.last_seq,
                participants: view.participants.clone(),
                bubbles: view
                    .ordered()
                    .into_iter()
                    .map(|b| ExportBubble {
                        hidden: b.hidden(),
                        bubble: b.clone(),
                    })
                    .collect(),
            };
            let mut out = serde_json::to_string_pretty(&doc).expect("export is serializable");
            out.push('\n');
            out
        }
    }
}
