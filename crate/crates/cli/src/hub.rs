//! Live sessions: one lock-guarded writer per session plus a broadcast
//! channel that fans committed deltas out to connections.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use scriptmeet_core::engine::Delta;
use scriptmeet_core::ingest::IngestError;
use scriptmeet_core::persistence::{
    self, log_path, snapshot_path, write_snapshot, ExportFormat, LogHeader, LogWriter,
    PersistError, LOG_SUFFIX,
};
use scriptmeet_core::protocol::{self, ServerMessage};
use scriptmeet_core::{
    Clock, Command, EngineError, ExpiryPolicy, SegmentEvent, Segmenter, SegmenterConfig, Session,
    SessionConfig, SessionEvent, SessionId, TimedToken, UserToken,
};
use thiserror::Error;
use tokio::sync::broadcast;
use tracing::{debug, info, warn};

const FANOUT_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("invalid speech: {0}")]
    InvalidSpeech(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Engine(e) => e.code(),
            Self::StorageUnavailable(_) => "storage_unavailable",
            Self::InvalidSpeech(_) => "invalid_speech",
            Self::Persist(PersistError::UnknownFormat(_)) => "unknown_format",
            Self::Persist(_) => "storage_unavailable",
        }
    }

    pub fn to_message(&self, command_ref: Option<String>) -> ServerMessage {
        ServerMessage::Reject {
            command_ref,
            error_code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

impl From<IngestError> for HubError {
    fn from(e: IngestError) -> Self {
        Self::InvalidSpeech(e.to_string())
    }
}

fn storage(e: PersistError) -> HubError {
    HubError::StorageUnavailable(e.to_string())
}

#[derive(Debug, Clone)]
pub struct HubSettings {
    pub data_dir: PathBuf,
    pub policy: ExpiryPolicy,
    pub backlog_window: usize,
    pub segmenter: SegmenterConfig,
}

struct SessionCore {
    session: Session,
    segmenter: Segmenter,
    writer: LogWriter,
    data_dir: PathBuf,
    /// Wall time the session was created; segmenter times are relative to it.
    origin: f64,
    applied_commands: HashSet<(UserToken, String)>,
}

impl SessionCore {
    /// Validates, persists, then applies. Nothing is applied unless the log
    /// write succeeded.
    fn commit(&mut self, event: SessionEvent) -> Result<Arc<Delta>, HubError> {
        self.writer.append(&event).map_err(storage)?;
        let delta = self.session.commit(event)?;
        if self.writer.snapshot_due() {
            let path = snapshot_path(&self.data_dir, self.session.id());
            if let Err(e) = write_snapshot(path, &self.session.snapshot()) {
                warn!(session = %self.session.id(), error = %e, "snapshot failed");
            }
        }
        Ok(delta)
    }

    fn submit(&mut self, cmd: Command) -> Result<Arc<Delta>, HubError> {
        let event = self.session.prepare(cmd)?;
        self.commit(event)
    }

    fn rel_now(&self) -> f64 {
        (self.session.clock().now() - self.origin).max(0.0)
    }

    fn submit_segments(&mut self, segments: Vec<SegmentEvent>, out: &mut Vec<Arc<Delta>>) {
        for seg in segments {
            match self.submit(seg.into()) {
                Ok(d) => out.push(d),
                Err(e) => warn!(session = %self.session.id(), error = %e, "dropped segment"),
            }
        }
    }
}

/// A running session. All mutation goes through one lock so the log, the
/// state and the broadcast order agree.
pub struct SessionHandle {
    id: SessionId,
    core: Mutex<SessionCore>,
    fanout: broadcast::Sender<Arc<Delta>>,
}

impl SessionHandle {
    fn new(core: SessionCore) -> Self {
        let (fanout, _) = broadcast::channel(FANOUT_CAPACITY);
        Self {
            id: core.session.id().clone(),
            core: Mutex::new(core),
            fanout,
        }
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    fn lock(&self) -> MutexGuard<'_, SessionCore> {
        self.core.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn publish(&self, deltas: &[Arc<Delta>]) {
        for d in deltas {
            let _ = self.fanout.send(d.clone());
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().session.last_seq()
    }

    /// Applies `cmd`. A command retried with an id that already succeeded
    /// for the same author is acknowledged without a new event.
    pub fn submit(&self, cmd: Command, command_ref: Option<(&UserToken, &str)>) -> Result<Option<Arc<Delta>>, HubError> {
        let mut core = self.lock();
        let key = command_ref.map(|(who, id)| (who.clone(), id.to_string()));
        if key.as_ref().is_some_and(|k| core.applied_commands.contains(k)) {
            return Ok(None);
        }
        let mut deltas = Vec::new();
        if let Command::Leave { token } = &cmd {
            // close the leaver's open utterance first
            if core.session.state().participant(token).is_some_and(|p| p.present) {
                let open = core.segmenter.flush(token).into_iter().collect();
                core.submit_segments(open, &mut deltas);
            }
        }
        let result = core.submit(cmd);
        if let Ok(d) = &result {
            deltas.push(d.clone());
            if let Some(k) = key {
                core.applied_commands.insert(k);
            }
        }
        self.publish(&deltas);
        result.map(Some)
    }

    /// Feeds typed words to the segmenter as if spoken now.
    pub fn speak(&self, speaker: &UserToken, text: &str) -> Result<Vec<Arc<Delta>>, HubError> {
        let mut core = self.lock();
        match core.session.state().participant(speaker) {
            Some(p) if p.present => {}
            Some(_) => {
                return Err(EngineError::StaleReference(format!("participant {speaker} has left")).into())
            }
            None => return Err(EngineError::UnknownParticipant(speaker.clone()).into()),
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(HubError::InvalidSpeech("no words".into()));
        }
        let t = core.rel_now();
        let mut segments = Vec::new();
        for w in words {
            segments.extend(core.segmenter.feed(TimedToken::new(speaker.clone(), w, t))?);
        }
        let mut deltas = Vec::new();
        core.submit_segments(segments, &mut deltas);
        self.publish(&deltas);
        Ok(deltas)
    }

    /// Closes utterances that have gone silent and hides expired bubbles.
    pub fn tick(&self) -> Result<Vec<Arc<Delta>>, HubError> {
        let mut core = self.lock();
        let now = core.session.clock().now();
        let rel = core.rel_now();
        let mut deltas = Vec::new();
        let silent = core.segmenter.poll(rel);
        core.submit_segments(silent, &mut deltas);
        let result = match core.session.prepare_tick(now) {
            Some(event) => core.commit(event).map(|d| deltas.push(d)),
            None => Ok(()),
        };
        core.session.observe_tick(now);
        if let Err(e) = core.writer.sync_if_due() {
            warn!(session = %self.id, error = %e, "log sync failed");
        }
        self.publish(&deltas);
        result.map(|_| deltas)
    }

    pub fn join(&self, display_name: &str, token: UserToken) -> Result<u32, HubError> {
        self.submit(
            Command::Join {
                token: token.clone(),
                display_name: display_name.to_string(),
            },
            None,
        )?;
        Ok(self
            .lock()
            .session
            .state()
            .participant(&token)
            .map_or(0, |p| p.number))
    }

    /// Whether `token` joined this session and is still present.
    pub fn is_present(&self, token: &UserToken) -> Option<bool> {
        self.lock().session.state().participant(token).map(|p| p.present)
    }

    /// Catch-up messages for a viewer at `from_seq` and a receiver for
    /// everything after them. Both are taken under the session lock, so the
    /// stream has neither gaps nor overlap.
    pub fn subscribe(
        &self,
        from_seq: u64,
        viewer: &UserToken,
    ) -> (Vec<ServerMessage>, broadcast::Receiver<Arc<Delta>>) {
        let core = self.lock();
        let msgs = protocol::resume(&core.session, from_seq, Some(viewer));
        (msgs, self.fanout.subscribe())
    }

    pub fn export(&self, format: ExportFormat, viewer: Option<&UserToken>) -> String {
        persistence::export(self.lock().session.state(), format, viewer)
    }

    pub fn sync(&self) {
        if let Err(e) = self.lock().writer.sync() {
            warn!(session = %self.id, error = %e, "log sync failed");
        }
    }
}

/// Registry of live sessions.
pub struct Hub {
    settings: HubSettings,
    clock: Arc<dyn Clock>,
    sessions: RwLock<HashMap<SessionId, Arc<SessionHandle>>>,
}

impl Hub {
    /// Prepares the data directory and recovers every session logged there.
    pub fn open(settings: HubSettings, clock: Arc<dyn Clock>) -> Result<Self, HubError> {
        check_writable(&settings.data_dir)?;
        let hub = Self {
            settings,
            clock,
            sessions: RwLock::new(HashMap::new()),
        };
        for id in logged_sessions(&hub.settings.data_dir)? {
            let (session, writer, header) = persistence::recover(
                &hub.settings.data_dir,
                &id,
                hub.clock.clone(),
                hub.settings.backlog_window,
            )?;
            info!(session = %id, last_seq = session.last_seq(), "recovered");
            let next = session.state().max_bubble_id().map_or(1, |b| b.0 + 1);
            let core = SessionCore {
                segmenter: Segmenter::with_next_bubble(hub.settings.segmenter, scriptmeet_core::BubbleId(next)),
                session,
                writer,
                data_dir: hub.settings.data_dir.clone(),
                origin: header.created_at,
                applied_commands: HashSet::new(),
            };
            hub.insert(Arc::new(SessionHandle::new(core)));
        }
        Ok(hub)
    }

    pub fn settings(&self) -> &HubSettings {
        &self.settings
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn insert(&self, handle: Arc<SessionHandle>) {
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(handle.id().clone(), handle);
    }

    pub fn session(&self, id: &SessionId) -> Result<Arc<SessionHandle>, HubError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownSession(id.clone()).into())
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub fn create_session(&self) -> Result<SessionId, HubError> {
        let id = SessionId::new(uuid::Uuid::new_v4().simple().to_string());
        let created_at = self.clock.now();
        let header = LogHeader::new(id.clone(), created_at, self.settings.policy);
        let writer = LogWriter::create(log_path(&self.settings.data_dir, &id), &header).map_err(storage)?;
        let config = SessionConfig {
            policy: self.settings.policy,
            backlog_window: self.settings.backlog_window,
        };
        let core = SessionCore {
            session: Session::new(id.clone(), config, self.clock.clone()),
            segmenter: Segmenter::new(self.settings.segmenter),
            writer,
            data_dir: self.settings.data_dir.clone(),
            origin: created_at,
            applied_commands: HashSet::new(),
        };
        self.insert(Arc::new(SessionHandle::new(core)));
        debug!(session = %id, "created");
        Ok(id)
    }

    /// Issues a fresh bearer token for `display_name`.
    pub fn join(&self, id: &SessionId, display_name: &str) -> Result<(UserToken, u32), HubError> {
        let handle = self.session(id)?;
        let token = UserToken::new(uuid::Uuid::new_v4().to_string());
        let number = handle.join(display_name, token.clone())?;
        Ok((token, number))
    }

    /// Runs one tick on every session.
    pub fn tick_all(&self) -> usize {
        let handles: Vec<_> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        let mut emitted = 0;
        for h in handles {
            match h.tick() {
                Ok(d) => emitted += d.len(),
                Err(e) => warn!(session = %h.id(), error = %e, "tick failed"),
            }
        }
        emitted
    }

    pub fn sync_all(&self) {
        for h in self.sessions.read().unwrap_or_else(|p| p.into_inner()).values() {
            h.sync();
        }
    }
}

fn check_writable(dir: &Path) -> Result<(), HubError> {
    let fail = |e: std::io::Error| HubError::StorageUnavailable(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)?;
    Ok(())
}

fn logged_sessions(dir: &Path) -> Result<Vec<SessionId>, HubError> {
    let entries = fs::read_dir(dir).map_err(|e| HubError::StorageUnavailable(e.to_string()))?;
    let mut ids: Vec<SessionId> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(LOG_SUFFIX).map(SessionId::new)
        })
        .collect();
    ids.sort();
    Ok(ids)
}
