//! Authoritative per-session state machine.
//!
//! Every state change is a [`SessionEvent`] with a gap-free sequence number.
//! [`Session::prepare`] validates a command into an event without touching
//! state, [`Session::commit`] applies it; callers that persist events write
//! them between the two. Folding the same events into a fresh session always
//! reproduces the same [`SessionState`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::ingest::SegmentEvent;
use crate::model::{
    apply_annotation, check_times, remove_annotation, sweep_expiry, validate_annotation,
    validate_removal, Annotation, AnnotationId, AnnotationKind, BubbleId, BubbleState,
    ExpiryPolicy, ModelError, Participant, TranscriptBubble, UserToken,
};

/// Version tag carried by persisted files and wire frames.
pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BACKLOG_WINDOW: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub wall_time: f64,
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    ParticipantJoined {
        token: UserToken,
        display_name: String,
    },
    ParticipantLeft {
        token: UserToken,
    },
    InterimUpdate {
        bubble_id: BubbleId,
        speaker: UserToken,
        text: String,
        t_start: f64,
    },
    UtteranceFinalized {
        bubble_id: BubbleId,
        speaker: UserToken,
        text: String,
        t_start: f64,
        t_end: f64,
    },
    AnnotationApplied {
        annotation: Annotation,
    },
    AnnotationRemoved {
        annotation_id: AnnotationId,
        by: UserToken,
    },
    BubblesHidden {
        bubble_ids: Vec<BubbleId>,
    },
}

/// A request to change session state. Identifiers that the engine owns
/// (sequence numbers, annotation ids) are assigned on acceptance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Join {
        token: UserToken,
        display_name: String,
    },
    Leave {
        token: UserToken,
    },
    Interim {
        bubble_id: BubbleId,
        speaker: UserToken,
        text: String,
        t_start: f64,
    },
    Finalize {
        bubble_id: BubbleId,
        speaker: UserToken,
        text: String,
        t_start: f64,
        t_end: f64,
    },
    Annotate {
        author: UserToken,
        bubble_id: BubbleId,
        kind: AnnotationKind,
    },
    RemoveAnnotation {
        author: UserToken,
        annotation_id: AnnotationId,
    },
}

impl From<SegmentEvent> for Command {
    fn from(event: SegmentEvent) -> Self {
        match event {
            SegmentEvent::Interim {
                bubble_id,
                speaker,
                text,
                t_start,
            } => Command::Interim {
                bubble_id,
                speaker,
                text,
                t_start,
            },
            SegmentEvent::Finalized {
                bubble_id,
                speaker,
                text,
                t_start,
                t_end,
            } => Command::Finalize {
                bubble_id,
                speaker,
                text,
                t_start,
                t_end,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("stale reference: {0}")]
    StaleReference(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(UserToken),
    #[error("participant {0} already joined")]
    DuplicateParticipant(UserToken),
    #[error("display name is empty")]
    EmptyName,
    #[error("unknown annotation {0}")]
    UnknownAnnotation(AnnotationId),
    #[error("bubble {0} belongs to another speaker")]
    SpeakerMismatch(BubbleId),
    #[error("expected seq {expected}, got {got}")]
    SeqMismatch { expected: u64, got: u64 },
    #[error("event {seq} is inconsistent with session state: {reason}")]
    InvalidEvent { seq: u64, reason: String },
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Model(e) => e.code(),
            Self::UnknownSession(_) => "unknown_session",
            Self::StaleReference(_) => "stale_reference",
            Self::UnknownParticipant(_) => "unknown_participant",
            Self::DuplicateParticipant(_) => "duplicate_participant",
            Self::EmptyName => "empty_name",
            Self::UnknownAnnotation(_) => "unknown_annotation",
            Self::SpeakerMismatch(_) => "speaker_mismatch",
            Self::SeqMismatch { .. } => "seq_mismatch",
            Self::InvalidEvent { .. } => "invalid_event",
        }
    }
}

/// Folded state of one session. Canonical serialization is the JSON form;
/// all collections are ordered so two equal states serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub participants: BTreeMap<UserToken, Participant>,
    pub bubbles: BTreeMap<BubbleId, TranscriptBubble>,
    pub annotations: BTreeMap<AnnotationId, Annotation>,
    pub removed_annotations: BTreeSet<AnnotationId>,
    pub next_annotation_id: u64,
    pub last_seq: u64,
}

impl SessionState {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            participants: BTreeMap::new(),
            bubbles: BTreeMap::new(),
            annotations: BTreeMap::new(),
            removed_annotations: BTreeSet::new(),
            next_annotation_id: 1,
            last_seq: 0,
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("session state is always serializable")
    }

    /// Bubbles in display order: creation time, then id.
    pub fn ordered_bubbles(&self) -> Vec<&TranscriptBubble> {
        let mut v: Vec<_> = self.bubbles.values().collect();
        v.sort_by(|a, b| creation_order(a.created_at, a.bubble_id, b.created_at, b.bubble_id));
        v
    }

    pub fn visible_bubbles(&self) -> Vec<&TranscriptBubble> {
        let mut v = self.ordered_bubbles();
        v.retain(|b| b.is_visible());
        v
    }

    pub fn participant(&self, token: &UserToken) -> Option<&Participant> {
        self.participants.get(token)
    }

    pub fn max_bubble_id(&self) -> Option<BubbleId> {
        self.bubbles.keys().next_back().copied()
    }

    fn check_actor(&self, token: &UserToken) -> Result<&Participant, EngineError> {
        match self.participants.get(token) {
            Some(p) if p.present => Ok(p),
            Some(_) => Err(EngineError::StaleReference(format!(
                "participant {token} has left"
            ))),
            None => Err(EngineError::UnknownParticipant(token.clone())),
        }
    }
}

pub(crate) fn creation_order(a_at: f64, a_id: BubbleId, b_at: f64, b_id: BubbleId) -> Ordering {
    a_at.total_cmp(&b_at).then(a_id.cmp(&b_id))
}

/// Broadcast-ready description of one applied event. Self-contained so it
/// can be projected for any viewer later without consulting session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub seq: u64,
    pub wall_time: f64,
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Change {
    ParticipantJoined {
        participant: Participant,
    },
    ParticipantLeft {
        token: UserToken,
        number: u32,
    },
    InterimUpdate {
        bubble_id: BubbleId,
        speaker: UserToken,
        speaker_number: u32,
        speaker_name: String,
        text: String,
        t_start: f64,
        created_at: f64,
    },
    UtteranceFinalized {
        bubble_id: BubbleId,
        speaker: UserToken,
        speaker_number: u32,
        speaker_name: String,
        text: String,
        t_start: f64,
        t_end: f64,
        created_at: f64,
        finalized_at: f64,
    },
    AnnotationApplied {
        annotation: Annotation,
        author_number: u32,
        author_name: String,
    },
    AnnotationRemoved {
        annotation: Annotation,
    },
    BubblesHidden {
        bubble_ids: Vec<BubbleId>,
    },
}

#[derive(Debug, Clone)]
pub struct Applied {
    pub event: SessionEvent,
    pub delta: Arc<Delta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub schema_version: u32,
    pub state: SessionState,
}

impl SessionSnapshot {
    pub fn last_seq(&self) -> u64 {
        self.state.last_seq
    }
}

#[derive(Debug, Clone)]
pub enum Resume {
    /// Every event after the requested seq, oldest first (possibly none).
    Backlog(Vec<Arc<Delta>>),
    Snapshot(SessionSnapshot),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub policy: ExpiryPolicy,
    pub backlog_window: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            policy: ExpiryPolicy::default(),
            backlog_window: DEFAULT_BACKLOG_WINDOW,
        }
    }
}

#[derive(Debug)]
pub struct Session {
    state: SessionState,
    config: SessionConfig,
    clock: Arc<dyn Clock>,
    backlog: VecDeque<Arc<Delta>>,
    last_tick: f64,
}

impl Session {
    pub fn new(session_id: SessionId, config: SessionConfig, clock: Arc<dyn Clock>) -> Self {
        Self::from_state(SessionState::new(session_id), config, clock)
    }

    fn from_state(state: SessionState, config: SessionConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            state,
            config,
            clock,
            backlog: VecDeque::new(),
            last_tick: f64::NEG_INFINITY,
        }
    }

    /// Restores a session from a snapshot. The backlog starts empty, so
    /// clients behind the snapshot resume through the snapshot path.
    pub fn from_snapshot(
        snapshot: SessionSnapshot,
        config: SessionConfig,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self::from_state(snapshot.state, config, clock)
    }

    /// Folds `events` into a fresh session.
    pub fn replay<I>(
        session_id: SessionId,
        config: SessionConfig,
        clock: Arc<dyn Clock>,
        events: I,
    ) -> Result<Self, EngineError>
    where
        I: IntoIterator<Item = SessionEvent>,
    {
        let mut session = Self::new(session_id, config, clock);
        session.apply_all(events)?;
        Ok(session)
    }

    pub fn apply_all<I>(&mut self, events: I) -> Result<(), EngineError>
    where
        I: IntoIterator<Item = SessionEvent>,
    {
        for event in events {
            let seq = event.seq;
            self.commit(event).map_err(|e| match e {
                e @ EngineError::InvalidEvent { .. } => e,
                other => EngineError::InvalidEvent {
                    seq,
                    reason: other.to_string(),
                },
            })?;
        }
        Ok(())
    }

    pub fn id(&self) -> &SessionId {
        &self.state.session_id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn last_seq(&self) -> u64 {
        self.state.last_seq
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Validates `cmd` against the current state and returns the event that
    /// accepting it would append. State is not modified.
    pub fn prepare(&self, cmd: Command) -> Result<SessionEvent, EngineError> {
        let seq = self.state.last_seq + 1;
        let payload = match cmd {
            Command::Join {
                token,
                display_name,
            } => EventPayload::ParticipantJoined {
                token,
                display_name: display_name.trim().to_string(),
            },
            Command::Leave { token } => EventPayload::ParticipantLeft { token },
            Command::Interim {
                bubble_id,
                speaker,
                text,
                t_start,
            } => EventPayload::InterimUpdate {
                bubble_id,
                speaker,
                text,
                t_start,
            },
            Command::Finalize {
                bubble_id,
                speaker,
                text,
                t_start,
                t_end,
            } => EventPayload::UtteranceFinalized {
                bubble_id,
                speaker,
                text,
                t_start,
                t_end,
            },
            Command::Annotate {
                author,
                bubble_id,
                kind,
            } => EventPayload::AnnotationApplied {
                annotation: Annotation {
                    annotation_id: AnnotationId(self.state.next_annotation_id),
                    bubble_id,
                    author,
                    kind,
                    seq,
                },
            },
            Command::RemoveAnnotation {
                author,
                annotation_id,
            } => EventPayload::AnnotationRemoved {
                annotation_id,
                by: author,
            },
        };
        let event = SessionEvent {
            seq,
            wall_time: self.clock.now(),
            payload,
        };
        self.validate(&event)?;
        Ok(event)
    }

    /// The BubblesHidden event a tick at `now` would append, if any.
    pub fn prepare_tick(&self, now: f64) -> Option<SessionEvent> {
        let now = now.max(self.last_tick);
        let bubble_ids: Vec<BubbleId> = self
            .state
            .bubbles
            .values()
            .filter(|b| b.is_expirable(now, &self.config.policy))
            .map(|b| b.bubble_id)
            .collect();
        (!bubble_ids.is_empty()).then(|| SessionEvent {
            seq: self.state.last_seq + 1,
            wall_time: now,
            payload: EventPayload::BubblesHidden { bubble_ids },
        })
    }

    /// Marks that a tick at `now` happened even if it produced no event.
    pub fn observe_tick(&mut self, now: f64) {
        self.last_tick = self.last_tick.max(now);
    }

    pub fn submit(&mut self, cmd: Command) -> Result<Applied, EngineError> {
        let event = self.prepare(cmd)?;
        let delta = self.commit(event.clone())?;
        Ok(Applied { event, delta })
    }

    pub fn tick(&mut self, now: f64) -> Option<Applied> {
        let applied = self.prepare_tick(now).map(|event| {
            let delta = self
                .commit(event.clone())
                .expect("prepared tick event is valid");
            Applied { event, delta }
        });
        self.observe_tick(now);
        applied
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            schema_version: SCHEMA_VERSION,
            state: self.state.clone(),
        }
    }

    /// Everything a client that has applied events up to `from_seq` needs to
    /// reach the current state.
    pub fn resume(&self, from_seq: u64) -> Resume {
        let last = self.state.last_seq;
        if from_seq == last {
            return Resume::Backlog(Vec::new());
        }
        if from_seq < last {
            if let Some(oldest) = self.backlog.front() {
                if oldest.seq <= from_seq + 1 {
                    let skip = (from_seq + 1 - oldest.seq) as usize;
                    return Resume::Backlog(self.backlog.iter().skip(skip).cloned().collect());
                }
            }
        }
        Resume::Snapshot(self.snapshot())
    }

    pub fn backlog(&self) -> impl Iterator<Item = &Arc<Delta>> {
        self.backlog.iter()
    }

    fn validate(&self, event: &SessionEvent) -> Result<(), EngineError> {
        let expected = self.state.last_seq + 1;
        if event.seq != expected {
            return Err(EngineError::SeqMismatch {
                expected,
                got: event.seq,
            });
        }
        if !event.wall_time.is_finite() {
            return Err(EngineError::InvalidEvent {
                seq: event.seq,
                reason: "non-finite wall time".into(),
            });
        }
        let state = &self.state;
        match &event.payload {
            EventPayload::ParticipantJoined {
                token,
                display_name,
            } => {
                if display_name.trim().is_empty() {
                    return Err(EngineError::EmptyName);
                }
                if token.as_str().is_empty() {
                    return Err(EngineError::UnknownParticipant(token.clone()));
                }
                if state.participants.contains_key(token) {
                    return Err(EngineError::DuplicateParticipant(token.clone()));
                }
            }
            EventPayload::ParticipantLeft { token } => {
                state.check_actor(token)?;
            }
            EventPayload::InterimUpdate {
                bubble_id,
                speaker,
                t_start,
                ..
            } => {
                state.check_actor(speaker)?;
                match state.bubbles.get(bubble_id) {
                    Some(b) if b.speaker != *speaker => {
                        return Err(EngineError::SpeakerMismatch(*bubble_id))
                    }
                    Some(b) if b.state != BubbleState::Interim => {
                        return Err(ModelError::NotInterim(*bubble_id).into())
                    }
                    Some(_) => {}
                    None => check_times(*t_start, *t_start)?,
                }
            }
            EventPayload::UtteranceFinalized {
                bubble_id,
                speaker,
                t_start,
                t_end,
                ..
            } => {
                state.check_actor(speaker)?;
                match state.bubbles.get(bubble_id) {
                    Some(b) if b.speaker != *speaker => {
                        return Err(EngineError::SpeakerMismatch(*bubble_id))
                    }
                    Some(b) if b.state != BubbleState::Interim => {
                        return Err(ModelError::NotInterim(*bubble_id).into())
                    }
                    Some(b) => check_times(b.t_start, *t_end)?,
                    None => check_times(*t_start, *t_end)?,
                }
            }
            EventPayload::AnnotationApplied { annotation } => {
                state.check_actor(&annotation.author)?;
                if annotation.annotation_id.0 != state.next_annotation_id
                    || annotation.seq != event.seq
                {
                    return Err(EngineError::InvalidEvent {
                        seq: event.seq,
                        reason: format!(
                            "annotation id/seq {}/{} out of order",
                            annotation.annotation_id, annotation.seq
                        ),
                    });
                }
                let bubble = state
                    .bubbles
                    .get(&annotation.bubble_id)
                    .ok_or(ModelError::UnknownBubble(annotation.bubble_id))?;
                validate_annotation(bubble, annotation)?;
            }
            EventPayload::AnnotationRemoved { annotation_id, by } => {
                state.check_actor(by)?;
                let ann = self.live_annotation(*annotation_id)?;
                let bubble = state
                    .bubbles
                    .get(&ann.bubble_id)
                    .ok_or(ModelError::UnknownBubble(ann.bubble_id))?;
                validate_removal(bubble, ann, by)?;
            }
            EventPayload::BubblesHidden { bubble_ids } => {
                if bubble_ids.is_empty() {
                    return Err(EngineError::InvalidEvent {
                        seq: event.seq,
                        reason: "empty hide list".into(),
                    });
                }
                for id in bubble_ids {
                    let eligible = state
                        .bubbles
                        .get(id)
                        .is_some_and(|b| b.is_expirable(event.wall_time, &self.config.policy));
                    if !eligible {
                        return Err(EngineError::InvalidEvent {
                            seq: event.seq,
                            reason: format!("bubble {id} is not eligible for expiry"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn live_annotation(&self, id: AnnotationId) -> Result<&Annotation, EngineError> {
        match self.state.annotations.get(&id) {
            Some(a) => Ok(a),
            None if self.state.removed_annotations.contains(&id) => Err(
                EngineError::StaleReference(format!("annotation {id} was already removed")),
            ),
            None => Err(EngineError::UnknownAnnotation(id)),
        }
    }

    /// Validates and applies one event. Fails without side effects.
    pub fn commit(&mut self, event: SessionEvent) -> Result<Arc<Delta>, EngineError> {
        self.validate(&event)?;
        let SessionEvent {
            seq,
            wall_time,
            payload,
        } = event;
        let state = &mut self.state;
        let change = match payload {
            EventPayload::ParticipantJoined {
                token,
                display_name,
            } => {
                let participant = Participant {
                    token: token.clone(),
                    display_name,
                    number: state.participants.len() as u32 + 1,
                    present: true,
                };
                state.participants.insert(token, participant.clone());
                Change::ParticipantJoined { participant }
            }
            EventPayload::ParticipantLeft { token } => {
                let p = state.participants.get_mut(&token).expect("validated");
                p.present = false;
                Change::ParticipantLeft {
                    number: p.number,
                    token,
                }
            }
            EventPayload::InterimUpdate {
                bubble_id,
                speaker,
                text,
                t_start,
            } => {
                let p = &state.participants[&speaker];
                let (speaker_number, speaker_name) = (p.number, p.display_name.clone());
                let bubble = match state.bubbles.get_mut(&bubble_id) {
                    Some(b) => {
                        b.update_interim(text.clone())?;
                        b
                    }
                    None => state.bubbles.entry(bubble_id).or_insert_with(|| {
                        TranscriptBubble::interim(
                            bubble_id,
                            speaker.clone(),
                            text.clone(),
                            t_start,
                            wall_time,
                        )
                    }),
                };
                Change::InterimUpdate {
                    bubble_id,
                    speaker,
                    speaker_number,
                    speaker_name,
                    text,
                    t_start: bubble.t_start,
                    created_at: bubble.created_at,
                }
            }
            EventPayload::UtteranceFinalized {
                bubble_id,
                speaker,
                text,
                t_start,
                t_end,
            } => {
                let p = &state.participants[&speaker];
                let (speaker_number, speaker_name) = (p.number, p.display_name.clone());
                let bubble = state.bubbles.entry(bubble_id).or_insert_with(|| {
                    TranscriptBubble::interim(bubble_id, speaker.clone(), "", t_start, wall_time)
                });
                bubble.finalize(text.clone(), t_end, seq, wall_time)?;
                Change::UtteranceFinalized {
                    bubble_id,
                    speaker,
                    speaker_number,
                    speaker_name,
                    text,
                    t_start: bubble.t_start,
                    t_end,
                    created_at: bubble.created_at,
                    finalized_at: wall_time,
                }
            }
            EventPayload::AnnotationApplied { annotation } => {
                let bubble = state.bubbles.get_mut(&annotation.bubble_id).expect("validated");
                apply_annotation(bubble, &annotation)?;
                state.next_annotation_id += 1;
                state
                    .annotations
                    .insert(annotation.annotation_id, annotation.clone());
                let p = &state.participants[&annotation.author];
                Change::AnnotationApplied {
                    author_number: p.number,
                    author_name: p.display_name.clone(),
                    annotation,
                }
            }
            EventPayload::AnnotationRemoved { annotation_id, by } => {
                let annotation = state.annotations.remove(&annotation_id).expect("validated");
                let bubble = state.bubbles.get_mut(&annotation.bubble_id).expect("validated");
                remove_annotation(bubble, &annotation, &by)?;
                state.removed_annotations.insert(annotation_id);
                Change::AnnotationRemoved { annotation }
            }
            EventPayload::BubblesHidden { bubble_ids } => {
                let listed: BTreeSet<BubbleId> = bubble_ids.iter().copied().collect();
                let hidden = sweep_expiry(
                    state
                        .bubbles
                        .values_mut()
                        .filter(|b| listed.contains(&b.bubble_id)),
                    wall_time,
                    &self.config.policy,
                );
                debug_assert_eq!(hidden.len(), listed.len());
                self.last_tick = self.last_tick.max(wall_time);
                Change::BubblesHidden { bubble_ids }
            }
        };
        state.last_seq = seq;
        let delta = Arc::new(Delta {
            seq,
            wall_time,
            change,
        });
        self.backlog.push_back(delta.clone());
        while self.backlog.len() > self.config.backlog_window {
            self.backlog.pop_front();
        }
        Ok(delta)
    }
}

/// Registry of independent sessions sharing one clock.
#[derive(Debug)]
pub struct Engine {
    sessions: BTreeMap<SessionId, Session>,
    config: SessionConfig,
    clock: Arc<dyn Clock>,
}

impl Engine {
    pub fn new(config: SessionConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            sessions: BTreeMap::new(),
            config,
            clock,
        }
    }

    pub fn create_session(&mut self, id: SessionId) -> &mut Session {
        let session = Session::new(id.clone(), self.config, self.clock.clone());
        self.sessions.entry(id).or_insert(session)
    }

    pub fn session(&self, id: &SessionId) -> Result<&Session, EngineError> {
        self.sessions
            .get(id)
            .ok_or_else(|| EngineError::UnknownSession(id.clone()))
    }

    pub fn session_mut(&mut self, id: &SessionId) -> Result<&mut Session, EngineError> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| EngineError::UnknownSession(id.clone()))
    }

    pub fn submit(&mut self, id: &SessionId, cmd: Command) -> Result<Applied, EngineError> {
        self.session_mut(id)?.submit(cmd)
    }

    pub fn tick(&mut self, id: &SessionId, now: f64) -> Result<Option<Applied>, EngineError> {
        Ok(self.session_mut(id)?.tick(now))
    }

    pub fn snapshot(&self, id: &SessionId) -> Result<SessionSnapshot, EngineError> {
        Ok(self.session(id)?.snapshot())
    }

    pub fn session_ids(&self) -> impl Iterator<Item = &SessionId> {
        self.sessions.keys()
    }
}
