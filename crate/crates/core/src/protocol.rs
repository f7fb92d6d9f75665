//! Wire contract between the server and transcript clients.
//!
//! One JSON object per WebSocket text frame, tagged by `type` and carrying
//! the schema version in the top-level `v` field. Unknown fields are ignored
//! so newer peers can add fields without breaking older ones.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Command, Delta, EngineError, Resume, Session, SessionId, SCHEMA_VERSION};
use crate::model::{AnnotationId, AnnotationKind, BubbleId, UserToken};
use crate::view::{FoldError, FoldOutcome, ViewerDelta, ViewerView};

pub const VERSION_FIELD: &str = "v";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        token: UserToken,
        display_name: String,
    },
    Subscribe {
        session_id: SessionId,
        from_seq: u64,
    },
    Command {
        /// Client-chosen reference echoed back in a rejection.
        id: String,
        command: ClientCommand,
    },
    Ping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClientCommand {
    Annotate {
        bubble_id: BubbleId,
        annotation: AnnotationKind,
    },
    RemoveAnnotation {
        annotation_id: AnnotationId,
    },
    /// Typed speech fed to the session's segmenter at the current time.
    Speak {
        text: String,
    },
    Leave,
}

impl ClientCommand {
    /// The engine command this maps to when issued by `author`. `Speak` goes
    /// through the segmenter instead and yields `None`.
    pub fn into_command(self, author: UserToken) -> Option<Command> {
        match self {
            Self::Annotate {
                bubble_id,
                annotation,
            } => Some(Command::Annotate {
                author,
                bubble_id,
                kind: annotation,
            }),
            Self::RemoveAnnotation { annotation_id } => Some(Command::RemoveAnnotation {
                author,
                annotation_id,
            }),
            Self::Leave => Some(Command::Leave { token: author }),
            Self::Speak { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        session_id: SessionId,
        snapshot: Option<ViewerView>,
        last_seq: u64,
    },
    Event {
        seq: u64,
        delta: ViewerDelta,
    },
    Reject {
        command_ref: Option<String>,
        error_code: String,
        message: String,
    },
    Pong,
}

impl ServerMessage {
    pub fn event(delta: &Delta, viewer: Option<&UserToken>) -> Self {
        Self::Event {
            seq: delta.seq,
            delta: ViewerDelta::project(delta, viewer),
        }
    }

    pub fn reject(command_ref: Option<String>, err: &EngineError) -> Self {
        Self::Reject {
            command_ref,
            error_code: err.code().to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error{}: {reason}", position.map(|p| format!(" at byte {p}")).unwrap_or_default())]
pub struct DecodeError {
    pub position: Option<usize>,
    pub reason: String,
}

pub fn encode<M: Serialize>(msg: &M) -> String {
    let mut value = serde_json::to_value(msg).expect("protocol messages are serializable");
    if let serde_json::Value::Object(map) = &mut value {
        map.insert(VERSION_FIELD.into(), SCHEMA_VERSION.into());
    }
    value.to_string()
}

pub fn decode<M: DeserializeOwned>(frame: &str) -> Result<M, DecodeError> {
    let value: serde_json::Value = serde_json::from_str(frame).map_err(|e| DecodeError {
        position: Some(byte_offset(frame, e.line(), e.column())),
        reason: e.to_string(),
    })?;
    let schema_error = |reason: String| DecodeError {
        position: None,
        reason,
    };
    match value.get(VERSION_FIELD).and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(schema_error(format!("unsupported schema version {v}"))),
        None => return Err(schema_error("missing schema version".into())),
    }
    serde_json::from_value(value).map_err(|e| schema_error(e.to_string()))
}

pub fn decode_bytes<M: DeserializeOwned>(frame: &[u8]) -> Result<M, DecodeError> {
    let text = std::str::from_utf8(frame).map_err(|e| DecodeError {
        position: Some(e.valid_up_to()),
        reason: "frame is not valid UTF-8".into(),
    })?;
    decode(text)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Messages that bring a viewer from `from_seq` up to the session's latest
/// seq: a `Welcome` (with a snapshot when the backlog no longer reaches back
/// far enough) followed by any backlog events.
pub fn resume(session: &Session, from_seq: u64, viewer: Option<&UserToken>) -> Vec<ServerMessage> {
    let session_id = session.id().clone();
    let last_seq = session.last_seq();
    match session.resume(from_seq) {
        Resume::Backlog(deltas) => {
            let mut out = Vec::with_capacity(deltas.len() + 1);
            out.push(ServerMessage::Welcome {
                session_id,
                snapshot: None,
                last_seq,
            });
            out.extend(deltas.iter().map(|d| ServerMessage::event(d, viewer)));
            out
        }
        Resume::Snapshot(snapshot) => vec![ServerMessage::Welcome {
            session_id,
            snapshot: Some(ViewerView::project(&snapshot.state, viewer)),
            last_seq,
        }],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientAction {
    None,
    /// The client saw a gap and must resubscribe from `from_seq`.
    Resubscribe { from_seq: u64 },
    Rejected {
        command_ref: Option<String>,
        error_code: String,
    },
}

/// Client-side state: a viewer projection kept current by server messages.
#[derive(Debug, Clone)]
pub struct ClientReplica {
    view: ViewerView,
    duplicates: u64,
}

impl ClientReplica {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            view: ViewerView::empty(session_id),
            duplicates: 0,
        }
    }

    pub fn view(&self) -> &ViewerView {
        &self.view
    }

    pub fn last_seq(&self) -> u64 {
        self.view.last_seq
    }

    /// Count of events ignored because their seq was already applied.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn handle(&mut self, msg: &ServerMessage) -> ClientAction {
        match msg {
            ServerMessage::Welcome { snapshot, .. } => {
                if let Some(view) = snapshot {
                    self.view = view.clone();
                }
                ClientAction::None
            }
            ServerMessage::Event { seq, delta } => match self.view.apply(*seq, delta) {
                Ok(FoldOutcome::Applied) => ClientAction::None,
                Ok(FoldOutcome::Duplicate) => {
                    self.duplicates += 1;
                    ClientAction::None
                }
                Err(FoldError::Gap { .. }) | Err(FoldError::Unknown { .. }) => {
                    ClientAction::Resubscribe {
                        from_seq: self.view.last_seq,
                    }
                }
            },
            ServerMessage::Reject {
                command_ref,
                error_code,
                ..
            } => ClientAction::Rejected {
                command_ref: command_ref.clone(),
                error_code: error_code.clone(),
            },
            ServerMessage::Pong => ClientAction::None,
        }
    }
}
