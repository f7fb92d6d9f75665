//! Core of a real-time collaborative meeting transcript.
//!
//! Speech arrives as timed words, is segmented into one bubble per
//! utterance, and participants annotate bubbles (like, highlight, tag,
//! comment, edit). All state is the fold of a gap-free event log, which is
//! persisted as JSON Lines and analysed after the meeting.

pub mod analytics;
pub mod clock;
pub mod engine;
pub mod ingest;
pub mod model;
pub mod persistence;
pub mod protocol;
pub mod sim;
pub mod view;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use engine::{
    Applied, Command, Delta, Engine, EngineError, EventPayload, Session, SessionConfig,
    SessionEvent, SessionId, SessionSnapshot, SessionState, SCHEMA_VERSION,
};
pub use ingest::{SegmentEvent, Segmenter, SegmenterConfig, TimedToken};
pub use model::{
    Annotation, AnnotationId, AnnotationKind, BubbleId, BubbleState, CharRange, ExpiryPolicy,
    HighlightColor, InteractionKind, ModelError, TranscriptBubble, UserToken, Visibility,
};
pub use view::{ViewerDelta, ViewerView};
