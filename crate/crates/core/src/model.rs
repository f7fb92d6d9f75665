//! Domain model: transcript bubbles, annotations and the expiry policy.
//!
//! Everything here is a pure state transition over plain values. Ordering,
//! sequence numbers and wall-clock stamps are supplied by the session engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default time a finalized, never-interacted bubble stays visible.
pub const DEFAULT_TTL_SECONDS: f64 = 180.0;

/// Opaque per-connection credential. All speaker and author attribution
/// keys off this value.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserToken(String);

impl UserToken {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserToken {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

macro_rules! numeric_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

numeric_id!(
    /// Identifier of a transcript bubble, unique within a session.
    BubbleId
);
numeric_id!(
    /// Identifier of an annotation, unique within a session.
    AnnotationId
);

/// A joined participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub token: UserToken,
    pub display_name: String,
    /// Join order within the session. Public handle used on the wire in
    /// place of the bearer token.
    pub number: u32,
    pub present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleState {
    Interim,
    Finalized,
    Hidden,
}

/// One entry in a bubble's append-only text history. Revision 0 is the
/// as-transcribed text; later revisions come from edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub editor: UserToken,
    pub text: String,
    pub seq: u64,
}

/// One utterance by one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptBubble {
    pub bubble_id: BubbleId,
    pub speaker: UserToken,
    pub state: BubbleState,
    pub text: String,
    /// Empty while interim; revision 0 is written at finalization.
    pub revisions: Vec<Revision>,
    pub t_start: f64,
    pub t_end: Option<f64>,
    /// Session clock reading when the bubble was first created.
    pub created_at: f64,
    pub finalized_at: Option<f64>,
    pub ever_interacted: bool,
    /// Live (not removed) annotations on this bubble.
    pub annotations: BTreeSet<AnnotationId>,
    pub like_count: u32,
    pub tag_counts: BTreeMap<String, u32>,
}

impl TranscriptBubble {
    pub fn interim(
        bubble_id: BubbleId,
        speaker: UserToken,
        text: impl Into<String>,
        t_start: f64,
        created_at: f64,
    ) -> Self {
        Self {
            bubble_id,
            speaker,
            state: BubbleState::Interim,
            text: text.into(),
            revisions: Vec::new(),
            t_start,
            t_end: None,
            created_at,
            finalized_at: None,
            ever_interacted: false,
            annotations: BTreeSet::new(),
            like_count: 0,
            tag_counts: BTreeMap::new(),
        }
    }

    pub fn is_visible(&self) -> bool {
        self.state != BubbleState::Hidden
    }

    /// Number of characters (Unicode scalar values) in the current text.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// The as-transcribed text: revision 0 once finalized, the live interim
    /// text before that.
    pub fn spoken_text(&self) -> &str {
        self.revisions
            .first()
            .map(|r| r.text.as_str())
            .unwrap_or(&self.text)
    }

    pub fn update_interim(&mut self, text: impl Into<String>) -> Result<(), ModelError> {
        if self.state != BubbleState::Interim {
            return Err(ModelError::NotInterim(self.bubble_id));
        }
        self.text = text.into();
        Ok(())
    }

    /// Interim -> Finalized. Starts the expiry clock at `finalized_at`.
    pub fn finalize(
        &mut self,
        text: impl Into<String>,
        t_end: f64,
        seq: u64,
        finalized_at: f64,
    ) -> Result<(), ModelError> {
        if self.state != BubbleState::Interim {
            return Err(ModelError::NotInterim(self.bubble_id));
        }
        check_times(self.t_start, t_end)?;
        let text = text.into();
        self.revisions.push(Revision {
            editor: self.speaker.clone(),
            text: text.clone(),
            seq,
        });
        self.text = text;
        self.t_end = Some(t_end);
        self.finalized_at = Some(finalized_at);
        self.state = BubbleState::Finalized;
        Ok(())
    }

    pub fn is_expirable(&self, now: f64, policy: &ExpiryPolicy) -> bool {
        match (self.state, self.finalized_at) {
            (BubbleState::Finalized, Some(at)) => {
                !self.ever_interacted && now - at >= policy.ttl_seconds
            }
            _ => false,
        }
    }
}

pub fn check_times(t_start: f64, t_end: f64) -> Result<(), ModelError> {
    if !t_start.is_finite() || !t_end.is_finite() || t_start < 0.0 || t_start > t_end {
        return Err(ModelError::InvalidTimes { t_start, t_end });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightColor {
    Yellow,
    Green,
    Blue,
    Pink,
}

impl HighlightColor {
    pub const ALL: [HighlightColor; 4] = [Self::Yellow, Self::Green, Self::Blue, Self::Pink];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Private,
}

/// Half-open character range `[start, end)` over a bubble's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationKind {
    Like,
    Highlight { color: HighlightColor, range: CharRange },
    Tag { label: String },
    Comment { text: String, visibility: Visibility },
    Edit { new_text: String },
}

impl AnnotationKind {
    pub fn interaction(&self) -> InteractionKind {
        match self {
            Self::Like => InteractionKind::Like,
            Self::Highlight { .. } => InteractionKind::Highlight,
            Self::Tag { .. } => InteractionKind::Tag,
            Self::Comment { .. } => InteractionKind::Comment,
            Self::Edit { .. } => InteractionKind::Edit,
        }
    }

    pub fn is_private(&self) -> bool {
        matches!(
            self,
            Self::Comment {
                visibility: Visibility::Private,
                ..
            }
        )
    }
}

/// The five transcript-based interactions, declared in tie-break
/// precedence order (earlier wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Like,
    Highlight,
    Comment,
    Tag,
    Edit,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 5] = [
        Self::Like,
        Self::Highlight,
        Self::Comment,
        Self::Tag,
        Self::Edit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Like => "like",
            Self::Highlight => "highlight",
            Self::Comment => "comment",
            Self::Tag => "tag",
            Self::Edit => "edit",
        }
    }
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InteractionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown interaction kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: AnnotationId,
    pub bubble_id: BubbleId,
    pub author: UserToken,
    pub kind: AnnotationKind,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpiryPolicy {
    pub ttl_seconds: f64,
}

impl ExpiryPolicy {
    pub fn new(ttl_seconds: f64) -> Result<Self, ModelError> {
        if !(ttl_seconds.is_finite() && ttl_seconds > 0.0) {
            return Err(ModelError::InvalidTtl(ttl_seconds));
        }
        Ok(Self { ttl_seconds })
    }
}

impl Default for ExpiryPolicy {
    fn default() -> Self {
        Self {
            ttl_seconds: DEFAULT_TTL_SECONDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown bubble {0}")]
    UnknownBubble(BubbleId),
    #[error("bubble {0} is hidden")]
    HiddenBubble(BubbleId),
    #[error("character range [{start}, {end}) is invalid for text of length {len}")]
    InvalidRange { start: usize, end: usize, len: usize },
    #[error("tag label is empty")]
    EmptyTagLabel,
    #[error("comment text is empty")]
    EmptyComment,
    #[error("bubble {0} is still interim and cannot be edited")]
    EditOnInterim(BubbleId),
    #[error("bubble {0} is no longer interim")]
    NotInterim(BubbleId),
    #[error("invalid utterance times [{t_start}, {t_end}]")]
    InvalidTimes { t_start: f64, t_end: f64 },
    #[error("annotation {0} is an edit; edits are permanent")]
    EditNotRemovable(AnnotationId),
    #[error("annotation {0} belongs to another author")]
    NotAuthor(AnnotationId),
    #[error("ttl must be a positive number of seconds, got {0}")]
    InvalidTtl(f64),
}

impl ModelError {
    /// Stable machine-readable code used in protocol rejections.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownBubble(_) => "unknown_bubble",
            Self::HiddenBubble(_) => "hidden_bubble",
            Self::InvalidRange { .. } => "invalid_range",
            Self::EmptyTagLabel => "empty_tag_label",
            Self::EmptyComment => "empty_comment",
            Self::EditOnInterim(_) => "edit_on_interim",
            Self::NotInterim(_) => "not_interim",
            Self::InvalidTimes { .. } => "invalid_times",
            Self::EditNotRemovable(_) => "edit_not_removable",
            Self::NotAuthor(_) => "not_author",
            Self::InvalidTtl(_) => "invalid_ttl",
        }
    }
}

/// Checks every precondition of [`apply_annotation`] without mutating.
pub fn validate_annotation(bubble: &TranscriptBubble, ann: &Annotation) -> Result<(), ModelError> {
    if bubble.bubble_id != ann.bubble_id {
        return Err(ModelError::UnknownBubble(ann.bubble_id));
    }
    if bubble.state == BubbleState::Hidden {
        return Err(ModelError::HiddenBubble(bubble.bubble_id));
    }
    match &ann.kind {
        AnnotationKind::Like => {}
        AnnotationKind::Highlight { range, .. } => {
            let len = bubble.char_len();
            if range.start >= range.end || range.end > len {
                return Err(ModelError::InvalidRange {
                    start: range.start,
                    end: range.end,
                    len,
                });
            }
        }
        AnnotationKind::Tag { label } => {
            if label.trim().is_empty() {
                return Err(ModelError::EmptyTagLabel);
            }
        }
        AnnotationKind::Comment { text, .. } => {
            if text.trim().is_empty() {
                return Err(ModelError::EmptyComment);
            }
        }
        AnnotationKind::Edit { .. } => {
            if bubble.state == BubbleState::Interim {
                return Err(ModelError::EditOnInterim(bubble.bubble_id));
            }
        }
    }
    Ok(())
}

/// Records `ann` on `bubble` and pins it against expiry. The bubble is left
/// untouched when an error is returned.
pub fn apply_annotation(bubble: &mut TranscriptBubble, ann: &Annotation) -> Result<(), ModelError> {
    validate_annotation(bubble, ann)?;
    match &ann.kind {
        AnnotationKind::Like => bubble.like_count += 1,
        AnnotationKind::Tag { label } => *bubble.tag_counts.entry(label.clone()).or_default() += 1,
        AnnotationKind::Edit { new_text } => {
            bubble.revisions.push(Revision {
                editor: ann.author.clone(),
                text: new_text.clone(),
                seq: ann.seq,
            });
            bubble.text = new_text.clone();
        }
        AnnotationKind::Highlight { .. } | AnnotationKind::Comment { .. } => {}
    }
    bubble.annotations.insert(ann.annotation_id);
    bubble.ever_interacted = true;
    Ok(())
}

pub fn validate_removal(
    bubble: &TranscriptBubble,
    ann: &Annotation,
    by: &UserToken,
) -> Result<(), ModelError> {
    if ann.author != *by {
        return Err(ModelError::NotAuthor(ann.annotation_id));
    }
    if matches!(ann.kind, AnnotationKind::Edit { .. }) {
        return Err(ModelError::EditNotRemovable(ann.annotation_id));
    }
    if !bubble.annotations.contains(&ann.annotation_id) {
        return Err(ModelError::UnknownBubble(ann.bubble_id));
    }
    Ok(())
}

/// Removes a previously applied annotation. `ever_interacted` is left set:
/// pinning is permanent.
pub fn remove_annotation(
    bubble: &mut TranscriptBubble,
    ann: &Annotation,
    by: &UserToken,
) -> Result<(), ModelError> {
    validate_removal(bubble, ann, by)?;
    match &ann.kind {
        AnnotationKind::Like => bubble.like_count = bubble.like_count.saturating_sub(1),
        AnnotationKind::Tag { label } => {
            if let Some(count) = bubble.tag_counts.get_mut(label) {
                *count -= 1;
                if *count == 0 {
                    bubble.tag_counts.remove(label);
                }
            }
        }
        _ => {}
    }
    bubble.annotations.remove(&ann.annotation_id);
    Ok(())
}

/// Hides every finalized, never-interacted bubble whose expiry window has
/// elapsed at `now`. Returns the ids hidden by this call, in iteration order.
pub fn sweep_expiry<'a, I>(bubbles: I, now: f64, policy: &ExpiryPolicy) -> Vec<BubbleId>
where
    I: IntoIterator<Item = &'a mut TranscriptBubble>,
{
    bubbles
        .into_iter()
        .filter(|b| b.is_expirable(now, policy))
        .map(|b| {
            b.state = BubbleState::Hidden;
            b.bubble_id
        })
        .collect()
}
