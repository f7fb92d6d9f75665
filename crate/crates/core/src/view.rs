//! Viewer-specific projections of session state.
//!
//! What a given viewer may see: bearer tokens are replaced by participant
//! numbers, authors of edits/tags/highlights/likes are anonymous, and other
//! people's private comments never appear. [`ViewerView::apply`] is the
//! client-side fold; applying the projected deltas in order to a projected
//! snapshot reproduces [`ViewerView::project`] of the live state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{creation_order, Change, Delta, SessionId, SessionState};
use crate::model::{
    Annotation, AnnotationId, AnnotationKind, BubbleId, BubbleState, Participant,
    TranscriptBubble, UserToken,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub number: u32,
    pub display_name: String,
    pub present: bool,
}

impl From<&Participant> for ParticipantView {
    fn from(p: &Participant) -> Self {
        Self {
            number: p.number,
            display_name: p.display_name.clone(),
            present: p.present,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorView {
    pub number: u32,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationView {
    pub annotation_id: AnnotationId,
    pub bubble_id: BubbleId,
    pub seq: u64,
    pub kind: AnnotationKind,
    /// Present for comments only; every other kind is anonymous.
    pub author: Option<AuthorView>,
    pub own: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionView {
    pub text: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleView {
    pub bubble_id: BubbleId,
    pub speaker: u32,
    pub speaker_name: String,
    pub own: bool,
    pub state: BubbleState,
    pub text: String,
    pub revisions: Vec<RevisionView>,
    pub t_start: f64,
    pub t_end: Option<f64>,
    pub created_at: f64,
    pub finalized_at: Option<f64>,
    pub ever_interacted: bool,
    pub like_count: u32,
    pub tag_counts: BTreeMap<String, u32>,
    pub annotations: Vec<AnnotationView>,
}

impl BubbleView {
    pub fn hidden(&self) -> bool {
        self.state == BubbleState::Hidden
    }
}

/// One event as delivered to one viewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ViewerDelta {
    ParticipantJoined {
        participant: ParticipantView,
    },
    ParticipantLeft {
        number: u32,
    },
    InterimUpdate {
        bubble_id: BubbleId,
        speaker: u32,
        speaker_name: String,
        own: bool,
        text: String,
        t_start: f64,
        created_at: f64,
    },
    UtteranceFinalized {
        bubble_id: BubbleId,
        speaker: u32,
        speaker_name: String,
        own: bool,
        text: String,
        t_start: f64,
        t_end: f64,
        created_at: f64,
        finalized_at: f64,
    },
    AnnotationApplied {
        annotation: AnnotationView,
    },
    AnnotationRemoved {
        annotation_id: AnnotationId,
        bubble_id: BubbleId,
    },
    /// Someone else's private comment landed on this bubble. Only the pin
    /// is observable.
    BubblePinned {
        bubble_id: BubbleId,
    },
    BubblesHidden {
        bubble_ids: Vec<BubbleId>,
    },
    /// An event with no effect visible to this viewer.
    Noop,
}

pub(crate) fn visible_to(ann: &Annotation, viewer: Option<&UserToken>) -> bool {
    !ann.kind.is_private() || viewer == Some(&ann.author)
}

fn annotation_view(
    ann: &Annotation,
    author: &AuthorView,
    viewer: Option<&UserToken>,
) -> AnnotationView {
    AnnotationView {
        annotation_id: ann.annotation_id,
        bubble_id: ann.bubble_id,
        seq: ann.seq,
        kind: ann.kind.clone(),
        author: matches!(ann.kind, AnnotationKind::Comment { .. }).then(|| author.clone()),
        own: viewer == Some(&ann.author),
    }
}

impl ViewerDelta {
    /// Projects a delta for `viewer`; `None` is an anonymous observer.
    pub fn project(delta: &Delta, viewer: Option<&UserToken>) -> Self {
        match &delta.change {
            Change::ParticipantJoined { participant } => ViewerDelta::ParticipantJoined {
                participant: participant.into(),
            },
            Change::ParticipantLeft { number, .. } => {
                ViewerDelta::ParticipantLeft { number: *number }
            }
            Change::InterimUpdate {
                bubble_id,
                speaker,
                speaker_number,
                speaker_name,
                text,
                t_start,
                created_at,
            } => ViewerDelta::InterimUpdate {
                bubble_id: *bubble_id,
                speaker: *speaker_number,
                speaker_name: speaker_name.clone(),
                own: viewer == Some(speaker),
                text: text.clone(),
                t_start: *t_start,
                created_at: *created_at,
            },
            Change::UtteranceFinalized {
                bubble_id,
                speaker,
                speaker_number,
                speaker_name,
                text,
                t_start,
                t_end,
                created_at,
                finalized_at,
            } => ViewerDelta::UtteranceFinalized {
                bubble_id: *bubble_id,
                speaker: *speaker_number,
                speaker_name: speaker_name.clone(),
                own: viewer == Some(speaker),
                text: text.clone(),
                t_start: *t_start,
                t_end: *t_end,
                created_at: *created_at,
                finalized_at: *finalized_at,
            },
            Change::AnnotationApplied {
                annotation,
                author_number,
                author_name,
            } => {
                if visible_to(annotation, viewer) {
                    let author = AuthorView {
                        number: *author_number,
                        display_name: author_name.clone(),
                    };
                    ViewerDelta::AnnotationApplied {
                        annotation: annotation_view(annotation, &author, viewer),
                    }
                } else {
                    ViewerDelta::BubblePinned {
                        bubble_id: annotation.bubble_id,
                    }
                }
            }
            Change::AnnotationRemoved { annotation } => {
                if visible_to(annotation, viewer) {
                    ViewerDelta::AnnotationRemoved {
                        annotation_id: annotation.annotation_id,
                        bubble_id: annotation.bubble_id,
                    }
                } else {
                    ViewerDelta::Noop
                }
            }
            Change::BubblesHidden { bubble_ids } => ViewerDelta::BubblesHidden {
                bubble_ids: bubble_ids.clone(),
            },
        }
    }
}

/// Everything one viewer can see at `last_seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewerView {
    pub session_id: SessionId,
    pub last_seq: u64,
    pub participants: Vec<ParticipantView>,
    /// Ordered by bubble id; use [`ViewerView::ordered`] for display order.
    pub bubbles: Vec<BubbleView>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FoldOutcome {
    Applied,
    /// The seq was already applied; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error("expected seq {expected}, got {got}")]
    Gap { expected: u64, got: u64 },
    #[error("delta at seq {seq} references unknown {what}")]
    Unknown { seq: u64, what: String },
}

impl ViewerView {
    pub fn empty(session_id: SessionId) -> Self {
        Self {
            session_id,
            last_seq: 0,
            participants: Vec::new(),
            bubbles: Vec::new(),
        }
    }

    pub fn project(state: &SessionState, viewer: Option<&UserToken>) -> Self {
        let authors: BTreeMap<&UserToken, AuthorView> = state
            .participants
            .values()
            .map(|p| {
                (
                    &p.token,
                    AuthorView {
                        number: p.number,
                        display_name: p.display_name.clone(),
                    },
                )
            })
            .collect();
        let mut participants: Vec<ParticipantView> =
            state.participants.values().map(Into::into).collect();
        participants.sort_by_key(|p| p.number);
        let bubbles = state
            .bubbles
            .values()
            .map(|b| project_bubble(state, b, &authors, viewer))
            .collect();
        Self {
            session_id: state.session_id.clone(),
            last_seq: state.last_seq,
            participants,
            bubbles,
        }
    }

    pub fn bubble(&self, id: BubbleId) -> Option<&BubbleView> {
        self.bubbles
            .binary_search_by_key(&id, |b| b.bubble_id)
            .ok()
            .map(|i| &self.bubbles[i])
    }

    /// Bubbles in display order.
    pub fn ordered(&self) -> Vec<&BubbleView> {
        let mut v: Vec<_> = self.bubbles.iter().collect();
        v.sort_by(|a, b| creation_order(a.created_at, a.bubble_id, b.created_at, b.bubble_id));
        v
    }

    pub fn visible(&self) -> Vec<&BubbleView> {
        let mut v = self.ordered();
        v.retain(|b| !b.hidden());
        v
    }

    fn bubble_mut(&mut self, seq: u64, id: BubbleId) -> Result<&mut BubbleView, FoldError> {
        match self.bubbles.binary_search_by_key(&id, |b| b.bubble_id) {
            Ok(i) => Ok(&mut self.bubbles[i]),
            Err(_) => Err(FoldError::Unknown {
                seq,
                what: format!("bubble {id}"),
            }),
        }
    }

    fn bubble_entry(&mut self, id: BubbleId, make: impl FnOnce() -> BubbleView) -> &mut BubbleView {
        let i = match self.bubbles.binary_search_by_key(&id, |b| b.bubble_id) {
            Ok(i) => i,
            Err(i) => {
                self.bubbles.insert(i, make());
                i
            }
        };
        &mut self.bubbles[i]
    }

    /// Applies one projected delta. Already-seen seqs are ignored; a gap is
    /// an error and leaves the view untouched.
    pub fn apply(&mut self, seq: u64, delta: &ViewerDelta) -> Result<FoldOutcome, FoldError> {
        if seq <= self.last_seq {
            return Ok(FoldOutcome::Duplicate);
        }
        if seq != self.last_seq + 1 {
            return Err(FoldError::Gap {
                expected: self.last_seq + 1,
                got: seq,
            });
        }
        match delta {
            ViewerDelta::ParticipantJoined { participant } => {
                self.participants.push(participant.clone());
                self.participants.sort_by_key(|p| p.number);
            }
            ViewerDelta::ParticipantLeft { number } => {
                let p = self
                    .participants
                    .iter_mut()
                    .find(|p| p.number == *number)
                    .ok_or_else(|| FoldError::Unknown {
                        seq,
                        what: format!("participant {number}"),
                    })?;
                p.present = false;
            }
            ViewerDelta::InterimUpdate {
                bubble_id,
                speaker,
                speaker_name,
                own,
                text,
                t_start,
                created_at,
            } => {
                let b = self.bubble_entry(*bubble_id, || {
                    new_bubble(*bubble_id, *speaker, speaker_name, *own, *t_start, *created_at)
                });
                b.text = text.clone();
            }
            ViewerDelta::UtteranceFinalized {
                bubble_id,
                speaker,
                speaker_name,
                own,
                text,
                t_start,
                t_end,
                created_at,
                finalized_at,
            } => {
                let b = self.bubble_entry(*bubble_id, || {
                    new_bubble(*bubble_id, *speaker, speaker_name, *own, *t_start, *created_at)
                });
                b.text = text.clone();
                b.revisions.push(RevisionView {
                    text: text.clone(),
                    seq,
                });
                b.state = BubbleState::Finalized;
                b.t_end = Some(*t_end);
                b.finalized_at = Some(*finalized_at);
            }
            ViewerDelta::AnnotationApplied { annotation } => {
                let b = self.bubble_mut(seq, annotation.bubble_id)?;
                match &annotation.kind {
                    AnnotationKind::Like => b.like_count += 1,
                    AnnotationKind::Tag { label } => {
                        *b.tag_counts.entry(label.clone()).or_default() += 1
                    }
                    AnnotationKind::Edit { new_text } => {
                        b.text = new_text.clone();
                        b.revisions.push(RevisionView {
                            text: new_text.clone(),
                            seq,
                        });
                    }
                    _ => {}
                }
                b.ever_interacted = true;
                let pos = b
                    .annotations
                    .partition_point(|a| a.annotation_id < annotation.annotation_id);
                b.annotations.insert(pos, annotation.clone());
            }
            ViewerDelta::AnnotationRemoved {
                annotation_id,
                bubble_id,
            } => {
                let b = self.bubble_mut(seq, *bubble_id)?;
                let pos = b
                    .annotations
                    .iter()
                    .position(|a| a.annotation_id == *annotation_id)
                    .ok_or_else(|| FoldError::Unknown {
                        seq,
                        what: format!("annotation {annotation_id}"),
                    })?;
                let removed = b.annotations.remove(pos);
                match removed.kind {
                    AnnotationKind::Like => b.like_count = b.like_count.saturating_sub(1),
                    AnnotationKind::Tag { label } => {
                        if let Some(c) = b.tag_counts.get_mut(&label) {
                            *c -= 1;
                            if *c == 0 {
                                b.tag_counts.remove(&label);
                            }
                        }
                    }
                    _ => {}
                }
            }
            ViewerDelta::BubblePinned { bubble_id } => {
                self.bubble_mut(seq, *bubble_id)?.ever_interacted = true;
            }
            ViewerDelta::BubblesHidden { bubble_ids } => {
                for id in bubble_ids {
                    self.bubble_mut(seq, *id)?;
                }
                for id in bubble_ids {
                    self.bubble_mut(seq, *id)?.state = BubbleState::Hidden;
                }
            }
            ViewerDelta::Noop => {}
        }
        self.last_seq = seq;
        Ok(FoldOutcome::Applied)
    }
}

fn new_bubble(
    bubble_id: BubbleId,
    speaker: u32,
    speaker_name: &str,
    own: bool,
    t_start: f64,
    created_at: f64,
) -> BubbleView {
    BubbleView {
        bubble_id,
        speaker,
        speaker_name: speaker_name.to_string(),
        own,
        state: BubbleState::Interim,
        text: String::new(),
        revisions: Vec::new(),
        t_start,
        t_end: None,
        created_at,
        finalized_at: None,
        ever_interacted: false,
        like_count: 0,
        tag_counts: BTreeMap::new(),
        annotations: Vec::new(),
    }
}

fn project_bubble(
    state: &SessionState,
    b: &TranscriptBubble,
    authors: &BTreeMap<&UserToken, AuthorView>,
    viewer: Option<&UserToken>,
) -> BubbleView {
    let speaker = &authors[&b.speaker];
    let annotations = b
        .annotations
        .iter()
        .filter_map(|id| state.annotations.get(id))
        .filter(|a| visible_to(a, viewer))
        .map(|a| annotation_view(a, &authors[&a.author], viewer))
        .collect();
    BubbleView {
        bubble_id: b.bubble_id,
        speaker: speaker.number,
        speaker_name: speaker.display_name.clone(),
        own: viewer == Some(&b.speaker),
        state: b.state,
        text: b.text.clone(),
        revisions: b
            .revisions
            .iter()
            .map(|r| RevisionView {
                text: r.text.clone(),
                seq: r.seq,
            })
            .collect(),
        t_start: b.t_start,
        t_end: b.t_end,
        created_at: b.created_at,
        finalized_at: b.finalized_at,
        ever_interacted: b.ever_interacted,
        like_count: b.like_count,
        tag_counts: b.tag_counts.clone(),
        annotations,
    }
}
