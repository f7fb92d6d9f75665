//! Turns timed word streams into interim and finalized utterances.
//!
//! A speaker's utterance ends when the gap to their next word reaches the
//! silence threshold, when [`Segmenter::poll`] observes that much silence,
//! or on an explicit [`Segmenter::flush`]. Speakers never share an utterance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Pacer;
use crate::model::{BubbleId, UserToken};

pub const DEFAULT_SILENCE_THRESHOLD: f64 = 0.7;
pub const DEFAULT_INTERIM_EMIT_INTERVAL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedToken {
    pub speaker: UserToken,
    pub word: String,
    /// Seconds from session start.
    pub t: f64,
}

impl TimedToken {
    pub fn new(speaker: impl Into<UserToken>, word: impl Into<String>, t: f64) -> Self {
        Self {
            speaker: speaker.into(),
            word: word.into(),
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterConfig {
    pub silence_threshold: f64,
    pub interim_emit_interval: f64,
}

impl SegmenterConfig {
    pub fn new(silence_threshold: f64, interim_emit_interval: f64) -> Result<Self, IngestError> {
        for (name, v) in [
            ("silence_threshold", silence_threshold),
            ("interim_emit_interval", interim_emit_interval),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(IngestError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            silence_threshold,
            interim_emit_interval,
        })
    }
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            silence_threshold: DEFAULT_SILENCE_THRESHOLD,
            interim_emit_interval: DEFAULT_INTERIM_EMIT_INTERVAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SegmentEvent {
    Interim {
        bubble_id: BubbleId,
        speaker: UserToken,
        text: String,
        t_start: f64,
    },
    Finalized {
        bubble_id: BubbleId,
        speaker: UserToken,
        text: String,
        t_start: f64,
        t_end: f64,
    },
}

impl SegmentEvent {
    pub fn bubble_id(&self) -> BubbleId {
        match self {
            Self::Interim { bubble_id, .. } | Self::Finalized { bubble_id, .. } => *bubble_id,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Self::Interim { text, .. } | Self::Finalized { text, .. } => text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("token for {speaker} at {t}s is earlier than their previous token at {last}s")]
    OutOfOrderToken {
        speaker: UserToken,
        t: f64,
        last: f64,
    },
    #[error("invalid word {0:?}: words must be non-empty and contain no whitespace")]
    InvalidWord(String),
    #[error("invalid timestamp {0}")]
    InvalidTimestamp(f64),
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
struct OpenUtterance {
    bubble_id: BubbleId,
    words: Vec<String>,
    t_start: f64,
    t_last: f64,
    last_interim_at: f64,
}

impl OpenUtterance {
    fn text(&self) -> String {
        self.words.join(" ")
    }

    fn finalize(self, speaker: UserToken) -> SegmentEvent {
        SegmentEvent::Finalized {
            bubble_id: self.bubble_id,
            speaker,
            text: self.text(),
            t_start: self.t_start,
            t_end: self.t_last,
        }
    }
}

/// Per-session segmenter. Single-threaded by contract; feed it from one
/// ordered queue.
#[derive(Debug, Clone)]
pub struct Segmenter {
    config: SegmenterConfig,
    open: BTreeMap<UserToken, OpenUtterance>,
    last_seen: BTreeMap<UserToken, f64>,
    next_bubble: u64,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Self {
        Self::with_next_bubble(config, BubbleId(1))
    }

    /// Starts bubble numbering at `next`, e.g. after recovering a session
    /// that already holds bubbles.
    pub fn with_next_bubble(config: SegmenterConfig, next: BubbleId) -> Self {
        Self {
            config,
            open: BTreeMap::new(),
            last_seen: BTreeMap::new(),
            next_bubble: next.0.max(1),
        }
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn has_open(&self, speaker: &UserToken) -> bool {
        self.open.contains_key(speaker)
    }

    pub fn feed(&mut self, token: TimedToken) -> Result<Vec<SegmentEvent>, IngestError> {
        if token.word.is_empty() || token.word.chars().any(char::is_whitespace) {
            return Err(IngestError::InvalidWord(token.word));
        }
        if !token.t.is_finite() || token.t < 0.0 {
            return Err(IngestError::InvalidTimestamp(token.t));
        }
        if let Some(&last) = self.last_seen.get(&token.speaker) {
            if token.t < last {
                return Err(IngestError::OutOfOrderToken {
                    speaker: token.speaker,
                    t: token.t,
                    last,
                });
            }
        }
        self.last_seen.insert(token.speaker.clone(), token.t);

        let mut out = Vec::new();
        let gap_closed = self
            .open
            .get(&token.speaker)
            .is_some_and(|u| token.t - u.t_last >= self.config.silence_threshold);
        if gap_closed {
            if let Some(u) = self.open.remove(&token.speaker) {
                out.push(u.finalize(token.speaker.clone()));
            }
        }

        match self.open.get_mut(&token.speaker) {
            Some(u) => {
                u.words.push(token.word);
                u.t_last = token.t;
                if token.t - u.last_interim_at >= self.config.interim_emit_interval {
                    u.last_interim_at = token.t;
                    out.push(SegmentEvent::Interim {
                        bubble_id: u.bubble_id,
                        speaker: token.speaker,
                        text: u.text(),
                        t_start: u.t_start,
                    });
                }
            }
            None => {
                let bubble_id = BubbleId(self.next_bubble);
                self.next_bubble += 1;
                out.push(SegmentEvent::Interim {
                    bubble_id,
                    speaker: token.speaker.clone(),
                    text: token.word.clone(),
                    t_start: token.t,
                });
                self.open.insert(
                    token.speaker,
                    OpenUtterance {
                        bubble_id,
                        words: vec![token.word],
                        t_start: token.t,
                        t_last: token.t,
                        last_interim_at: token.t,
                    },
                );
            }
        }
        Ok(out)
    }

    /// Finalizes every open utterance that has been silent for at least the
    /// threshold as of `now` (seconds from session start).
    pub fn poll(&mut self, now: f64) -> Vec<SegmentEvent> {
        let due: Vec<UserToken> = self
            .open
            .iter()
            .filter(|(_, u)| now - u.t_last >= self.config.silence_threshold)
            .map(|(s, _)| s.clone())
            .collect();
        due.into_iter().filter_map(|s| self.flush(&s)).collect()
    }

    pub fn flush(&mut self, speaker: &UserToken) -> Option<SegmentEvent> {
        self.open
            .remove(speaker)
            .map(|u| u.finalize(speaker.clone()))
    }

    pub fn flush_all(&mut self) -> Vec<SegmentEvent> {
        std::mem::take(&mut self.open)
            .into_iter()
            .map(|(s, u)| u.finalize(s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

/// Parses a replay script: `speaker<TAB>seconds<TAB>word` per line, with
/// blank lines and `#` comments ignored.
pub fn parse_script(input: &str) -> Result<Vec<TimedToken>, ParseError> {
    let mut tokens = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| ParseError { line, reason };
        let mut fields = raw.trim_end_matches('\r').split('\t');
        let (Some(speaker), Some(t), Some(word), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(err("expected 3 tab-separated fields".into()));
        };
        if speaker.is_empty() {
            return Err(err("empty speaker token".into()));
        }
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| err(format!("malformed timestamp {t:?}")))?;
        if !t.is_finite() || t < 0.0 {
            return Err(err(format!("timestamp out of range: {t}")));
        }
        let word = word.trim();
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(err(format!("invalid word {word:?}")));
        }
        tokens.push(TimedToken::new(speaker, word, t));
    }
    Ok(tokens)
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A transcription source that replays a recorded script. Stands in for a
/// live recognizer; any `Iterator<Item = TimedToken>` can be fed the same way.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    tokens: std::vec::IntoIter<TimedToken>,
}

impl ReplaySource {
    pub fn from_script(input: &str) -> Result<Self, ParseError> {
        Ok(Self {
            tokens: parse_script(input)?.into_iter(),
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SourceError> {
        let path = path.as_ref();
        let input = fs::read_to_string(path).map_err(|source| SourceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_script(&input)?)
    }

    /// Emits each token once `pacer` reaches `origin + token.t`.
    pub fn paced<P: Pacer>(self, pacer: P, origin: f64) -> Paced<P> {
        Paced {
            inner: self,
            pacer,
            origin,
        }
    }
}

impl Iterator for ReplaySource {
    type Item = TimedToken;

    fn next(&mut self) -> Option<TimedToken> {
        self.tokens.next()
    }
}

pub struct Paced<P> {
    inner: ReplaySource,
    pacer: P,
    origin: f64,
}

impl<P: Pacer> Iterator for Paced<P> {
    type Item = TimedToken;

    fn next(&mut self) -> Option<TimedToken> {
        let token = self.inner.next()?;
        self.pacer.wait_until(self.origin + token.t);
        Some(token)
    }
}
