//! Navigation aids and post-meeting participation analytics.
//!
//! The heatmap and history queries work on live [`SessionState`]; the
//! metrics, usage and slice analyses work on event logs and never need the
//! session to be running.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{EventPayload, SessionEvent, SessionState};
use crate::model::{AnnotationKind, BubbleId, InteractionKind, UserToken};
use crate::view::{visible_to, AnnotationView};

/// Annotation count at which heatmap colour saturates.
pub const DEPTH_CAP: u32 = 8;
pub const DEFAULT_SLICES: usize = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("heatmap cell {index} is out of range (grid has {len} cells)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corrupt record {seq}: {reason}")]
    CorruptRecord { seq: u64, reason: String },
    #[error("session has no duration to slice")]
    EmptySession,
    #[error("slice count must be at least 1")]
    InvalidSliceCount,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub bubble_id: BubbleId,
    /// Height proxy: characters in the bubble's current text (at least 1).
    pub extent: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HeatmapGrid {
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Maps a clicked cell back to its bubble.
    pub fn resolve_click(&self, index: usize) -> Result<BubbleId, AnalyticsError> {
        self.cells
            .get(index)
            .map(|c| c.bubble_id)
            .ok_or(AnalyticsError::IndexOutOfRange {
                index,
                len: self.cells.len(),
            })
    }

    pub fn total_extent(&self) -> u64 {
        self.cells.iter().map(|c| u64::from(c.extent)).sum()
    }
}

/// One cell per visible bubble, in display order.
pub fn compute_heatmap(state: &SessionState) -> HeatmapGrid {
    let cells = state
        .visible_bubbles()
        .into_iter()
        .map(|b| HeatmapCell {
            bubble_id: b.bubble_id,
            extent: b.char_len().max(1) as u32,
            depth: (b.annotations.len() as u32).min(DEPTH_CAP),
        })
        .collect();
    HeatmapGrid { cells }
}

pub fn resolve_grid_click(grid: &HeatmapGrid, cell_index: usize) -> Result<BubbleId, AnalyticsError> {
    grid.resolve_click(cell_index)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryFilter {
    pub by_kind: Option<InteractionKind>,
    pub by_tag_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryItem {
    pub seq: u64,
    pub bubble_id: BubbleId,
    pub bubble_text: String,
    /// The viewer's own annotation, or `None` for a tag-label match, which
    /// is content-based and does not reveal who tagged the bubble.
    pub annotation: Option<AnnotationView>,
}

/// The viewer's interaction history.
///
/// Without a tag label this lists the viewer's own live annotations
/// (optionally of one kind). With a tag label it lists every bubble that
/// carries that exact label, whoever applied it, ordered by the first
/// application; combined with a kind it lists the viewer's annotations of
/// that kind on such bubbles.
pub fn query_history(
    state: &SessionState,
    viewer: &UserToken,
    filter: &HistoryFilter,
) -> Vec<HistoryItem> {
    let text_of = |id: BubbleId| {
        state
            .bubbles
            .get(&id)
            .map(|b| b.text.clone())
            .unwrap_or_default()
    };
    let own_items = |pred: &dyn Fn(&crate::model::Annotation) -> bool| -> Vec<HistoryItem> {
        state
            .annotations
            .values()
            .filter(|a| a.author == *viewer && pred(a))
            .map(|a| HistoryItem {
                seq: a.seq,
                bubble_id: a.bubble_id,
                bubble_text: text_of(a.bubble_id),
                annotation: Some(own_view(state, a)),
            })
            .collect()
    };
    let kind_ok = |a: &crate::model::Annotation| {
        filter
            .by_kind
            .is_none_or(|k| a.kind.interaction() == k)
    };

    let mut items = match &filter.by_tag_label {
        None => own_items(&kind_ok),
        Some(label) => {
            let tagged: BTreeMap<BubbleId, u64> = state
                .annotations
                .values()
                .filter_map(|a| match &a.kind {
                    AnnotationKind::Tag { label: l } if l == label => Some((a.bubble_id, a.seq)),
                    _ => None,
                })
                .fold(BTreeMap::new(), |mut m, (b, seq)| {
                    m.entry(b)
                        .and_modify(|s: &mut u64| *s = (*s).min(seq))
                        .or_insert(seq);
                    m
                });
            match filter.by_kind {
                None => tagged
                    .into_iter()
                    .map(|(bubble_id, seq)| HistoryItem {
                        seq,
                        bubble_id,
                        bubble_text: text_of(bubble_id),
                        annotation: None,
                    })
                    .collect(),
                Some(_) => own_items(&|a| kind_ok(a) && tagged.contains_key(&a.bubble_id)),
            }
        }
    };
    items.sort_by_key(|i| (i.seq, i.bubble_id));
    items
}

fn own_view(state: &SessionState, a: &crate::model::Annotation) -> AnnotationView {
    debug_assert!(visible_to(a, Some(&a.author)));
    let p = &state.participants[&a.author];
    AnnotationView {
        annotation_id: a.annotation_id,
        bubble_id: a.bubble_id,
        seq: a.seq,
        kind: a.kind.clone(),
        author: matches!(a.kind, AnnotationKind::Comment { .. }).then(|| crate::view::AuthorView {
            number: p.number,
            display_name: p.display_name.clone(),
        }),
        own: true,
    }
}

fn check_contiguous(log: &[SessionEvent]) -> Result<(), AnalyticsError> {
    for (i, e) in log.iter().enumerate() {
        let expected = i as u64 + 1;
        if e.seq != expected {
            return Err(AnalyticsError::CorruptRecord {
                seq: expected,
                reason: format!("found seq {}", e.seq),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ParticipationMetrics {
    pub token: UserToken,
    pub display_name: String,
    pub verbal_turns: u64,
    pub time_spoken: f64,
    pub words_spoken: u64,
    pub transcript_interactions: u64,
    /// Equals `transcript_interactions`: other non-verbal channels (chat,
    /// reactions) are not part of this system.
    pub nonverbal_total: u64,
}

/// Per-participant verbal and non-verbal measures. Words come from the
/// as-transcribed text, so later edits do not change them.
pub fn participation_metrics(
    log: &[SessionEvent],
) -> Result<BTreeMap<UserToken, ParticipationMetrics>, AnalyticsError> {
    check_contiguous(log)?;
    let mut out: BTreeMap<UserToken, ParticipationMetrics> = BTreeMap::new();
    fn row<'a>(
        out: &'a mut BTreeMap<UserToken, ParticipationMetrics>,
        token: &UserToken,
    ) -> &'a mut ParticipationMetrics {
        out.entry(token.clone()).or_insert_with(|| ParticipationMetrics {
            token: token.clone(),
            ..Default::default()
        })
    }
    for e in log {
        match &e.payload {
            EventPayload::ParticipantJoined {
                token,
                display_name,
            } => row(&mut out, token).display_name = display_name.clone(),
            EventPayload::UtteranceFinalized {
                speaker,
                text,
                t_start,
                t_end,
                ..
            } => {
                let m = row(&mut out, speaker);
                m.verbal_turns += 1;
                m.time_spoken += t_end - t_start;
                m.words_spoken += text.split_whitespace().count() as u64;
            }
            EventPayload::AnnotationApplied { annotation } => {
                let m = row(&mut out, &annotation.author);
                m.transcript_interactions += 1;
                m.nonverbal_total += 1;
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageRow {
    pub kind: InteractionKind,
    pub count: u64,
    /// Share of all transcript-based interactions, 0..=100.
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageBreakdown {
    pub rows: Vec<UsageRow>,
    pub total: u64,
}

impl UsageBreakdown {
    pub fn count(&self, kind: InteractionKind) -> u64 {
        self.rows
            .iter()
            .find(|r| r.kind == kind)
            .map_or(0, |r| r.count)
    }

    pub fn percentage(&self, kind: InteractionKind) -> f64 {
        self.rows
            .iter()
            .find(|r| r.kind == kind)
            .map_or(0.0, |r| r.percentage)
    }
}

pub fn usage_breakdown(log: &[SessionEvent]) -> UsageBreakdown {
    let mut counts: BTreeMap<InteractionKind, u64> =
        InteractionKind::ALL.iter().map(|k| (*k, 0)).collect();
    for e in log {
        if let EventPayload::AnnotationApplied { annotation } = &e.payload {
            *counts.entry(annotation.kind.interaction()).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    let rows = InteractionKind::ALL
        .iter()
        .map(|k| {
            let count = counts[k];
            UsageRow {
                kind: *k,
                count,
                percentage: if total == 0 {
                    0.0
                } else {
                    count as f64 * 100.0 / total as f64
                },
            }
        })
        .collect();
    UsageBreakdown { rows, total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub dominant: Option<InteractionKind>,
    pub dominant_count: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceTimeline {
    pub n_slices: usize,
    pub start: f64,
    pub end: f64,
    pub slices: Vec<Slice>,
}

impl SliceTimeline {
    pub fn dominants(&self) -> Vec<Option<InteractionKind>> {
        self.slices.iter().map(|s| s.dominant).collect()
    }
}

/// Lower bound of slice `i` when `[start, end]` is cut into `n` equal parts.
fn slice_lower(start: f64, end: f64, n: usize, i: usize) -> f64 {
    if i >= n {
        end
    } else {
        start + (end - start) * i as f64 / n as f64
    }
}

/// Index of the slice containing `t`: slice `i` covers
/// `[lower(i), lower(i+1))`, and the last slice also includes `end`.
fn slice_index(t: f64, start: f64, end: f64, n: usize) -> usize {
    let mut i = (((t - start) / (end - start)) * n as f64).floor().max(0.0) as usize;
    i = i.min(n - 1);
    while i > 0 && t < slice_lower(start, end, n, i) {
        i -= 1;
    }
    while i + 1 < n && t >= slice_lower(start, end, n, i + 1) {
        i += 1;
    }
    i
}

/// Most frequent interaction kind per equal-duration slice of the session.
/// The session spans the first to the last event's wall time; ties go to
/// the earlier kind in [`InteractionKind::ALL`].
pub fn slice_timeline(log: &[SessionEvent], n_slices: usize) -> Result<SliceTimeline, AnalyticsError> {
    if n_slices == 0 {
        return Err(AnalyticsError::InvalidSliceCount);
    }
    check_contiguous(log)?;
    let (start, end) = match (log.first(), log.last()) {
        (Some(first), Some(last)) => (first.wall_time, last.wall_time),
        _ => return Err(AnalyticsError::EmptySession),
    };
    if start.is_nan() || end.is_nan() || end <= start {
        return Err(AnalyticsError::EmptySession);
    }
    let mut counts = vec![[0u64; 5]; n_slices];
    for e in log {
        if let EventPayload::AnnotationApplied { annotation } = &e.payload {
            let i = slice_index(e.wall_time, start, end, n_slices);
            counts[i][annotation.kind.interaction() as usize] += 1;
        }
    }
    let slices = counts
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let total = c.iter().sum();
            // strict > keeps the earliest kind on ties
            let mut best: Option<(InteractionKind, u64)> = None;
            for kind in InteractionKind::ALL {
                let n = c[kind as usize];
                if n > 0 && best.is_none_or(|(_, b)| n > b) {
                    best = Some((kind, n));
                }
            }
            Slice {
                index,
                start: slice_lower(start, end, n_slices, index),
                end: slice_lower(start, end, n_slices, index + 1),
                dominant: best.map(|(k, _)| k),
                dominant_count: best.map_or(0, |(_, n)| n),
                total,
            }
        })
        .collect();
    Ok(SliceTimeline {
        n_slices,
        start,
        end,
        slices,
    })
}

pub fn write_metrics_csv<W: Write>(
    out: W,
    metrics: &BTreeMap<UserToken, ParticipationMetrics>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "token",
        "display_name",
        "verbal_turns",
        "time_spoken",
        "words_spoken",
        "transcript_interactions",
        "nonverbal_total",
    ])?;
    for m in metrics.values() {
        w.write_record([
            m.token.as_str().to_string(),
            m.display_name.clone(),
            m.verbal_turns.to_string(),
            format!("{:.3}", m.time_spoken),
            m.words_spoken.to_string(),
            m.transcript_interactions.to_string(),
            m.nonverbal_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_usage_csv<W: Write>(out: W, usage: &UsageBreakdown) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "count", "percentage"])?;
    for r in &usage.rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.count.to_string(),
            format!("{:.1}", r.percentage),
        ])?;
    }
    let total_pct = if usage.total == 0 { 0.0 } else { 100.0 };
    w.write_record(["total".to_string(), usage.total.to_string(), format!("{total_pct:.1}")])?;
    w.flush()?;
    Ok(())
}

pub fn write_slices_csv<W: Write>(out: W, timeline: &SliceTimeline) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slice", "start", "end", "dominant", "dominant_count", "total"])?;
    for s in &timeline.slices {
        w.write_record([
            s.index.to_string(),
            format!("{:.3}", s.start),
            format!("{:.3}", s.end),
            s.dominant.map_or("none", |k| k.as_str()).to_string(),
            s.dominant_count.to_string(),
            s.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
