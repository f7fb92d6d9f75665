//! Seeded generators for simulated meetings and protocol messages.
//!
//! Used by the test suites and benchmarks; everything is reproducible from
//! the seed.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

use crate::clock::{Clock, VirtualClock};
use crate::engine::{Command, Delta, Session, SessionConfig, SessionEvent, SessionId};
use crate::ingest::{Segmenter, SegmenterConfig, TimedToken};
use crate::model::{
    AnnotationId, AnnotationKind, BubbleId, BubbleState, CharRange, ExpiryPolicy, HighlightColor,
    UserToken, Visibility,
};
use crate::protocol::{ClientCommand, ClientMessage, ServerMessage};
use crate::view::{
    AnnotationView, AuthorView, BubbleView, ParticipantView, RevisionView, ViewerDelta, ViewerView,
};

const WORDS: &[&str] = &[
    "the", "lamp", "should", "dim", "smart", "light", "we", "agree", "café", "naïve", "budget",
    "sensor", "ok", "next", "sprint", "ship", "it", "déjà", "vu", "thanks", "question", "why",
    "motion", "battery", "🙂",
];

const TAGS: &[&str] = &["To-do", "Agreed Product", "Question", "to-do", "Idea"];

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub participants: usize,
    /// Stop once the log holds this many events.
    pub target_events: usize,
    pub ttl_seconds: f64,
    pub backlog_window: usize,
    pub segmenter: SegmenterConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            participants: 4,
            target_events: 500,
            ttl_seconds: 180.0,
            backlog_window: crate::engine::DEFAULT_BACKLOG_WINDOW,
            segmenter: SegmenterConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct SimOutcome {
    pub session: Session,
    pub clock: VirtualClock,
    pub events: Vec<SessionEvent>,
    pub deltas: Vec<Arc<Delta>>,
    pub rejections: usize,
    /// Text of every private comment, keyed by its author.
    pub private_texts: Vec<(UserToken, String)>,
}

impl SimOutcome {
    pub fn session_config(&self) -> SessionConfig {
        *self.session.config()
    }
}

struct Sim {
    rng: StdRng,
    session: Session,
    clock: VirtualClock,
    segmenter: Segmenter,
    origin: f64,
    active: Vec<UserToken>,
    joined: usize,
    events: Vec<SessionEvent>,
    deltas: Vec<Arc<Delta>>,
    rejections: usize,
    private_texts: Vec<(UserToken, String)>,
    counter: u64,
}

impl Sim {
    fn submit(&mut self, cmd: Command) {
        match self.session.submit(cmd) {
            Ok(applied) => {
                self.events.push(applied.event);
                self.deltas.push(applied.delta);
            }
            Err(_) => self.rejections += 1,
        }
    }

    fn join(&mut self) {
        self.joined += 1;
        let token = UserToken::new(format!("tok-{:04}-{}", self.joined, self.rng.random::<u32>()));
        let name = ["Amy", "Ben", "Chloé", "Dev", "Eli", "Fay"][self.joined % 6];
        self.submit(Command::Join {
            token: token.clone(),
            display_name: format!("{name} {}", self.joined),
        });
        self.active.push(token);
    }

    fn now(&self) -> f64 {
        self.clock.now()
    }

    fn speech_time(&self) -> f64 {
        self.now() - self.origin
    }

    fn speak(&mut self) {
        let speaker = self.active.choose(&mut self.rng).cloned().expect("participants");
        let n = self.rng.random_range(1..=4);
        for _ in 0..n {
            self.clock.advance(self.rng.random_range(0.05..0.45));
            let word = *WORDS.choose(&mut self.rng).unwrap();
            let token = TimedToken::new(speaker.clone(), word, self.speech_time());
            let out = self.segmenter.feed(token).expect("sim tokens are ordered");
            for e in out {
                self.submit(e.into());
            }
        }
    }

    fn advance(&mut self) {
        let dt = if self.rng.random_bool(0.08) {
            self.rng.random_range(150.0..260.0)
        } else {
            self.rng.random_range(0.2..8.0)
        };
        self.clock.advance(dt);
        for e in self.segmenter.poll(self.speech_time()) {
            self.submit(e.into());
        }
        let now = self.now();
        if let Some(applied) = self.session.tick(now) {
            self.events.push(applied.event);
            self.deltas.push(applied.delta);
        }
    }

    fn annotation_kind(&mut self, bubble_text: &str, finalized: bool, author: &UserToken) -> AnnotationKind {
        let len = bubble_text.chars().count();
        loop {
            let pick = self.rng.random_range(0..100);
            return match pick {
                0..=34 => AnnotationKind::Like,
                35..=59 if len > 0 => {
                    let start = self.rng.random_range(0..len);
                    let end = self.rng.random_range(start + 1..=len);
                    AnnotationKind::Highlight {
                        color: *HighlightColor::ALL.choose(&mut self.rng).unwrap(),
                        range: CharRange::new(start, end),
                    }
                }
                60..=74 => AnnotationKind::Tag {
                    label: TAGS.choose(&mut self.rng).unwrap().to_string(),
                },
                75..=89 => {
                    self.counter += 1;
                    let private = self.rng.random_bool(0.4);
                    let text = if private {
                        let t = format!("private note #{} by {}", self.counter, author);
                        self.private_texts.push((author.clone(), t.clone()));
                        t
                    } else {
                        format!("public remark #{}", self.counter)
                    };
                    AnnotationKind::Comment {
                        text,
                        visibility: if private {
                            Visibility::Private
                        } else {
                            Visibility::Public
                        },
                    }
                }
                90..=99 if finalized => {
                    let mut words: Vec<&str> = bubble_text.split(' ').collect();
                    let i = self.rng.random_range(0..words.len());
                    words[i] = WORDS.choose(&mut self.rng).unwrap();
                    AnnotationKind::Edit {
                        new_text: words.join(" "),
                    }
                }
                _ => continue,
            };
        }
    }

    fn annotate(&mut self) {
        let author = self.active.choose(&mut self.rng).cloned().expect("participants");
        let state = self.session.state();
        if state.bubbles.is_empty() {
            return;
        }
        // mostly recent, visible bubbles; occasionally anything
        let target = if self.rng.random_bool(0.9) {
            let visible: Vec<_> = state
                .visible_bubbles()
                .into_iter()
                .rev()
                .take(12)
                .map(|b| (b.bubble_id, b.text.clone(), b.state == BubbleState::Finalized))
                .collect();
            visible.choose(&mut self.rng).cloned()
        } else {
            let all: Vec<_> = state
                .bubbles
                .values()
                .map(|b| (b.bubble_id, b.text.clone(), b.state == BubbleState::Finalized))
                .collect();
            all.choose(&mut self.rng).cloned()
        };
        let Some((bubble_id, text, finalized)) = target else {
            return;
        };
        let kind = self.annotation_kind(&text, finalized, &author);
        self.submit(Command::Annotate {
            author,
            bubble_id,
            kind,
        });
    }

    fn remove(&mut self) {
        let state = self.session.state();
        let own: Vec<(UserToken, AnnotationId)> = state
            .annotations
            .values()
            .filter(|a| !matches!(a.kind, AnnotationKind::Edit { .. }))
            .filter(|a| self.active.contains(&a.author))
            .map(|a| (a.author.clone(), a.annotation_id))
            .collect();
        if let Some((author, annotation_id)) = own.choose(&mut self.rng).cloned() {
            self.submit(Command::RemoveAnnotation {
                author,
                annotation_id,
            });
        }
    }

    fn churn(&mut self) {
        if self.active.len() > 1 {
            let i = self.rng.random_range(0..self.active.len());
            let token = self.active.remove(i);
            if let Some(e) = self.segmenter.flush(&token) {
                self.submit(e.into());
            }
            self.submit(Command::Leave { token });
        }
        self.join();
    }

    fn garbage(&mut self) {
        let author = self.active.choose(&mut self.rng).cloned().expect("participants");
        let cmd = match self.rng.random_range(0..4) {
            0 => Command::Annotate {
                author,
                bubble_id: BubbleId(u64::MAX),
                kind: AnnotationKind::Like,
            },
            1 => Command::Annotate {
                author: UserToken::new("intruder"),
                bubble_id: BubbleId(1),
                kind: AnnotationKind::Like,
            },
            2 => Command::RemoveAnnotation {
                author,
                annotation_id: AnnotationId(self.rng.random_range(1..50)),
            },
            _ => Command::Annotate {
                author,
                bubble_id: BubbleId(1),
                kind: AnnotationKind::Tag { label: " ".into() },
            },
        };
        self.submit(cmd);
    }
}

/// Runs a randomized meeting: speakers talk through the segmenter while
/// everyone annotates, the clock jumps (sometimes past the expiry window),
/// participants occasionally leave and are replaced, and some invalid
/// commands are thrown in.
pub fn simulate(seed: u64, config: &SimConfig) -> SimOutcome {
    let clock = VirtualClock::new(1_000.0);
    let session_config = SessionConfig {
        policy: ExpiryPolicy::new(config.ttl_seconds).expect("valid ttl"),
        backlog_window: config.backlog_window,
    };
    let session = Session::new(
        SessionId::new(format!("sim-{seed}")),
        session_config,
        Arc::new(clock.clone()),
    );
    let origin = clock.now();
    let mut sim = Sim {
        rng: StdRng::seed_from_u64(seed),
        session,
        clock,
        segmenter: Segmenter::new(config.segmenter),
        origin,
        active: Vec::new(),
        joined: 0,
        events: Vec::new(),
        deltas: Vec::new(),
        rejections: 0,
        private_texts: Vec::new(),
        counter: 0,
    };
    for _ in 0..config.participants.max(1) {
        sim.join();
    }
    while sim.events.len() < config.target_events {
        match sim.rng.random_range(0..100) {
            0..=39 => sim.speak(),
            40..=54 => sim.advance(),
            55..=89 => sim.annotate(),
            90..=95 => sim.remove(),
            96 => sim.churn(),
            _ => sim.garbage(),
        }
    }
    SimOutcome {
        session: sim.session,
        clock: sim.clock,
        events: sim.events,
        deltas: sim.deltas,
        rejections: sim.rejections,
        private_texts: sim.private_texts,
    }
}

fn random_string(rng: &mut StdRng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'z', 'Q', '0', '9', ' ', '"', '\\', '/', '\n', '\t', '\u{0}', '\u{1f}', 'é', 'ß',
        '中', '🙂', '{', '}', '[', ':', ',',
    ];
    let n = rng.random_range(0..24);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn random_f64(rng: &mut StdRng) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => rng.random::<f64>(),
        2 => rng.random_range(0.0..100_000.0),
        3 => rng.random_range(-1e300..1e300),
        4 => f64::from_bits(rng.random::<u64>() & 0x7fef_ffff_ffff_ffff),
        _ => rng.random_range(0..10_000) as f64 / 8.0,
    }
}

fn random_u64(rng: &mut StdRng) -> u64 {
    if rng.random_bool(0.2) {
        rng.random()
    } else {
        rng.random_range(0..10_000)
    }
}

fn random_kind(rng: &mut StdRng) -> AnnotationKind {
    match rng.random_range(0..5) {
        0 => AnnotationKind::Like,
        1 => AnnotationKind::Highlight {
            color: *HighlightColor::ALL.choose(rng).unwrap(),
            range: CharRange::new(rng.random_range(0..1000), rng.random_range(0..1000)),
        },
        2 => AnnotationKind::Tag {
            label: random_string(rng),
        },
        3 => AnnotationKind::Comment {
            text: random_string(rng),
            visibility: if rng.random() {
                Visibility::Public
            } else {
                Visibility::Private
            },
        },
        _ => AnnotationKind::Edit {
            new_text: random_string(rng),
        },
    }
}

fn random_annotation_view(rng: &mut StdRng) -> AnnotationView {
    let kind = random_kind(rng);
    AnnotationView {
        annotation_id: AnnotationId(random_u64(rng)),
        bubble_id: BubbleId(random_u64(rng)),
        seq: random_u64(rng),
        author: rng.random_bool(0.5).then(|| AuthorView {
            number: rng.random(),
            display_name: random_string(rng),
        }),
        own: rng.random(),
        kind,
    }
}

fn random_state(rng: &mut StdRng) -> BubbleState {
    *[BubbleState::Interim, BubbleState::Finalized, BubbleState::Hidden]
        .choose(rng)
        .unwrap()
}

fn random_view(rng: &mut StdRng) -> ViewerView {
    let participants = (0..rng.random_range(0..5))
        .map(|i| ParticipantView {
            number: i + 1,
            display_name: random_string(rng),
            present: rng.random(),
        })
        .collect();
    let mut bubbles: Vec<BubbleView> = (0..rng.random_range(0..4))
        .map(|_| BubbleView {
            bubble_id: BubbleId(random_u64(rng)),
            speaker: rng.random(),
            speaker_name: random_string(rng),
            own: rng.random(),
            state: random_state(rng),
            text: random_string(rng),
            revisions: (0..rng.random_range(0..3))
                .map(|_| RevisionView {
                    text: random_string(rng),
                    seq: random_u64(rng),
                })
                .collect(),
            t_start: random_f64(rng),
            t_end: rng.random_bool(0.5).then(|| random_f64(rng)),
            created_at: random_f64(rng),
            finalized_at: rng.random_bool(0.5).then(|| random_f64(rng)),
            ever_interacted: rng.random(),
            like_count: rng.random(),
            tag_counts: (0..rng.random_range(0..3))
                .map(|_| (random_string(rng), rng.random()))
                .collect::<BTreeMap<_, _>>(),
            annotations: (0..rng.random_range(0..3))
                .map(|_| random_annotation_view(rng))
                .collect(),
        })
        .collect();
    bubbles.sort_by_key(|b| b.bubble_id);
    bubbles.dedup_by_key(|b| b.bubble_id);
    ViewerView {
        session_id: SessionId::new(random_string(rng)),
        last_seq: random_u64(rng),
        participants,
        bubbles,
    }
}

/// Number of distinct [`ClientMessage`] variants produced by
/// [`random_client_message`].
pub const CLIENT_MESSAGE_KINDS: usize = 4;
/// Number of distinct [`ServerMessage`] variants produced by
/// [`random_server_message`].
pub const SERVER_MESSAGE_KINDS: usize = 4;

pub fn random_client_message(rng: &mut StdRng, kind: usize) -> ClientMessage {
    match kind % CLIENT_MESSAGE_KINDS {
        0 => ClientMessage::Hello {
            token: UserToken::new(random_string(rng)),
            display_name: random_string(rng),
        },
        1 => ClientMessage::Subscribe {
            session_id: SessionId::new(random_string(rng)),
            from_seq: random_u64(rng),
        },
        2 => ClientMessage::Command {
            id: random_string(rng),
            command: match rng.random_range(0..4) {
                0 => ClientCommand::Annotate {
                    bubble_id: BubbleId(random_u64(rng)),
                    annotation: random_kind(rng),
                },
                1 => ClientCommand::RemoveAnnotation {
                    annotation_id: AnnotationId(random_u64(rng)),
                },
                2 => ClientCommand::Speak {
                    text: random_string(rng),
                },
                _ => ClientCommand::Leave,
            },
        },
        _ => ClientMessage::Ping,
    }
}

pub fn random_delta(rng: &mut StdRng) -> ViewerDelta {
    let bubble_id = BubbleId(random_u64(rng));
    match rng.random_range(0..9) {
        0 => ViewerDelta::ParticipantJoined {
            participant: ParticipantView {
                number: rng.random(),
                display_name: random_string(rng),
                present: rng.random(),
            },
        },
        1 => ViewerDelta::ParticipantLeft {
            number: rng.random(),
        },
        2 => ViewerDelta::InterimUpdate {
            bubble_id,
            speaker: rng.random(),
            speaker_name: random_string(rng),
            own: rng.random(),
            text: random_string(rng),
            t_start: random_f64(rng),
            created_at: random_f64(rng),
        },
        3 => ViewerDelta::UtteranceFinalized {
            bubble_id,
            speaker: rng.random(),
            speaker_name: random_string(rng),
            own: rng.random(),
            text: random_string(rng),
            t_start: random_f64(rng),
            t_end: random_f64(rng),
            created_at: random_f64(rng),
            finalized_at: random_f64(rng),
        },
        4 => ViewerDelta::AnnotationApplied {
            annotation: random_annotation_view(rng),
        },
        5 => ViewerDelta::AnnotationRemoved {
            annotation_id: AnnotationId(random_u64(rng)),
            bubble_id,
        },
        6 => ViewerDelta::BubblePinned { bubble_id },
        7 => ViewerDelta::BubblesHidden {
            bubble_ids: (0..rng.random_range(0..4))
                .map(|_| BubbleId(random_u64(rng)))
                .collect(),
        },
        _ => ViewerDelta::Noop,
    }
}

pub fn random_server_message(rng: &mut StdRng, kind: usize) -> ServerMessage {
    match kind % SERVER_MESSAGE_KINDS {
        0 => ServerMessage::Welcome {
            session_id: SessionId::new(random_string(rng)),
            snapshot: rng.random_bool(0.7).then(|| random_view(rng)),
            last_seq: random_u64(rng),
        },
        1 => ServerMessage::Event {
            seq: random_u64(rng),
            delta: random_delta(rng),
        },
        2 => ServerMessage::Reject {
            command_ref: rng.random_bool(0.5).then(|| random_string(rng)),
            error_code: random_string(rng),
            message: random_string(rng),
        },
        _ => ServerMessage::Pong,
    }
}

/// Mutates a valid frame into something likely malformed: truncation, byte
/// flips, splices and junk.
pub fn mangle_frame(rng: &mut StdRng, frame: &str) -> Vec<u8> {
    let mut bytes = frame.as_bytes().to_vec();
    match rng.random_range(0..6) {
        0 => {
            let cut = rng.random_range(0..=bytes.len());
            bytes.truncate(cut);
        }
        1 => {
            for _ in 0..rng.random_range(1..4) {
                if !bytes.is_empty() {
                    let i = rng.random_range(0..bytes.len());
                    bytes[i] = rng.random();
                }
            }
        }
        2 => {
            let i = rng.random_range(0..=bytes.len());
            let junk: Vec<u8> = (0..rng.random_range(1..8)).map(|_| rng.random()).collect();
            bytes.splice(i..i, junk);
        }
        3 => {
            let s = frame.replace("\"v\":1", "\"v\":\"1\"");
            bytes = s.into_bytes();
        }
        4 => {
            let s = frame.replacen(':', ":[", 1);
            bytes = s.into_bytes();
        }
        _ => {
            bytes = (0..rng.random_range(0..64)).map(|_| rng.random()).collect();
        }
    }
    bytes
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
