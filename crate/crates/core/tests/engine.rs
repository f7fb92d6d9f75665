use std::sync::{Arc, Mutex};
use std::thread;

use proptest::prelude::*;
use scriptmeet_core::engine::Resume;
use scriptmeet_core::model::{BubbleState, ModelError};
use scriptmeet_core::sim::{simulate, SimConfig};
use scriptmeet_core::{
    AnnotationKind, BubbleId, Clock, Command, EngineError, EventPayload, Session, SessionConfig,
    SessionId, UserToken, VirtualClock, Visibility,
};

fn session(clock: &VirtualClock) -> Session {
    Session::new(
        SessionId::new("s"),
        SessionConfig::default(),
        Arc::new(clock.clone()),
    )
}

fn join(s: &mut Session, token: &str) {
    s.submit(Command::Join {
        token: token.into(),
        display_name: token.to_uppercase(),
    })
    .unwrap();
}

fn say(s: &mut Session, id: u64, speaker: &str, text: &str) {
    s.submit(Command::Finalize {
        bubble_id: BubbleId(id),
        speaker: speaker.into(),
        text: text.into(),
        t_start: 0.0,
        t_end: 1.0,
    })
    .unwrap();
}

fn like(author: &str, id: u64) -> Command {
    Command::Annotate {
        author: author.into(),
        bubble_id: BubbleId(id),
        kind: AnnotationKind::Like,
    }
}

#[test]
fn first_command_gets_seq_one() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    let applied = s
        .submit(Command::Join {
            token: "amy".into(),
            display_name: "Amy".into(),
        })
        .unwrap();
    assert_eq!(applied.event.seq, 1);
    assert_eq!(s.last_seq(), 1);
}

#[test]
fn concurrent_likes_are_linearized() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    join(&mut s, "bob");
    say(&mut s, 1, "amy", "we should ship");
    let before = s.last_seq();
    let shared = Arc::new(Mutex::new(s));
    let handles: Vec<_> = ["amy", "bob"]
        .into_iter()
        .map(|who| {
            let shared = shared.clone();
            thread::spawn(move || shared.lock().unwrap().submit(like(who, 1)).unwrap().event)
        })
        .collect();
    let mut events: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    events.sort_by_key(|e| e.seq);
    assert_eq!(
        events.iter().map(|e| e.seq).collect::<Vec<_>>(),
        vec![before + 1, before + 2]
    );
    let live = shared.lock().unwrap();
    assert_eq!(live.state().bubbles[&BubbleId(1)].like_count, 2);

    // oracle: apply in seq order on a single thread
    let mut oracle = session(&clock);
    join(&mut oracle, "amy");
    join(&mut oracle, "bob");
    say(&mut oracle, 1, "amy", "we should ship");
    for e in &events {
        let author = match &e.payload {
            EventPayload::AnnotationApplied { annotation } => annotation.author.clone(),
            other => panic!("unexpected {other:?}"),
        };
        oracle.submit(like(author.as_str(), 1)).unwrap();
    }
    // wall times are identical under the frozen virtual clock
    assert_eq!(oracle.state().canonical_json(), live.state().canonical_json());
}

#[test]
fn annotating_hidden_bubble_is_rejected_without_seq_gap() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    say(&mut s, 1, "amy", "uh");
    clock.advance(180.0);
    let hidden = s.tick(clock.now()).expect("bubble expires");
    assert!(matches!(hidden.event.payload, EventPayload::BubblesHidden { .. }));
    let seq = s.last_seq();
    assert_eq!(
        s.submit(like("amy", 1)).unwrap_err(),
        EngineError::Model(ModelError::HiddenBubble(BubbleId(1)))
    );
    assert_eq!(s.last_seq(), seq);
    join(&mut s, "bob");
    assert_eq!(s.last_seq(), seq + 1);
}

#[test]
fn tick_without_expirable_bubbles_emits_nothing() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    say(&mut s, 1, "amy", "hi");
    assert!(s.tick(100.0).is_none());
    assert_eq!(s.last_seq(), 2);
}

#[test]
fn bubbles_expiring_together_share_one_event() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    say(&mut s, 1, "amy", "one");
    say(&mut s, 2, "amy", "two");
    clock.advance(5.0);
    say(&mut s, 3, "amy", "three");
    // per-bubble oracle
    let expected: Vec<BubbleId> = s
        .state()
        .bubbles
        .values()
        .filter(|b| b.is_expirable(181.0, &s.config().policy))
        .map(|b| b.bubble_id)
        .collect();
    assert_eq!(expected, vec![BubbleId(1), BubbleId(2)]);
    let applied = s.tick(181.0).unwrap();
    match applied.event.payload {
        EventPayload::BubblesHidden { bubble_ids } => assert_eq!(bubble_ids, expected),
        other => panic!("unexpected {other:?}"),
    }
    assert!(s.tick(182.0).is_none());
    assert!(s.tick(185.0).is_some());
}

#[test]
fn one_second_ticks_hide_within_one_second_of_eligibility() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    clock.advance(0.37);
    say(&mut s, 1, "amy", "hello");
    let eligible_at = 0.37 + 180.0;
    let mut hidden_at = None;
    for _ in 0..400 {
        let now = clock.advance(1.0);
        if s.tick(now).is_some() {
            hidden_at = Some(now);
            break;
        }
    }
    let hidden_at = hidden_at.expect("bubble hidden");
    assert!(hidden_at >= eligible_at && hidden_at - eligible_at <= 1.0);
}

#[test]
fn leaving_makes_later_commands_stale() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    say(&mut s, 1, "amy", "bye");
    s.submit(Command::Leave { token: "amy".into() }).unwrap();
    assert!(matches!(
        s.submit(like("amy", 1)),
        Err(EngineError::StaleReference(_))
    ));
    assert!(matches!(
        s.submit(like("ghost", 1)),
        Err(EngineError::UnknownParticipant(_))
    ));
    assert_eq!(
        s.submit(Command::Join {
            token: "amy".into(),
            display_name: "Amy".into()
        })
        .unwrap_err(),
        EngineError::DuplicateParticipant("amy".into())
    );
    assert_eq!(
        s.submit(Command::Join {
            token: "bob".into(),
            display_name: "  ".into()
        })
        .unwrap_err(),
        EngineError::EmptyName
    );
}

#[test]
fn removing_twice_is_a_stale_reference() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    say(&mut s, 1, "amy", "x");
    s.submit(like("amy", 1)).unwrap();
    let remove = Command::RemoveAnnotation {
        author: "amy".into(),
        annotation_id: scriptmeet_core::AnnotationId(1),
    };
    s.submit(remove.clone()).unwrap();
    assert!(matches!(
        s.submit(remove),
        Err(EngineError::StaleReference(_))
    ));
    assert!(matches!(
        s.submit(Command::RemoveAnnotation {
            author: "amy".into(),
            annotation_id: scriptmeet_core::AnnotationId(99),
        }),
        Err(EngineError::UnknownAnnotation(_))
    ));
}

#[test]
fn interim_bubbles_accept_likes_but_not_edits() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    s.submit(Command::Interim {
        bubble_id: BubbleId(1),
        speaker: "amy".into(),
        text: "we".into(),
        t_start: 2.0,
    })
    .unwrap();
    s.submit(like("amy", 1)).unwrap();
    assert_eq!(
        s.submit(Command::Annotate {
            author: "amy".into(),
            bubble_id: BubbleId(1),
            kind: AnnotationKind::Edit {
                new_text: "me".into()
            },
        })
        .unwrap_err(),
        EngineError::Model(ModelError::EditOnInterim(BubbleId(1)))
    );
    // another speaker cannot write into amy's bubble
    join(&mut s, "bob");
    assert_eq!(
        s.submit(Command::Interim {
            bubble_id: BubbleId(1),
            speaker: "bob".into(),
            text: "hijack".into(),
            t_start: 2.0,
        })
        .unwrap_err(),
        EngineError::SpeakerMismatch(BubbleId(1))
    );
}

#[test]
fn snapshot_at_seq_zero_is_empty() {
    let clock = VirtualClock::new(0.0);
    let s = session(&clock);
    let snap = s.snapshot();
    assert_eq!(snap.last_seq(), 0);
    assert!(snap.state.bubbles.is_empty() && snap.state.participants.is_empty());
}

#[test]
fn viewer_snapshot_excludes_others_private_comments() {
    let clock = VirtualClock::new(0.0);
    let mut s = session(&clock);
    join(&mut s, "amy");
    join(&mut s, "bob");
    say(&mut s, 1, "amy", "budget");
    s.submit(Command::Annotate {
        author: "amy".into(),
        bubble_id: BubbleId(1),
        kind: AnnotationKind::Comment {
            text: "ask finance".into(),
            visibility: Visibility::Private,
        },
    })
    .unwrap();
    let snap = s.snapshot();
    let for_bob = scriptmeet_core::ViewerView::project(&snap.state, Some(&"bob".into()));
    let for_amy = scriptmeet_core::ViewerView::project(&snap.state, Some(&"amy".into()));
    assert!(for_bob.bubbles[0].annotations.is_empty());
    assert!(for_bob.bubbles[0].ever_interacted);
    assert_eq!(for_amy.bubbles[0].annotations.len(), 1);
}

#[test]
fn engine_registry_reports_unknown_sessions() {
    let clock = VirtualClock::new(0.0);
    let mut engine = scriptmeet_core::Engine::new(SessionConfig::default(), Arc::new(clock));
    let id = SessionId::new("a");
    engine.create_session(id.clone());
    engine
        .submit(
            &id,
            Command::Join {
                token: "amy".into(),
                display_name: "Amy".into(),
            },
        )
        .unwrap();
    let missing = SessionId::new("nope");
    assert_eq!(
        engine.submit(&missing, like("amy", 1)).unwrap_err(),
        EngineError::UnknownSession(missing.clone())
    );
    assert!(engine.snapshot(&missing).is_err());
    assert_eq!(engine.snapshot(&id).unwrap().last_seq(), 1);
}

#[test]
fn resume_paths() {
    let out = simulate(
        3,
        &SimConfig {
            target_events: 60,
            backlog_window: 20,
            ..Default::default()
        },
    );
    let s = &out.session;
    let last = s.last_seq();
    match s.resume(last) {
        Resume::Backlog(v) => assert!(v.is_empty()),
        _ => panic!("expected empty backlog"),
    }
    match s.resume(last - 3) {
        Resume::Backlog(v) => {
            assert_eq!(v.iter().map(|d| d.seq).collect::<Vec<_>>(), vec![last - 2, last - 1, last])
        }
        _ => panic!("expected backlog"),
    }
    assert!(matches!(s.resume(last - 25), Resume::Snapshot(_)));
    assert!(matches!(s.resume(last + 5), Resume::Snapshot(_)));
}

fn sim(seed: u64, n: usize) -> scriptmeet_core::sim::SimOutcome {
    simulate(
        seed,
        &SimConfig {
            target_events: n,
            ..Default::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replay_is_deterministic(seed in any::<u64>(), n in 1usize..1500) {
        let out = sim(seed, n);
        let seqs: Vec<u64> = out.events.iter().map(|e| e.seq).collect();
        prop_assert_eq!(seqs, (1..=out.events.len() as u64).collect::<Vec<_>>());
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::default());
        let a = Session::replay(out.session.id().clone(), out.session_config(), clock.clone(), out.events.clone()).unwrap();
        let b = Session::replay(out.session.id().clone(), out.session_config(), clock, out.events.clone()).unwrap();
        prop_assert_eq!(a.state().canonical_json(), out.session.state().canonical_json());
        prop_assert_eq!(a.state().canonical_json(), b.state().canonical_json());
    }

    #[test]
    fn snapshot_plus_tail_equals_full_replay(seed in any::<u64>(), n in 2usize..800, cut in 0.0f64..1.0) {
        let out = sim(seed, n);
        let k = (out.events.len() as f64 * cut) as usize;
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::default());
        let prefix = Session::replay(out.session.id().clone(), out.session_config(), clock.clone(), out.events[..k].iter().cloned()).unwrap();
        let mut resumed = Session::from_snapshot(prefix.snapshot(), out.session_config(), clock);
        resumed.apply_all(out.events[k..].iter().cloned()).unwrap();
        prop_assert_eq!(resumed.state().canonical_json(), out.session.state().canonical_json());
    }

    #[test]
    fn model_invariants_hold_along_the_log(seed in any::<u64>(), n in 1usize..1200) {
        let out = sim(seed, n);
        let config = out.session_config();
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::default());
        let mut s = Session::new(out.session.id().clone(), config, clock);
        let mut prev_revisions: std::collections::BTreeMap<BubbleId, usize> = Default::default();
        let mut pinned: std::collections::BTreeSet<BubbleId> = Default::default();
        let mut tag_balance: std::collections::BTreeMap<(BubbleId, String), i64> = Default::default();
        for e in &out.events {
            let before = s.state().clone();
            match &e.payload {
                EventPayload::AnnotationApplied { annotation } => {
                    if let AnnotationKind::Tag { label } = &annotation.kind {
                        *tag_balance.entry((annotation.bubble_id, label.clone())).or_default() += 1;
                    }
                }
                EventPayload::AnnotationRemoved { annotation_id, .. } => {
                    if let AnnotationKind::Tag { label } = &before.annotations[annotation_id].kind {
                        *tag_balance.entry((before.annotations[annotation_id].bubble_id, label.clone())).or_default() -= 1;
                    }
                }
                _ => {}
            }
            s.commit(e.clone()).unwrap();
            let st = s.state();
            prop_assert_eq!(st.last_seq, e.seq);
            for b in st.bubbles.values() {
                // revision lists only grow, and earlier entries never change
                if let Some(old) = before.bubbles.get(&b.bubble_id) {
                    prop_assert!(b.revisions.starts_with(&old.revisions));
                }
                let n = prev_revisions.entry(b.bubble_id).or_default();
                prop_assert!(b.revisions.len() >= *n);
                *n = b.revisions.len();
                if let Some(last) = b.revisions.last() {
                    prop_assert_eq!(&last.text, &b.text);
                }
                match b.state {
                    BubbleState::Interim => prop_assert!(b.t_end.is_none() && b.finalized_at.is_none()),
                    _ => prop_assert!(b.t_start <= b.t_end.unwrap()),
                }
                if b.ever_interacted {
                    pinned.insert(b.bubble_id);
                }
                if pinned.contains(&b.bubble_id) {
                    prop_assert!(b.is_visible(), "pinned bubble {} was hidden", b.bubble_id);
                }
                if b.state == BubbleState::Hidden {
                    prop_assert!(!b.ever_interacted);
                }
                for (label, count) in &b.tag_counts {
                    prop_assert_eq!(*count as i64, tag_balance[&(b.bubble_id, label.clone())]);
                }
            }
            for ((bubble, label), balance) in &tag_balance {
                prop_assert!(*balance >= 0);
                let shown = st.bubbles[bubble].tag_counts.get(label).copied().unwrap_or(0) as i64;
                prop_assert_eq!(shown, *balance);
            }
            // expiry soundness and completeness right after a hide event
            if let EventPayload::BubblesHidden { .. } = e.payload {
                for b in st.bubbles.values() {
                    if b.state != BubbleState::Interim {
                        let due = !b.ever_interacted && e.wall_time - b.finalized_at.unwrap() >= config.policy.ttl_seconds;
                        prop_assert_eq!(b.state == BubbleState::Hidden, due);
                    }
                }
            }
        }
    }

    #[test]
    fn pinned_bubbles_survive_any_fast_forward(seed in any::<u64>(), jump in 200.0f64..1e6) {
        let mut out = sim(seed, 300);
        let now = out.clock.advance(jump);
        out.session.tick(now);
        for b in out.session.state().bubbles.values() {
            if b.ever_interacted {
                prop_assert!(b.is_visible());
            } else if b.state != BubbleState::Interim {
                prop_assert_eq!(b.state, BubbleState::Hidden);
            }
        }
    }
}

#[test]
fn corrupted_event_is_reported_on_replay() {
    let out = sim(11, 200);
    let mut events = out.events.clone();
    // drop a join so later events reference an unknown participant
    let pos = events
        .iter()
        .position(|e| matches!(e.payload, EventPayload::UtteranceFinalized { .. }))
        .unwrap();
    if let EventPayload::UtteranceFinalized { speaker, .. } = &mut events[pos].payload {
        *speaker = UserToken::new("nobody");
    }
    let err = Session::replay(
        out.session.id().clone(),
        out.session_config(),
        Arc::new(VirtualClock::default()),
        events,
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::InvalidEvent { seq, .. } if seq == pos as u64 + 1));
}
