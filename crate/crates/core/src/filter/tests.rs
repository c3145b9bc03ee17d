use std::collections::BTreeMap;
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use proptest::prelude::*;

use super::*;
use crate::backends::{
    BackendResult, Detection, DetectorFixture, FixtureDetection, MockDetector, MockEmbedder,
    MockVlm, VlmFixture, FIXTURE_VERSION,
};
use crate::ingest::{ActionAnnotation, DatasetTag, FramePaths, SelectionStrategy};

fn triplet(action: &str) -> ActionTriplet {
    let a = ActionAnnotation::new("vid", action, 2.0, 4.0, DatasetTag::Custom);
    ActionTriplet::select(a, SelectionStrategy::Midpoint).unwrap()
}

fn frames(t: &ActionTriplet) -> TripletFrames {
    let img = RgbImage::from_pixel(100, 100, Rgb([90, 90, 90]));
    TripletFrames {
        initial: Frame::new(t.frame_key(FrameKind::Initial), img.clone()),
        action: Frame::new(t.frame_key(FrameKind::Action), img),
    }
}

fn vlm(action: &str, reply: &str) -> MockVlm {
    let mut replies = BTreeMap::new();
    replies.insert(action.to_string(), BTreeMap::from([(1, reply.to_string())]));
    MockVlm::new(VlmFixture {
        version: FIXTURE_VERSION,
        strict: true,
        replies,
        default: BTreeMap::new(),
    })
    .unwrap()
}

fn hit(label: &str, score: f64) -> FixtureDetection {
    FixtureDetection {
        label: label.to_string(),
        score,
        bbox: [10.0, 10.0, 50.0, 50.0],
        mask: None,
    }
}

fn detector(entries: Vec<(String, Vec<FixtureDetection>)>) -> MockDetector {
    MockDetector::new(DetectorFixture {
        version: FIXTURE_VERSION,
        frames: entries.into_iter().collect(),
    })
    .unwrap()
}

#[test]
fn identify_objects_passes_list_through() {
    let t = triplet("cut carrot");
    let v = vlm("cut carrot", "carrot, knife, cutting board");
    let objs =
        identify_objects("cut carrot", &frames(&t).initial, &v, &Prompts::default()).unwrap();
    assert_eq!(objs, ["carrot", "knife", "cutting board"]);
}

#[test]
fn identify_objects_rejects_prose() {
    let t = triplet("cut tomato");
    let v = vlm(
        "cut tomato",
        "The image shows somebody preparing food in a kitchen.",
    );
    assert!(matches!(
        identify_objects("cut tomato", &frames(&t).initial, &v, &Prompts::default()),
        Err(FilterError::MalformedBackendReply(_))
    ));
}

#[test]
fn detect_drops_low_scores() {
    let t = triplet("cut tomato");
    let f = frames(&t);
    let key = t.frame_key(FrameKind::Initial);
    let d = detector(vec![(key, vec![hit("tomato", 0.29), hit("tomato", 0.31)])]);
    let out = detect(
        &f.initial,
        FrameKind::Initial,
        &["tomato".into()],
        &d,
        DEFAULT_THRESHOLD,
    )
    .unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].score, 0.31);
    assert_eq!(out[0].frame_ref, FrameKind::Initial);
}

#[test]
fn detect_counts_survivors() {
    let t = triplet("cut tomato");
    let f = frames(&t);
    let key = t.frame_key(FrameKind::Initial);
    let scores = [0.9, 0.1, 0.5, 0.25, 0.3];
    let d = detector(vec![(
        key,
        scores.iter().map(|s| hit("tomato", *s)).collect(),
    )]);
    let out = detect(
        &f.initial,
        FrameKind::Initial,
        &["tomato".into()],
        &d,
        DEFAULT_THRESHOLD,
    )
    .unwrap();
    assert_eq!(out.len(), 3);
}

#[test]
fn detect_requires_labels() {
    let t = triplet("cut tomato");
    let d = detector(vec![]);
    assert!(matches!(
        detect(&frames(&t).initial, FrameKind::Initial, &[], &d, 0.3),
        Err(FilterError::EmptyLabels)
    ));
}

fn decide(initial: Vec<FixtureDetection>, action: Vec<FixtureDetection>) -> FilterDecision {
    let t = triplet("cut tomato");
    let v = vlm("cut tomato", "tomato, knife");
    let d = detector(vec![
        (t.frame_key(FrameKind::Initial), initial),
        (t.frame_key(FrameKind::Action), action),
    ]);
    filter_triplet(
        &t,
        &frames(&t),
        &v,
        &d,
        &Prompts::default(),
        &FilterConfig::default(),
    )
}

#[test]
fn hands_only_is_kept() {
    let d = decide(vec![hit("hand", 0.8)], vec![hit("hand", 0.7)]);
    assert!(d.kept);
    assert!(d.reasons.is_empty());
}

#[test]
fn object_without_action_hands_is_rejected() {
    let d = decide(vec![hit("tomato", 0.8)], vec![]);
    assert!(!d.kept);
    assert_eq!(d.reasons, [RejectionCode::NoHandsInAction]);
}

#[test]
fn empty_initial_is_rejected() {
    let d = decide(vec![], vec![hit("hand", 0.9)]);
    assert_eq!(d.reasons, [RejectionCode::NoObjectsOrHandsInInitial]);
}

#[test]
fn truth_table() {
    for (init_hands, init_obj, act_hands) in (0..8).map(|i| (i & 1 == 1, i & 2 == 2, i & 4 == 4)) {
        let mut init = vec![];
        if init_hands {
            init.push(hit("hand", 0.6));
        }
        if init_obj {
            init.push(hit("knife", 0.6));
        }
        let act = if act_hands {
            vec![hit("hand", 0.6)]
        } else {
            vec![]
        };
        let d = decide(init, act);
        assert_eq!(d.kept, (init_hands || init_obj) && act_hands);
        assert_eq!(d.kept, d.reasons.is_empty());
    }
}

#[test]
fn unrelated_object_does_not_count() {
    // "spoon" was never named by the model, so it is not even requested
    let d = decide(vec![hit("spoon", 0.9)], vec![hit("hand", 0.9)]);
    assert!(!d.kept);
}

#[test]
fn backend_failure_is_indeterminate() {
    let t = triplet("stir soup");
    // strict fixture with no entry for this action
    let v = vlm("cut tomato", "tomato");
    let d = detector(vec![]);
    let dec = filter_triplet(
        &t,
        &frames(&t),
        &v,
        &d,
        &Prompts::default(),
        &FilterConfig::default(),
    );
    assert!(!dec.kept);
    assert!(dec.is_indeterminate());
    assert!(dec.error.is_some());
}

struct Spy {
    inner: MockDetector,
    seen: Mutex<Vec<String>>,
}

impl Detector for Spy {
    fn detect_segment(&self, frame: &Frame, labels: &[String]) -> BackendResult<Vec<Detection>> {
        self.seen.lock().unwrap().push(frame.key.clone());
        self.inner.detect_segment(frame, labels)
    }
}

#[test]
fn final_frame_is_never_queried() {
    let t = triplet("cut tomato");
    let spy = Spy {
        inner: detector(vec![]),
        seen: Mutex::new(vec![]),
    };
    let v = vlm("cut tomato", "tomato");
    filter_triplet(
        &t,
        &frames(&t),
        &v,
        &spy,
        &Prompts::default(),
        &FilterConfig::default(),
    );
    let seen = spy.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen.iter().all(|k| !k.ends_with(":final")));
}

#[test]
fn curation_summary() {
    let s = curation_score(FrameKind::Initial, &[1.0, 1.0], CURATION_CUTOFF);
    assert_eq!((s.mean_clip, s.quantile_ge_80), (100.0, 1.0));
    let s = curation_score(FrameKind::Action, &[0.0], CURATION_CUTOFF);
    assert_eq!((s.mean_clip, s.quantile_ge_80), (0.0, 0.0));
    // 0.9 → 90, 0.7 → 70, -0.5 → clamped 0
    let s = curation_score(FrameKind::Final, &[0.9, 0.7, -0.5], CURATION_CUTOFF);
    assert!((s.mean_clip - 160.0 / 3.0).abs() < 1e-9);
    assert!((s.quantile_ge_80 - 1.0 / 3.0).abs() < 1e-12);
}

fn with_frames(t: &mut ActionTriplet, dir: &std::path::Path, seed: u8) {
    let mut paths = vec![];
    for kind in FrameKind::ALL {
        let img = RgbImage::from_fn(24, 24, |x, y| {
            Rgb([(x as u8).wrapping_mul(seed), y as u8 * 7, seed ^ kind as u8])
        });
        let p = dir.join(format!("{}_{}_{}.png", t.id(), seed, kind.as_str()));
        img.save(&p).unwrap();
        paths.push(p.to_string_lossy().into_owned());
    }
    t.frame_paths = Some(FramePaths {
        initial: paths[0].clone(),
        action: paths[1].clone(),
        final_: paths[2].clone(),
    });
}

#[test]
fn curation_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut ts = vec![triplet("cut tomato"), triplet("wash pan")];
    for t in &mut ts {
        with_frames(t, dir.path(), 3);
    }
    let scores = score_curation(&ts, &ts, &MockEmbedder::default(), CURATION_CUTOFF).unwrap();
    assert_eq!(scores.len(), 3);
    for s in scores {
        assert_eq!(s.mean_clip, 100.0);
        assert_eq!(s.quantile_ge_80, 1.0);
        assert_eq!(s.n_pairs, 2);
    }
}

#[test]
fn curation_without_common_keys() {
    let a = vec![triplet("cut tomato")];
    let b = vec![triplet("wash pan")];
    assert!(matches!(
        score_curation(&a, &b, &MockEmbedder::default(), CURATION_CUTOFF),
        Err(FilterError::AlignmentMismatch)
    ));
}

fn arb_hits() -> impl Strategy<Value = Vec<(u8, f64)>> {
    // label 0 = hand, 1 = tomato, 2 = spoon (not relevant)
    prop::collection::vec((0u8..3, 0.0f64..1.0), 0..5)
}

fn to_fixture(hits: &[(u8, f64)]) -> Vec<FixtureDetection> {
    hits.iter()
        .map(|(l, s)| hit(["hand", "tomato", "spoon"][*l as usize], *s))
        .collect()
}

fn brute_force(init: &[(u8, f64)], act: &[(u8, f64)], thr: f64) -> bool {
    let in_ok = init.iter().any(|(l, s)| (*l == 0 || *l == 1) && *s >= thr);
    let act_ok = act.iter().any(|(l, s)| *l == 0 && *s >= thr);
    in_ok && act_ok
}

proptest! {
    #[test]
    fn matches_brute_force(init in arb_hits(), act in arb_hits(), thr in 0.0f64..1.0) {
        let t = triplet("cut tomato");
        let v = vlm("cut tomato", "tomato, knife");
        let d = detector(vec![
            (t.frame_key(FrameKind::Initial), to_fixture(&init)),
            (t.frame_key(FrameKind::Action), to_fixture(&act)),
        ]);
        let dec = filter_triplet(&t, &frames(&t), &v, &d, &Prompts::default(), &FilterConfig::with_threshold(thr));
        prop_assert_eq!(dec.kept, brute_force(&init, &act, thr));
        prop_assert_eq!(dec.kept, dec.reasons.is_empty());
    }

    #[test]
    fn raising_threshold_never_keeps_more(
        sets in prop::collection::vec((arb_hits(), arb_hits()), 1..8),
        lo in 0.0f64..1.0,
        delta in 0.0f64..1.0,
    ) {
        let hi = (lo + delta).min(1.0);
        let v = vlm("cut tomato", "tomato");
        let count = |thr: f64| {
            sets.iter().enumerate().filter(|(i, (init, act))| {
                let mut t = triplet("cut tomato");
                t.annotation.video_id = format!("v{i}");
                let d = detector(vec![
                    (t.frame_key(FrameKind::Initial), to_fixture(init)),
                    (t.frame_key(FrameKind::Action), to_fixture(act)),
                ]);
                filter_triplet(&t, &frames(&t), &v, &d, &Prompts::default(), &FilterConfig::with_threshold(thr)).kept
            }).count()
        };
        prop_assert!(count(hi) <= count(lo));
    }
}
