mod common;

use approx::assert_abs_diff_eq;
use nrsed::events::{EventInstance, Timeline};
use nrsed::metrics::{match_operating_point, psds, PsdsParams};
use nrsed::par::Execution;
use proptest::prelude::*;

use common::{empty_sweep, perfect_sweep, psds_oracle, random_psds_fixture};

fn both() -> [PsdsParams; 2] {
    [PsdsParams::scenario1(), PsdsParams::scenario2()]
}

#[test]
fn hand_fixture_three_clips_two_classes_five_thresholds() {
    let classes = common::names(&["dog", "speech"]);
    let refs = vec![
        Timeline::new("a", 10.0, vec![EventInstance::new("dog", 1.0, 4.0), EventInstance::new("speech", 5.0, 7.0)]).unwrap(),
        Timeline::new("b", 10.0, vec![EventInstance::new("speech", 0.5, 2.5)]).unwrap(),
        Timeline::new("c", 10.0, vec![EventInstance::new("dog", 6.0, 9.0)]).unwrap(),
    ];
    let at = |ev: Vec<(&str, &str, f64, f64)>| -> Vec<Timeline> {
        ["a", "b", "c"]
            .iter()
            .map(|clip| {
                let events = ev.iter().filter(|e| e.0 == *clip).map(|e| EventInstance::new(e.1, e.2, e.3)).collect();
                Timeline::new(*clip, 10.0, events).unwrap()
            })
            .collect()
    };
    let sweep = vec![
        (0.1, at(vec![("a", "dog", 0.5, 4.5), ("a", "speech", 4.8, 7.2), ("b", "speech", 0.4, 2.6), ("c", "dog", 5.5, 9.5), ("c", "speech", 1.0, 2.0)])),
        (0.3, at(vec![("a", "dog", 1.0, 4.0), ("a", "speech", 5.2, 6.8), ("b", "speech", 0.5, 2.4), ("c", "dog", 6.0, 9.0)])),
        (0.5, at(vec![("a", "dog", 1.2, 3.0), ("b", "dog", 1.0, 2.0), ("c", "dog", 6.5, 8.0)])),
        (0.7, at(vec![("a", "dog", 2.0, 2.5), ("c", "dog", 7.0, 7.5)])),
        (0.9, at(vec![])),
    ];
    for p in both() {
        let got = psds(&sweep, &refs, &classes, &p, Execution::Sequential).unwrap().value;
        assert_abs_diff_eq!(got, psds_oracle(&sweep, &refs, &classes, &p), epsilon = 1e-9);
        assert!(got > 0.0);
    }
}

#[test]
fn boundary_sweeps() {
    let (_, refs, classes) = random_psds_fixture(3);
    for p in both() {
        assert_abs_diff_eq!(psds(&perfect_sweep(&refs, 5), &refs, &classes, &p, Execution::Parallel).unwrap().value, 1.0, epsilon = 1e-9);
        assert_eq!(psds(&empty_sweep(&refs, 5), &refs, &classes, &p, Execution::Parallel).unwrap().value, 0.0);
    }
}

/// Raising one class's TPR can lower `mean − std` once there are three
/// classes: TPRs (0.5, 0.5, 0.5) → (1, 0.5, 0.5) under alpha_st = 1.
#[test]
fn std_penalty_can_lower_psds_when_a_tp_is_added() {
    let classes = common::names(&["a", "b", "c"]);
    let mut events = Vec::new();
    for (i, c) in ["a", "b", "c"].iter().enumerate() {
        let base = i as f64 * 6.0;
        events.push(EventInstance::new(*c, base, base + 2.0));
        events.push(EventInstance::new(*c, base + 3.0, base + 5.0));
    }
    let refs = vec![Timeline::new("x", 20.0, events.clone()).unwrap()];
    let half: Vec<EventInstance> = events.iter().step_by(2).cloned().collect();
    let mut more = half.clone();
    more.push(events[1].clone());
    let p = PsdsParams::scenario1();
    let score = |dets: Vec<EventInstance>| {
        let sweep = vec![(0.2, vec![Timeline::new("x", 20.0, dets.clone()).unwrap()]), (0.8, vec![Timeline::new("x", 20.0, dets).unwrap()])];
        psds(&sweep, &refs, &classes, &p, Execution::Sequential).unwrap().value
    };
    let (before, after) = (score(half), score(more));
    assert_abs_diff_eq!(before, 0.5, epsilon = 1e-12);
    assert!(after < before, "{after} vs {before}");
}

fn add_tp(sweep: &mut [(f64, Vec<Timeline>)], refs: &[Timeline], pick: usize) -> bool {
    let all: Vec<(usize, EventInstance)> = refs.iter().enumerate().flat_map(|(k, r)| r.events.iter().map(move |e| (k, e.clone()))).collect();
    if all.is_empty() {
        return false;
    }
    let (k, e) = all[pick % all.len()].clone();
    let op = pick % sweep.len();
    let clip = &mut sweep[op].1[k];
    clip.events.push(e);
    true
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn engine_equals_definitional_oracle(seed in any::<u64>()) {
        let (sweep, refs, classes) = random_psds_fixture(seed);
        for p in both() {
            let got = psds(&sweep, &refs, &classes, &p, Execution::Sequential).unwrap().value;
            let want = psds_oracle(&sweep, &refs, &classes, &p);
            prop_assert!((got - want).abs() <= 1e-9, "{} vs {}", got, want);
            prop_assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn threshold_relabeling_is_irrelevant(seed in any::<u64>()) {
        let (sweep, refs, classes) = random_psds_fixture(seed);
        let relabeled: Vec<(f64, Vec<Timeline>)> = sweep.iter().map(|(t, d)| (3.0 * t.powi(3) + 7.0, d.clone())).collect();
        for p in both() {
            let a = psds(&sweep, &refs, &classes, &p, Execution::Sequential).unwrap().value;
            let b = psds(&relabeled, &refs, &classes, &p, Execution::Sequential).unwrap().value;
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn adding_a_tp_never_lowers_psds_without_std_penalty(seed in any::<u64>(), pick in 0usize..64) {
        let (sweep, refs, classes) = random_psds_fixture(seed);
        let mut more = sweep.clone();
        prop_assume!(add_tp(&mut more, &refs, pick));
        let flat = PsdsParams { alpha_st: 0.0, ..PsdsParams::scenario1() };
        let mut cases = vec![flat];
        if classes.len() <= 2 {
            cases.extend(both());
        }
        for p in cases {
            let a = psds(&sweep, &refs, &classes, &p, Execution::Sequential).unwrap().value;
            let b = psds(&more, &refs, &classes, &p, Execution::Sequential).unwrap().value;
            prop_assert!(b >= a - 1e-12, "{} -> {}", a, b);
        }
    }

    #[test]
    fn matching_ignores_clip_order_and_whole_clip_shifts(seed in any::<u64>(), shift in 0.0f64..50.0) {
        let (sweep, refs, classes) = random_psds_fixture(seed);
        let dets = &sweep[0].1;
        let shifted = |ts: &[Timeline]| -> Vec<Timeline> {
            ts.iter()
                .rev()
                .map(|t| {
                    let ev = t.events.iter().map(|e| EventInstance::new(e.class_name.clone(), e.onset + shift, e.offset + shift)).collect();
                    Timeline::new(t.clip_id.clone(), t.clip_duration + shift, ev).unwrap()
                })
                .collect()
        };
        for p in both() {
            let a = match_operating_point(dets, &refs, &classes, &p).unwrap();
            let b = match_operating_point(&shifted(dets), &shifted(&refs), &classes, &p).unwrap();
            prop_assert_eq!(&a.tp, &b.tp);
            prop_assert_eq!(&a.fp, &b.fp);
            prop_assert_eq!(&a.ct, &b.ct);
            prop_assert_eq!(&a.n_refs, &b.n_refs);
        }
    }
}
