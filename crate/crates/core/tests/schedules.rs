use std::collections::BTreeSet;

use num_rational::Rational64;
use pipesched_core::analysis::{peak_live, AnalyticBubble};
use pipesched_core::suite::{inject_inversion, FuzzCase};
use pipesched_core::*;
use proptest::prelude::*;

fn uniform(d: u32, f: i64, b: i64) -> ClusterSpec {
    ClusterSpec::uniform(d, Time::int(f), Time::int(b))
}

fn exact(policy: Policy, d: u32, n: u32) -> Rational64 {
    match analysis::analytic_bubble(policy, d, n) {
        AnalyticBubble::Exact { value, .. } => value,
        AnalyticBubble::ApproxZero => panic!("no closed form"),
    }
}

fn sorted(mut v: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Every event's device is busy from its release until it starts.
fn work_conserving(t: &Timeline) -> Result<(), String> {
    for dev in 0..t.devices {
        let evs: Vec<&TaskEvent> = t.device_events(dev).collect();
        for e in &evs {
            let mut covered = e.release;
            for o in evs.iter().filter(|o| o.finish() > o.start) {
                if o.start <= covered && o.finish() > covered {
                    covered = o.finish();
                }
            }
            if covered < e.start {
                return Err(format!("device {dev} idle at {covered} while {:?} {} {} was ready", e.kind, e.stage, e.minibatch));
            }
        }
    }
    Ok(())
}

#[test]
fn dapple_matches_closed_form_for_every_n() {
    for d in [2u32, 4, 8] {
        for n in d..=4 * d {
            for (f, b) in [(1, 2), (1, 1)] {
                let c = uniform(d, f, b);
                let t = simulate(&build(&PolicyConfig::new(Policy::Dapple, n, n), &c).unwrap(), &c).unwrap();
                assert_eq!(bubble_ratio(&t, 0).unwrap(), exact(Policy::Dapple, d, n), "d={d} n={n} T_b={b}");
            }
        }
    }
}

#[test]
fn chimera_matches_closed_form() {
    for d in [2u32, 4, 8] {
        for n in [d, 2 * d, 4 * d] {
            let c = uniform(d, 1, 1);
            let t = simulate(&build(&PolicyConfig::new(Policy::Chimera, n, n), &c).unwrap(), &c).unwrap();
            assert_eq!(bubble_ratio(&t, 0).unwrap(), exact(Policy::Chimera, d, n), "d={d} n={n}");
        }
    }
}

#[test]
fn interleaved_beats_dapple() {
    for d in [4u32, 8] {
        let c = uniform(d, 2, 4);
        let il = simulate(&build(&PolicyConfig::new(Policy::Interleaved1F1B, 2 * d, 2 * d), &c).unwrap(), &c).unwrap();
        let dp = simulate(&build(&PolicyConfig::new(Policy::Dapple, 2 * d, 2 * d), &c).unwrap(), &c).unwrap();
        assert!(il.makespan < dp.makespan);
        assert_eq!(bubble_ratio(&il, 0).unwrap(), exact(Policy::Interleaved1F1B, d, 2 * d), "d={d}");
    }
}

#[test]
fn amdp_d4_preloads_four_and_six_before_the_boundary() {
    let c = uniform(4, 1, 2);
    let t = simulate(&build(&PolicyConfig::new(Policy::Amdp, 4, 12), &c).unwrap(), &c).unwrap();
    let boundary = t
        .events
        .iter()
        .filter(|e| e.window == 0 && e.kind == TaskKind::Backward)
        .map(|e| e.finish())
        .max()
        .unwrap();
    let early: BTreeSet<u32> = t
        .events
        .iter()
        .filter(|e| e.kind == TaskKind::Forward && e.stage == 0 && e.pipeline == 0 && e.window == 1)
        .filter(|e| e.start < boundary)
        .map(|e| e.minibatch)
        .collect();
    assert_eq!(early, BTreeSet::from([4, 6]));
    let flagged: BTreeSet<u32> = t
        .events
        .iter()
        .filter(|e| e.preloaded && e.pipeline == 0 && e.window == 1 && e.stage == 0)
        .map(|e| e.minibatch)
        .collect();
    assert_eq!(flagged, early);
}

#[test]
fn mapping_is_bijective_and_counter_directional() {
    for d in (2..=16).step_by(2) {
        for j in 0..d / 2 {
            let seq: Vec<u32> = (0..d).map(|i| map_stage_to_device(j, i, d).unwrap()).collect();
            let set: BTreeSet<u32> = seq.iter().copied().collect();
            assert_eq!(set, (0..d).collect::<BTreeSet<u32>>(), "d={d} j={j}");
            let step = if j % 2 == 0 { 1 } else { d - 1 };
            for w in seq.windows(2) {
                assert_eq!((w[0] + step) % d, w[1], "d={d} j={j}: {seq:?}");
            }
        }
    }
    assert_eq!(map_stage_to_device(0, 1, 2).unwrap(), 1);
    assert!(map_stage_to_device(0, 0, 7).is_err());
}

#[test]
fn peak_activation_is_monotone_in_injection_limit() {
    for d in [4u32, 8] {
        let c = uniform(d, 1, 2);
        let mut prev = 0;
        for n in 1..=d {
            let cfg = PolicyConfig::new(Policy::Dapple, 2 * d, 4 * d).with_injection_limit(n);
            let t = simulate(&build(&cfg, &c).unwrap(), &c).unwrap();
            let peak = peak_live(&t).into_iter().max().unwrap();
            assert!(peak >= prev, "d={d} n={n}: {peak} < {prev}");
            prev = peak;
        }
        assert_eq!(prev, d);
    }
}

#[test]
fn amdp_stage0_outstanding_forwards_bounded() {
    for d in [4u32, 8, 16] {
        let c = uniform(d, 1, 2);
        let allowance = 2 + preload_count(c.total_bwd(), c.total_fwd());
        for t in [d, 2 * d] {
            let tl = simulate(&build(&PolicyConfig::new(Policy::Amdp, t, 4 * t), &c).unwrap(), &c).unwrap();
            for p in 0..d / 2 {
                let mut run = 0;
                let mut seen: Vec<&TaskEvent> = tl
                    .events
                    .iter()
                    .filter(|e| e.stage == 0 && e.pipeline == p && e.kind.is_compute())
                    .collect();
                seen.sort_by_key(|e| (e.start, e.kind.order()));
                for e in seen {
                    run = if e.kind == TaskKind::Forward { run + 1 } else { 0 };
                    assert!(run <= allowance, "d={d} T={t} pipeline {p}: {run} forwards in a row");
                }
            }
        }
    }
}

#[test]
fn task_graph_json_round_trips() {
    let c = uniform(4, 1, 2);
    let g = build(&PolicyConfig::new(Policy::Amdp, 4, 8).with_zero(true), &c).unwrap();
    let back: TaskGraph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
    assert_eq!(back, g);
}

#[test]
fn odd_depth_rejected_for_amdp_and_chimera() {
    let c = uniform(5, 1, 2);
    for p in [Policy::Amdp, Policy::Chimera] {
        assert!(build(&PolicyConfig::new(p, 10, 20), &c).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fuzzed_schedules_hold_engine_invariants(seed in 0u64..1000, case in 0u32..10_000) {
        let fc = FuzzCase::random(seed, case);
        let g = build(&fc.policy, &fc.cluster).unwrap();
        prop_assert_eq!(sorted(g.compute_deps()), sorted(g.expected_causal_edges()));

        let t = simulate(&g, &fc.cluster).unwrap();
        prop_assert_eq!(t.events.len(), g.tasks.len());
        prop_assert!(t.overlaps().is_empty());
        prop_assert!(validate_causality(&t).is_empty());
        let busy: Time = t.events.iter().map(|e| e.duration).sum();
        let work: Time = g.tasks.iter().map(|k| k.duration).sum();
        prop_assert_eq!(busy, work);
        prop_assert!(work_conserving(&t).is_ok(), "{:?}", work_conserving(&t));
        prop_assert_eq!(&t, &simulate(&g, &fc.cluster).unwrap());
    }

    #[test]
    fn every_injected_inversion_is_reported_once(seed in 0u64..1000, case in 0u32..10_000, pick in any::<usize>()) {
        let fc = FuzzCase::random(seed, case);
        let mut t = simulate(&build(&fc.policy, &fc.cluster).unwrap(), &fc.cluster).unwrap();
        if let Some((k, start)) = inject_inversion(&mut t, pick) {
            let v = validate_causality(&t);
            prop_assert_eq!(v.len(), 1);
            prop_assert_eq!(v[0].actual_start, start);
            prop_assert_eq!(v[0].minibatch, t.events[k].minibatch);
        }
    }
}

#[test]
fn simulation_is_identical_across_threads() {
    let c = uniform(8, 1, 2);
    let g = build(&PolicyConfig::new(Policy::Amdp, 16, 64).with_zero(true), &c).unwrap();
    let base = simulate(&g, &c).unwrap();
    std::thread::scope(|s| {
        let hs: Vec<_> = (0..4).map(|_| s.spawn(|| simulate(&g, &c).unwrap())).collect();
        for h in hs {
            assert_eq!(h.join().unwrap(), base);
        }
    });
}
