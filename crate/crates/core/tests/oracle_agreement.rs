mod common;

use std::collections::{BTreeSet, HashMap};

use common::{random_small_config, table1};
use pbbsim::engine::{run_with, RunOptions};
use pbbsim::oracle::oracle_run;
use pbbsim::protocol::{CachePolicy, Outcome};
use pbbsim::{torus_distance, Partitioning};

#[test]
fn engine_matches_oracle_on_random_scenarios() {
    let mut exercised = pbbsim::MetricsFrame::zero(0);
    for case in 0..60 {
        let c = random_small_config(case);
        let reference = oracle_run(&c).unwrap();
        let out = run_with(&c, RunOptions::default()).unwrap();
        assert_eq!(out.series.len(), c.sim_steps as usize);
        for (a, b) in out.series.iter().zip(&reference.series) {
            assert_eq!(a, b, "case {case} diverges at step {}: {c:?}", a.step);
        }
        assert_eq!(out.summary.coverage, reference.coverage, "case {case}");
        exercised.add_counts(&out.summary.totals);
    }
    assert!(exercised.forwards_emitted > 0 && exercised.drop_duplicate > 0 && exercised.drop_ttl > 0);
    assert!(exercised.migrations > 0 && exercised.remote_transfers > 0);
}

#[test]
fn forward_events_match_oracle_trace() {
    for case in 100..120 {
        let c = random_small_config(case);
        let reference = oracle_run(&c).unwrap();
        let audit = run_with(&c, RunOptions { audit: true }).unwrap().audit.unwrap();
        let engine: BTreeSet<_> = audit
            .forward_events
            .iter()
            .map(|f| (f.step, f.receiver, f.id, f.sender, f.received_ttl))
            .collect();
        let oracle: BTreeSet<_> = reference
            .trace
            .steps
            .iter()
            .flat_map(|s| {
                s.transmissions.iter().flat_map(move |t| {
                    t.receivers
                        .iter()
                        .filter(|r| r.outcome == Outcome::Forward)
                        .map(move |r| (s.step, r.receiver, t.tx.id, t.tx.sender, t.tx.ttl_remaining))
                })
            })
            .collect();
        assert_eq!(engine, oracle, "case {case}");
    }
}

#[test]
fn every_relay_has_a_forward_decision_one_step_earlier() {
    let mut c = table1(150, 60, 9);
    c.area_per_entity = 4_000.0;
    c.protocol.cache = CachePolicy::Unbounded;
    let trace = oracle_run(&c).unwrap().trace;
    let world = c.world().unwrap();
    let mut relays = 0;
    for (t, s) in trace.steps.iter().enumerate() {
        for rec in &s.transmissions {
            let tx = rec.tx;
            // receivers are exactly the in-range entities other than the sender
            let expected: Vec<u32> = (0..c.num_entities)
                .filter(|&j| j != tx.sender && torus_distance(tx.sender_pos, s.positions[j as usize], &world) <= 250.0)
                .collect();
            let mut got: Vec<u32> = rec.receivers.iter().map(|r| r.receiver).collect();
            got.sort_unstable();
            assert_eq!(got, expected);
            assert_eq!(tx.sender_pos, s.positions[tx.sender as usize]);
            if tx.id.origin == tx.sender && tx.ttl_remaining == c.protocol.initial_ttl {
                continue;
            }
            relays += 1;
            assert!(t > 0);
            let parent = trace.steps[t - 1]
                .transmissions
                .iter()
                .find(|p| {
                    p.tx.id == tx.id
                        && p.tx.ttl_remaining == tx.ttl_remaining + 1
                        && p.receivers.iter().any(|r| r.receiver == tx.sender && r.outcome == Outcome::Forward)
                })
                .expect("relay without a forward decision");
            let from = parent.tx.sender_pos;
            let at_decision = trace.steps[t - 1].positions[tx.sender as usize];
            assert!(torus_distance(from, at_decision, &world) > c.protocol.forward_range);
        }
    }
    assert!(relays > 0);
}

#[test]
fn without_relaying_coverage_is_the_one_hop_neighborhood() {
    let mut c = table1(120, 80, 4);
    c.protocol.p_diss = 0.0;
    c.area_per_entity = 5_000.0;
    let reference = oracle_run(&c).unwrap();
    let world = c.world().unwrap();
    let mut fractions = Vec::new();
    for s in &reference.trace.steps {
        for rec in &s.transmissions {
            assert_eq!(rec.tx.ttl_remaining, c.protocol.initial_ttl);
            if s.step + c.protocol.initial_ttl + 2 > c.sim_steps {
                continue;
            }
            let near = (0..c.num_entities)
                .filter(|&j| {
                    j != rec.tx.sender && torus_distance(rec.tx.sender_pos, s.positions[j as usize], &world) <= 250.0
                })
                .count();
            fractions.push((rec.tx.id, near as f64 / (c.num_entities - 1) as f64));
        }
    }
    fractions.sort_by_key(|f| f.0);
    let expected = fractions.iter().map(|f| f.1).sum::<f64>() / fractions.len() as f64;
    let engine = run_with(&c, RunOptions::default()).unwrap().summary.coverage.unwrap();
    assert!((engine - expected).abs() < 1e-12, "{engine} vs {expected}");
    assert_eq!(reference.coverage, Some(engine));
}

#[test]
fn adaptive_runs_match_oracle_including_migrations() {
    let mut moved = 0;
    let mut seen = HashMap::new();
    for seed in 0..6 {
        let mut c = table1(200, 100, seed);
        c.area_per_entity = 3_000.0;
        c.workers = 4;
        c.protocol.cache = CachePolicy::Unbounded;
        c.partitioning = Partitioning::Adaptive;
        c.migration.window = 10;
        c.migration.period = 10;
        c.migration.threshold = 0.3;
        let reference = oracle_run(&c).unwrap();
        let out = run_with(&c, RunOptions::default()).unwrap();
        assert_eq!(out.series, reference.series, "seed {seed}");
        moved += out.summary.totals.migrations;
        seen.insert(seed, out.summary.totals.remote_transfers);
    }
    assert!(moved > 0, "no migrations exercised: {seen:?}");
}
