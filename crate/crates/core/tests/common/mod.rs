#![allow(dead_code)]

use std::num::NonZeroUsize;

use pbbsim::protocol::CachePolicy;
use pbbsim::{Partitioning, SimConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// A random small scenario the oracle accepts.
pub fn random_small_config(seed: u64) -> SimConfig {
    let mut r = StdRng::seed_from_u64(seed);
    let mut c = SimConfig {
        seed: r.gen(),
        num_entities: r.gen_range(1..=200),
        sim_steps: r.gen_range(5..=100),
        area_per_entity: r.gen_range(1_500.0..30_000.0),
        ..SimConfig::default()
    };
    c.static_fraction = match r.gen_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => r.gen_range(0.0..1.0),
    };
    c.speeds.min = r.gen_range(0.5..10.0);
    c.speeds.max = c.speeds.min + r.gen_range(0.0..40.0);
    let p = &mut c.protocol;
    p.interaction_range = r.gen_range(50.0..300.0);
    p.forward_range = p.interaction_range * r.gen_range(0.05..=1.0);
    p.initial_ttl = r.gen_range(0..=6);
    p.p_diss = r.gen_range(0.0..=1.0);
    p.p_gen = r.gen_range(0.0..0.1);
    p.cache = match r.gen_range(0..3) {
        0 => CachePolicy::Off,
        1 => CachePolicy::Unbounded,
        _ => CachePolicy::Lru(NonZeroUsize::new(r.gen_range(1..=8)).unwrap()),
    };
    if p.cache == CachePolicy::Off {
        // keep uncached flooding from exploding: expected relays per copy ^ ttl
        let neighbors = std::f64::consts::PI * p.interaction_range.powi(2) / c.area_per_entity;
        let far = 1.0 - (p.forward_range / p.interaction_range).powi(2);
        let branching = (neighbors.min(c.num_entities as f64) * p.p_diss * far).max(1.0);
        while p.initial_ttl > 0 && branching.powi(p.initial_ttl as i32) > 300.0 {
            p.initial_ttl -= 1;
        }
    }
    if r.gen_bool(0.3) {
        c.cell_size = Some(p.interaction_range * r.gen_range(1.0..2.0));
    }
    c.workers = r.gen_range(1..=8);
    if r.gen_bool(0.5) {
        c.partitioning = Partitioning::Adaptive;
        c.migration.window = r.gen_range(1..=30);
        c.migration.period = r.gen_range(1..=30);
        c.migration.threshold = r.gen_range(0.2..=0.9);
        c.migration.max_per_evaluation = match r.gen_range(0..4) {
            0 => Some(0),
            1 => Some(r.gen_range(1..=10)),
            _ => None,
        };
    }
    c.validate().expect("generated config is valid");
    c
}

/// A Table 1 scenario shrunk to `entities` and `steps`, with a seed.
pub fn table1(entities: u32, steps: u32, seed: u64) -> SimConfig {
    SimConfig {
        num_entities: entities,
        sim_steps: steps,
        seed,
        ..SimConfig::default()
    }
}
