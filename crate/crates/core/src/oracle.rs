//! Brute-force reference simulator for small instances.
//!
//! Written straight from the model's rules with quadratic neighbor scans,
//! flat per-entity arrays and a single lane of execution. It shares only the
//! domain types, the keyed random stream and the lineage-key hashing with the
//! engine, so agreement between the two is meaningful.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::config::{ConfigError, Partitioning, SimConfig};
use crate::geometry::{EntityId, Position};
use crate::metrics::MetricsFrame;
use crate::protocol::{child_key, origin_key, CachePolicy, Delivery, MessageId, Outcome, Step, Transmission};
use crate::rng::{DecisionStream, DrawKind};

pub const MAX_ENTITIES: u32 = 200;
pub const MAX_STEPS: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle instance too large: {entities} entities x {steps} steps (limit {MAX_ENTITIES} x {MAX_STEPS})")]
    TooLarge { entities: u32, steps: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One receiver's view of one transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverRecord {
    pub receiver: EntityId,
    pub delivery: Delivery,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord {
    pub tx: Transmission,
    pub receivers: Vec<ReceiverRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: Step,
    /// Positions after this step's movement, by entity id.
    pub positions: Vec<Position>,
    pub transmissions: Vec<TransmissionRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleTrace {
    pub steps: Vec<StepTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub series: Vec<MetricsFrame>,
    pub trace: OracleTrace,
    pub coverage: Option<f64>,
}

#[derive(Clone, Copy)]
enum Motion {
    Still,
    Travel { wx: f64, wy: f64, speed: f64, leg: u64 },
}

struct World {
    side: f64,
}

impl World {
    fn wrap(&self, c: f64) -> f64 {
        let w = c.rem_euclid(self.side);
        if w >= self.side {
            0.0
        } else {
            w
        }
    }

    fn delta(&self, from: f64, to: f64) -> f64 {
        let d = to - from;
        if d > self.side * 0.5 {
            d - self.side
        } else if d < -(self.side * 0.5) {
            d + self.side
        } else {
            d
        }
    }

    fn dist(&self, a: Position, b: Position) -> f64 {
        let ax = (a.x - b.x).abs();
        let ay = (a.y - b.y).abs();
        let dx = if self.side - ax < ax { self.side - ax } else { ax };
        let dy = if self.side - ay < ay { self.side - ay } else { ay };
        (dx * dx + dy * dy).sqrt()
    }
}

fn new_leg(s: &DecisionStream, w: &World, cfg: &SimConfig, id: EntityId, leg: u64, at: Position) -> Motion {
    let pick = |leg: u64| {
        let wx = w.wrap(s.draw(DrawKind::WaypointX, id, leg, 0) * w.side);
        let wy = w.wrap(s.draw(DrawKind::WaypointY, id, leg, 0) * w.side);
        let speed = cfg.speeds.min + (cfg.speeds.max - cfg.speeds.min) * s.draw(DrawKind::Speed, id, leg, 0);
        (wx, wy, speed)
    };
    let (mut wx, mut wy, mut speed) = pick(leg);
    let mut used = leg;
    if wx == at.x && wy == at.y {
        used = leg + 1;
        (wx, wy, speed) = pick(used);
    }
    Motion::Travel { wx, wy, speed, leg: used }
}

/// Seen-id list ordered from least to most recently touched.
struct IdMemory {
    ids: Vec<MessageId>,
    cap: Option<usize>,
}

impl IdMemory {
    /// Touches `id`; returns whether it was present before.
    fn touch(&mut self, id: MessageId) -> bool {
        let found = self.ids.iter().position(|x| *x == id);
        if let Some(i) = found {
            self.ids.remove(i);
        }
        self.ids.push(id);
        if let Some(cap) = self.cap {
            while self.ids.len() > cap {
                self.ids.remove(0);
            }
        }
        found.is_some()
    }
}

pub fn oracle_run(config: &SimConfig) -> Result<OracleOutput, OracleError> {
    if config.num_entities > MAX_ENTITIES || config.sim_steps > MAX_STEPS {
        return Err(OracleError::TooLarge {
            entities: config.num_entities,
            steps: config.sim_steps,
        });
    }
    config.validate()?;

    let n = config.num_entities as usize;
    let p = &config.protocol;
    let s = DecisionStream::new(config.seed);
    let w = World {
        side: (config.num_entities as f64 * config.area_per_entity).sqrt(),
    };
    let workers = config.workers;
    let num_static = (config.num_entities as f64 * config.static_fraction).floor() as usize;

    let mut pos: Vec<Position> = (0..n as EntityId)
        .map(|i| {
            Position::new(
                w.wrap(s.draw(DrawKind::PlaceX, i, 0, 0) * w.side),
                w.wrap(s.draw(DrawKind::PlaceY, i, 0, 0) * w.side),
            )
        })
        .collect();
    let mut motion: Vec<Motion> = (0..n)
        .map(|i| {
            if i < num_static {
                Motion::Still
            } else {
                new_leg(&s, &w, config, i as EntityId, 0, pos[i])
            }
        })
        .collect();
    let strip = w.side / workers as f64;
    let mut owner: Vec<usize> = pos.iter().map(|q| ((q.x / strip) as usize).min(workers - 1)).collect();

    let mut next_seq = vec![0u32; n];
    let mut memory: Vec<Option<IdMemory>> = (0..n)
        .map(|_| match p.cache {
            CachePolicy::Off => None,
            CachePolicy::Unbounded => Some(IdMemory { ids: Vec::new(), cap: None }),
            CachePolicy::Lru(c) => Some(IdMemory { ids: Vec::new(), cap: Some(c.get()) }),
        })
        .collect();
    let mut received: HashSet<(EntityId, MessageId)> = HashSet::new();
    let mut reach: HashMap<MessageId, (Step, u32)> = HashMap::new();
    // (entity, step, sender owner) per delivery since the entity's last move
    let mut history: Vec<Vec<(Step, usize)>> = vec![Vec::new(); n];
    // forwards to emit next step: (forwarder, id, ttl, key)
    let mut scheduled: Vec<(EntityId, MessageId, u32, u64)> = Vec::new();

    let mut series = Vec::new();
    let mut trace = OracleTrace::default();

    for step in 0..config.sim_steps {
        let mut frame = MetricsFrame::zero(step);

        for i in 0..n {
            if let Motion::Travel { wx, wy, speed, leg } = motion[i] {
                let dx = w.delta(pos[i].x, wx);
                let dy = w.delta(pos[i].y, wy);
                let left = (dx * dx + dy * dy).sqrt();
                if left <= speed {
                    pos[i] = Position::new(wx, wy);
                    motion[i] = new_leg(&s, &w, config, i as EntityId, leg + 1, pos[i]);
                } else {
                    let k = speed / left;
                    pos[i] = Position::new(w.wrap(pos[i].x + dx * k), w.wrap(pos[i].y + dy * k));
                }
            }
        }

        let mut txs: Vec<Transmission> = Vec::new();
        for (who, id, ttl, key) in scheduled.drain(..) {
            frame.forwards_emitted += 1;
            txs.push(Transmission {
                id,
                ttl_remaining: ttl,
                sender: who,
                sender_pos: pos[who as usize],
                sent_at: step,
                key,
            });
        }
        for i in 0..n {
            let e = i as EntityId;
            if s.draw(DrawKind::Originate, e, step as u64, 0) < p.p_gen {
                let id = MessageId::new(e, next_seq[i]);
                next_seq[i] += 1;
                frame.originated += 1;
                received.insert((e, id));
                if let Some(m) = memory[i].as_mut() {
                    m.touch(id);
                }
                reach.insert(id, (step, 0));
                txs.push(Transmission {
                    id,
                    ttl_remaining: p.initial_ttl,
                    sender: e,
                    sender_pos: pos[i],
                    sent_at: step,
                    key: origin_key(id),
                });
            }
        }

        // who hears what
        let mut copies: Vec<(EntityId, usize)> = Vec::new();
        for (ti, t) in txs.iter().enumerate() {
            let mut remote: Vec<usize> = Vec::new();
            for j in 0..n {
                if j as EntityId == t.sender || w.dist(t.sender_pos, pos[j]) > p.interaction_range {
                    continue;
                }
                copies.push((j as EntityId, ti));
                let o = owner[j];
                if o != owner[t.sender as usize] && !remote.contains(&o) {
                    remote.push(o);
                }
            }
            frame.remote_transfers += remote.len() as u64;
        }
        copies.sort_by(|a, b| {
            let (ta, tb) = (&txs[a.1], &txs[b.1]);
            (a.0, ta.id, ta.sender, ta.key).cmp(&(b.0, tb.id, tb.sender, tb.key))
        });

        let mut records: Vec<TransmissionRecord> = txs
            .iter()
            .map(|t| TransmissionRecord {
                tx: *t,
                receivers: Vec::new(),
            })
            .collect();
        for &(r, ti) in &copies {
            let t = txs[ti];
            let ri = r as usize;
            frame.deliveries_total += 1;
            let delivery = if received.insert((r, t.id)) {
                frame.deliveries_unique += 1;
                reach.get_mut(&t.id).expect("originated earlier").1 += 1;
                Delivery::Unique
            } else {
                frame.deliveries_duplicate += 1;
                Delivery::Duplicate
            };
            if config.partitioning == Partitioning::Adaptive {
                history[ri].push((step, owner[t.sender as usize]));
            }
            let seen_before = memory[ri].as_mut().is_some_and(|m| m.touch(t.id));
            let outcome = if seen_before {
                frame.drop_duplicate += 1;
                Outcome::DropDuplicate
            } else if t.ttl_remaining == 0 {
                frame.drop_ttl += 1;
                Outcome::DropTtl
            } else if w.dist(t.sender_pos, pos[ri]) <= p.forward_range {
                frame.drop_distance += 1;
                Outcome::DropDistance
            } else if s.draw(DrawKind::Forward, r, step as u64, t.key) >= p.p_diss {
                frame.drop_probability += 1;
                Outcome::DropProbability
            } else {
                scheduled.push((r, t.id, t.ttl_remaining - 1, child_key(t.key, r)));
                Outcome::Forward
            };
            records[ti].receivers.push(ReceiverRecord {
                receiver: r,
                delivery,
                outcome,
            });
        }

        if config.partitioning == Partitioning::Adaptive && (step + 1) % config.migration.period == 0 {
            frame.migrations = migrate(config, step, &mut owner, &mut history);
        }

        series.push(frame);
        trace.steps.push(StepTrace {
            step,
            positions: pos.clone(),
            transmissions: records,
        });
    }

    let coverage = if n < 2 {
        None
    } else {
        let mut ids: Vec<(MessageId, u32)> = reach
            .iter()
            .filter(|(_, (o, _))| *o as u64 + p.initial_ttl as u64 + 2 <= config.sim_steps as u64)
            .map(|(id, (_, c))| (*id, *c))
            .collect();
        ids.sort();
        if ids.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for (_, c) in &ids {
                sum += *c as f64 / (n - 1) as f64;
            }
            Some(sum / ids.len() as f64)
        }
    };

    Ok(OracleOutput {
        series,
        trace,
        coverage,
    })
}

fn migrate(config: &SimConfig, step: Step, owner: &mut [usize], history: &mut [Vec<(Step, usize)>]) -> u64 {
    let m = &config.migration;
    let workers = config.workers;
    // (entity, target, gain numerator, total)
    let mut wanted: Vec<(usize, usize, u64, u64)> = Vec::new();
    for i in 0..owner.len() {
        let mut counts = vec![0u64; workers];
        for &(s, o) in &history[i] {
            if s + m.window > step {
                counts[o] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            continue;
        }
        let home = owner[i];
        let mut best = None;
        for (o, &c) in counts.iter().enumerate() {
            if o == home {
                continue;
            }
            match best {
                Some((_, bc)) if bc >= c => {}
                _ => best = Some((o, c)),
            }
        }
        let Some((to, c)) = best else { continue };
        if c as f64 / total as f64 > m.threshold && c > counts[home] {
            wanted.push((i, to, c - counts[home], total));
        }
    }
    wanted.sort_by(|a, b| {
        let l = a.2 as u128 * b.3 as u128;
        let r = b.2 as u128 * a.3 as u128;
        r.cmp(&l).then(a.0.cmp(&b.0))
    });
    let cap = m.max_per_evaluation.unwrap_or(config.num_entities.div_ceil(100)) as usize;
    let mut moved = 0;
    for (i, to, _, _) in wanted.into_iter().take(cap) {
        owner[i] = to;
        history[i].clear();
        moved += 1;
    }
    moved
}
