//! Time-stepped, bulk-synchronous execution of the model.
//!
//! Entities are split among worker partitions. Each step runs five phases
//! separated by barriers:
//!
//! 1. mobility, per partition;
//! 2. a shared snapshot of positions and ownership plus the spatial index;
//! 3. emission: originations and last step's forwards are broadcast, and
//!    every in-range receiver gets the copy in its owner's inbox;
//! 4. reception: each partition evaluates the copies in its inbox and
//!    schedules forwards for the next step;
//! 5. metrics reduction and, when adaptive, periodic migration.
//!
//! All random draws are keyed, all reductions are sums, and copies reaching
//! one receiver are ordered canonically, so the model's counters do not
//! depend on the number of workers.

mod migration;
mod partition;

pub use migration::{candidate, migrate_evaluate, InteractionWindow, Migration, MigrationCandidate};
pub use partition::{ForwardEvent, TraceAudit};

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, Partitioning, SimConfig};
use crate::geometry::{EntityId, Position, SpatialIndex, WorldSpec};
use crate::metrics::{self, MetricsFrame, MetricsSeries, ReachLog, RunSummary};
use crate::mobility;
use crate::protocol::Step;
use crate::rng::{DecisionStream, DrawKind};

use partition::{Emission, Partition, Reception};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record every forward decision and emitted TTL for auditing.
    pub audit: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: MetricsSeries,
    pub summary: RunSummary,
    pub audit: Option<TraceAudit>,
}

/// Entity ids owned by one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionInfo {
    pub worker: usize,
    pub owned: Vec<EntityId>,
}

/// Initial placement of entity `id`, uniform over the torus.
pub fn initial_position(stream: &DecisionStream, id: EntityId, world: &WorldSpec) -> Position {
    let side = world.side();
    world.wrap_position(
        stream.draw(DrawKind::PlaceX, id, 0, 0) * side,
        stream.draw(DrawKind::PlaceY, id, 0, 0) * side,
    )
}

/// Worker owning x coordinate `x` when the torus is cut into `workers`
/// equal vertical strips.
pub fn strip_of(x: f64, side: f64, workers: usize) -> usize {
    ((x / (side / workers as f64)) as usize).min(workers - 1)
}

/// Strip partitioning of the initial placement.
pub fn partition_initial(config: &SimConfig) -> Result<Vec<PartitionInfo>, EngineError> {
    config.validate()?;
    let world = config.world()?;
    let stream = DecisionStream::new(config.seed);
    let mut parts: Vec<PartitionInfo> = (0..config.workers)
        .map(|worker| PartitionInfo {
            worker,
            owned: Vec::new(),
        })
        .collect();
    for id in 0..config.num_entities {
        let p = initial_position(&stream, id, &world);
        parts[strip_of(p.x, world.side(), config.workers)].owned.push(id);
    }
    Ok(parts)
}

/// Read-only view shared by all partitions during phases 3 and 4.
pub(crate) struct Snapshot {
    pub positions: Vec<Position>,
    pub owner: Vec<u16>,
    /// Index of each entity in its owner's entity vector.
    pub slot: Vec<u32>,
    pub index: SpatialIndex,
}

pub(crate) struct StepCtx<'a> {
    pub step: Step,
    pub config: &'a SimConfig,
    pub world: &'a WorldSpec,
    pub stream: &'a DecisionStream,
    pub snapshot: &'a Snapshot,
    pub audit: bool,
}

pub fn run(config: &SimConfig) -> Result<(MetricsSeries, RunSummary), EngineError> {
    let out = run_with(config, RunOptions::default())?;
    Ok((out.series, out.summary))
}

pub fn run_with(config: &SimConfig, options: RunOptions) -> Result<RunOutput, EngineError> {
    config.validate()?;
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| EngineError::Pool(e.to_string()))?,
        )
    } else {
        None
    };
    match &pool {
        Some(pool) => pool.install(|| Engine::new(config, options).map(|e| e.execute(true))),
        None => Engine::new(config, options).map(|e| e.execute(false)),
    }
}

struct Engine<'a> {
    config: &'a SimConfig,
    options: RunOptions,
    world: WorldSpec,
    stream: DecisionStream,
    partitions: Vec<Partition>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, options: RunOptions) -> Result<Self, EngineError> {
        let world = config.world()?;
        let stream = DecisionStream::new(config.seed);
        let workers = config.workers;
        let mut partitions: Vec<Partition> = (0..workers).map(|w| Partition::new(w, config)).collect();
        let num_static = config.num_static();
        for id in 0..config.num_entities {
            let pos = initial_position(&stream, id, &world);
            let mobility = if id < num_static {
                mobility::MobilityState::Static
            } else {
                mobility::initial_waypoint_state(&stream, id, pos, config.speeds, &world)
            };
            partitions[strip_of(pos.x, world.side(), workers)].adopt_new(id, pos, mobility, config);
        }
        Ok(Self {
            config,
            options,
            world,
            stream,
            partitions,
        })
    }

    fn execute(mut self, parallel: bool) -> RunOutput {
        let config = self.config;
        let n = config.num_entities as usize;
        let mut series = Vec::with_capacity(config.sim_steps as usize);
        let mut reach = ReachLog::default();
        let mut audit = self.options.audit.then(|| TraceAudit::new(config.protocol.initial_ttl));
        let mut snapshot = Snapshot {
            positions: vec![Position::default(); n],
            owner: vec![0; n],
            slot: vec![0; n],
            index: SpatialIndex::build(std::iter::empty::<(EntityId, Position)>(), &self.world),
        };

        let started = Instant::now();
        for step in 0..config.sim_steps {
            // 1. mobility
            let (world, stream) = (&self.world, &self.stream);
            for_each_partition(parallel, &mut self.partitions, |p| p.move_entities(stream, config, world));

            // 2. snapshot and index
            for p in &self.partitions {
                p.write_snapshot(&mut snapshot);
            }
            snapshot.index = SpatialIndex::build(
                snapshot.positions.iter().enumerate().map(|(i, p)| (i as EntityId, *p)),
                &self.world,
            );

            let ctx = StepCtx {
                step,
                config,
                world: &self.world,
                stream: &self.stream,
                snapshot: &snapshot,
                audit: self.options.audit,
            };

            // 3. emission and exchange through per-worker outboxes
            let emissions: Vec<Emission> = map_partitions(parallel, &mut self.partitions, |p| p.emit(&ctx));

            // 4. reception
            let receptions: Vec<Reception> =
                map_partitions(parallel, &mut self.partitions, |p| p.receive(&ctx, &emissions));

            // 5. reduction
            let mut frame = MetricsFrame::zero(step);
            for e in &emissions {
                frame.add_counts(&e.frame);
                for &id in &e.originations {
                    reach.originated(id, step);
                }
            }
            for r in &receptions {
                frame.add_counts(&r.frame);
                for &id in &r.reached {
                    reach.reached(id);
                }
            }
            if let Some(audit) = audit.as_mut() {
                for e in &emissions {
                    audit.absorb_emission(e);
                }
                for r in receptions {
                    audit.absorb_reception(r);
                }
            }
            if config.partitioning == Partitioning::Adaptive && (step + 1) % config.migration.period == 0 {
                frame.migrations = self.migrate(parallel, step);
            }
            series.push(frame);
        }
        let wall_clock = started.elapsed();

        let totals = metrics::totals(&series);
        let summary = RunSummary {
            wall_clock,
            coverage: metrics::coverage(&reach, config.num_entities, config.sim_steps, config.protocol.initial_ttl),
            forwarded_fraction: metrics::forwarded_fraction(&totals),
            forwards_pending_at_end: self.partitions.iter().map(|p| p.pending_forwards()).sum(),
            totals,
        };
        RunOutput {
            series,
            summary,
            audit,
        }
    }

    fn migrate(&mut self, parallel: bool, step: Step) -> u64 {
        let config = self.config;
        let candidates: Vec<MigrationCandidate> =
            map_partitions(parallel, &mut self.partitions, |p| p.migration_candidates(step, config))
                .into_iter()
                .flatten()
                .collect();
        let chosen = migrate_evaluate(candidates, config.migration.max_for(config.num_entities) as usize);
        let mut moving: Vec<Vec<EntityId>> = vec![Vec::new(); self.partitions.len()];
        for m in &chosen {
            moving[m.from].push(m.entity);
        }
        let mut arrivals: Vec<Vec<partition::EntityState>> = vec![Vec::new(); self.partitions.len()];
        let targets: rustc_hash::FxHashMap<EntityId, usize> = chosen.iter().map(|m| (m.entity, m.to)).collect();
        for (w, ids) in moving.into_iter().enumerate() {
            for mut e in self.partitions[w].release(&ids) {
                e.window.clear();
                arrivals[targets[&e.id]].push(e);
            }
        }
        for (w, list) in arrivals.into_iter().enumerate() {
            self.partitions[w].accept(list);
        }
        chosen.len() as u64
    }
}

fn for_each_partition<F>(parallel: bool, parts: &mut [Partition], f: F)
where
    F: Fn(&mut Partition) + Sync + Send,
{
    if parallel {
        parts.par_iter_mut().for_each(f);
    } else {
        parts.iter_mut().for_each(f);
    }
}

fn map_partitions<R, F>(parallel: bool, parts: &mut [Partition], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut Partition) -> R + Sync + Send,
{
    if parallel {
        parts.par_iter_mut().map(f).collect()
    } else {
        parts.iter_mut().map(f).collect()
    }
}
