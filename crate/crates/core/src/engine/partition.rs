use rustc_hash::FxHashSet;

use super::migration::{candidate, InteractionWindow, MigrationCandidate};
use super::{Snapshot, StepCtx};
use crate::config::{Partitioning, SimConfig};
use crate::geometry::{EntityId, Position, WorldSpec};
use crate::metrics::MetricsFrame;
use crate::mobility::{self, MobilityState};
use crate::protocol::{
    forward_decision, originate, schedule_forward, Delivery, MessageId, Outcome, PendingForward, ReceiptLog,
    SeenCache, Step, Transmission,
};
use crate::rng::{DecisionStream, DrawKind};

/// Full state of one simulated entity. Moves with the entity on migration.
#[derive(Debug, Clone)]
pub(crate) struct EntityState {
    pub id: EntityId,
    pub pos: Position,
    pub mobility: MobilityState,
    pub next_seq: u32,
    pub cache: SeenCache,
    pub receipts: ReceiptLog,
    pub pending: Vec<PendingForward>,
    pub window: InteractionWindow,
}

/// One copy routed to a receiver, with its canonical sort key inlined.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Inbound {
    /// `slot << 32 | origin`
    k1: u64,
    /// `seq << 32 | sender`
    k2: u64,
    key: u64,
    src: u16,
    tx: u32,
}

impl Inbound {
    fn slot(&self) -> usize {
        (self.k1 >> 32) as usize
    }
}

pub(crate) struct Emission {
    pub txs: Vec<Transmission>,
    /// Copies bound for each worker's inbox.
    pub outboxes: Vec<Vec<Inbound>>,
    pub frame: MetricsFrame,
    pub originations: Vec<MessageId>,
}

pub(crate) struct Reception {
    pub frame: MetricsFrame,
    /// One entry per unique delivery.
    pub reached: Vec<MessageId>,
    pub forward_events: Vec<ForwardEvent>,
}

/// A received copy the receiver decided to forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardEvent {
    pub step: Step,
    pub receiver: EntityId,
    pub receiver_pos: Position,
    pub sender: EntityId,
    pub sender_pos: Position,
    pub id: MessageId,
    /// TTL of the received copy; the forwarded copy carries one less.
    pub received_ttl: u32,
}

/// Raw material for auditing a run's protocol behavior.
#[derive(Debug, Clone, Default)]
pub struct TraceAudit {
    pub initial_ttl: u32,
    /// Emitted transmissions by remaining TTL; index `initial_ttl` holds the
    /// originations.
    pub emitted_by_ttl: Vec<u64>,
    pub forward_events: Vec<ForwardEvent>,
}

impl TraceAudit {
    pub fn new(initial_ttl: u32) -> Self {
        Self {
            initial_ttl,
            emitted_by_ttl: vec![0; initial_ttl as usize + 1],
            forward_events: Vec::new(),
        }
    }

    pub(crate) fn absorb_emission(&mut self, e: &Emission) {
        for t in &e.txs {
            let i = t.ttl_remaining as usize;
            if i >= self.emitted_by_ttl.len() {
                self.emitted_by_ttl.resize(i + 1, 0);
            }
            self.emitted_by_ttl[i] += 1;
        }
    }

    pub(crate) fn absorb_reception(&mut self, r: Reception) {
        self.forward_events.extend(r.forward_events);
    }

    /// Largest hop count among emitted transmissions.
    pub fn max_hops(&self) -> u32 {
        self.emitted_by_ttl
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(ttl, _)| self.initial_ttl.saturating_sub(ttl as u32))
            .max()
            .unwrap_or(0)
    }
}

pub(crate) struct Partition {
    worker: usize,
    entities: Vec<EntityState>,
}

impl Partition {
    pub fn new(worker: usize, _config: &SimConfig) -> Self {
        Self {
            worker,
            entities: Vec::new(),
        }
    }

    pub fn adopt_new(&mut self, id: EntityId, pos: Position, mobility: MobilityState, config: &SimConfig) {
        self.entities.push(EntityState {
            id,
            pos,
            mobility,
            next_seq: 0,
            cache: SeenCache::new(config.protocol.cache),
            receipts: ReceiptLog::default(),
            pending: Vec::new(),
            window: InteractionWindow::default(),
        });
    }

    pub fn pending_forwards(&self) -> u64 {
        self.entities.iter().map(|e| e.pending.len() as u64).sum()
    }

    pub fn move_entities(&mut self, stream: &DecisionStream, config: &SimConfig, world: &WorldSpec) {
        for e in &mut self.entities {
            let (pos, state) = mobility::step(e.mobility, e.pos, stream, e.id, config.speeds, world);
            e.pos = pos;
            e.mobility = state;
        }
    }

    pub fn write_snapshot(&self, snap: &mut Snapshot) {
        for (slot, e) in self.entities.iter().enumerate() {
            let i = e.id as usize;
            snap.positions[i] = e.pos;
            snap.owner[i] = self.worker as u16;
            snap.slot[i] = slot as u32;
        }
    }

    pub fn emit(&mut self, ctx: &StepCtx<'_>) -> Emission {
        let params = &ctx.config.protocol;
        let step = ctx.step;
        let mut frame = MetricsFrame::zero(step);
        let mut txs = Vec::new();
        let mut originations = Vec::new();

        for e in &mut self.entities {
            frame.forwards_emitted += e.pending.len() as u64;
            txs.extend(e.pending.drain(..).map(|f| f.emit(e.id, e.pos, step)));
            let draw = ctx.stream.draw(DrawKind::Originate, e.id, step as u64, 0);
            if let Some(t) = originate(e.id, e.pos, step, params, &mut e.next_seq, draw) {
                frame.originated += 1;
                e.receipts.mark_known(t.id, step);
                e.cache.insert(t.id);
                originations.push(t.id);
                txs.push(t);
            }
        }

        let snap = ctx.snapshot;
        let mut outboxes: Vec<Vec<Inbound>> = vec![Vec::new(); ctx.config.workers];
        let home = self.worker;
        for (ti, t) in txs.iter().enumerate() {
            let mut remote_mask = 0u64;
            let hi = (t.id.origin as u64) & 0xFFFF_FFFF;
            let seq_hi = (t.id.seq as u64) << 32;
            snap.index
                .for_each_within(t.sender_pos, params.interaction_range, Some(t.sender), |rid, _| {
                    let w = snap.owner[rid as usize] as usize;
                    if w != home {
                        remote_mask |= 1 << w;
                    }
                    outboxes[w].push(Inbound {
                        k1: (snap.slot[rid as usize] as u64) << 32 | hi,
                        k2: seq_hi | t.sender as u64,
                        key: t.key,
                        src: home as u16,
                        tx: ti as u32,
                    });
                })
                .expect("cell size checked at configuration");
            frame.remote_transfers += remote_mask.count_ones() as u64;
        }

        Emission {
            txs,
            outboxes,
            frame,
            originations,
        }
    }

    pub fn receive(&mut self, ctx: &StepCtx<'_>, emissions: &[Emission]) -> Reception {
        let params = &ctx.config.protocol;
        let step = ctx.step;
        let worker = self.worker;
        let adaptive = ctx.config.partitioning == Partitioning::Adaptive;
        let window = ctx.config.migration.window;
        let mut frame = MetricsFrame::zero(step);
        let mut reached = Vec::new();
        let mut forward_events = Vec::new();

        let mut inbox: Vec<Inbound> = Vec::with_capacity(emissions.iter().map(|e| e.outboxes[worker].len()).sum());
        for e in emissions {
            inbox.extend_from_slice(&e.outboxes[worker]);
        }
        // only the cache makes evaluation order observable
        if params.cache.enabled() {
            inbox.sort_unstable_by_key(|d| (d.k1, d.k2, d.key));
        }

        for d in &inbox {
            let tx = &emissions[d.src as usize].txs[d.tx as usize];
            let e = &mut self.entities[d.slot()];
            frame.deliveries_total += 1;
            match e.receipts.deliver(tx.id, step) {
                Delivery::Unique => {
                    frame.deliveries_unique += 1;
                    reached.push(tx.id);
                }
                Delivery::Duplicate => frame.deliveries_duplicate += 1,
            }
            if adaptive {
                e.window.record(step, ctx.snapshot.owner[tx.sender as usize] as usize, window);
            }
            let draw = ctx.stream.draw(DrawKind::Forward, e.id, step as u64, tx.key);
            let outcome = forward_decision(tx, e.pos, params, &mut e.cache, draw, ctx.world);
            frame.record_outcome(outcome);
            if outcome == Outcome::Forward {
                e.pending.push(schedule_forward(tx, e.id));
                if ctx.audit {
                    forward_events.push(ForwardEvent {
                        step,
                        receiver: e.id,
                        receiver_pos: e.pos,
                        sender: tx.sender,
                        sender_pos: tx.sender_pos,
                        id: tx.id,
                        received_ttl: tx.ttl_remaining,
                    });
                }
            }
        }

        let lifetime = params.initial_ttl + 2;
        if step % lifetime == lifetime - 1 {
            let cutoff = step.saturating_sub(params.initial_ttl);
            for e in &mut self.entities {
                e.receipts.prune_before(cutoff);
            }
        }

        Reception {
            frame,
            reached,
            forward_events,
        }
    }

    pub fn migration_candidates(&mut self, step: Step, config: &SimConfig) -> Vec<MigrationCandidate> {
        let m = &config.migration;
        self.entities
            .iter()
            .filter_map(|e| {
                let counts = e.window.counts(step, m.window, config.workers);
                candidate(e.id, self.worker, &counts, m.threshold)
            })
            .collect()
    }

    /// Removes and returns the entities with the given ids.
    pub fn release(&mut self, ids: &[EntityId]) -> Vec<EntityState> {
        if ids.is_empty() {
            return Vec::new();
        }
        let wanted: FxHashSet<EntityId> = ids.iter().copied().collect();
        let mut out = Vec::with_capacity(ids.len());
        let mut kept = Vec::with_capacity(self.entities.len() - ids.len());
        for e in self.entities.drain(..) {
            if wanted.contains(&e.id) {
                out.push(e);
            } else {
                kept.push(e);
            }
        }
        self.entities = kept;
        out
    }

    pub fn accept(&mut self, arrivals: Vec<EntityState>) {
        self.entities.extend(arrivals);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_hops_from_ttl_histogram() {
        let mut a = TraceAudit::new(4);
        assert_eq!(a.max_hops(), 0);
        a.emitted_by_ttl[4] = 10;
        a.emitted_by_ttl[1] = 2;
        assert_eq!(a.max_hops(), 3);
    }
}
