//! Priority-based Broadcast: every message is broadcast to all entities in
//! interaction range, and a receiver re-broadcasts a copy only when the
//! message still has hops left, the receiver is farther than the forwarding
//! range from the sender, and a gossip draw succeeds. An optional per-entity
//! cache of seen message ids suppresses re-forwarding.
//!
//! Copies of messages that reach one receiver in the same timestep are
//! evaluated in ascending `(message id, sender, lineage key)` order.

use std::collections::BTreeMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::geometry::{torus_distance, EntityId, Position, WorldSpec};
use crate::rng::hash_words;

pub type Step = u32;

/// Identity of an originated message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId {
    pub origin: EntityId,
    pub seq: u32,
}

impl MessageId {
    pub const fn new(origin: EntityId, seq: u32) -> Self {
        Self { origin, seq }
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.seq)
    }
}

/// One broadcast emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub id: MessageId,
    pub ttl_remaining: u32,
    pub sender: EntityId,
    pub sender_pos: Position,
    pub sent_at: Step,
    /// Hash of the hop path that produced this copy. Distinct copies of the
    /// same message have distinct keys, which keys their forwarding draws.
    pub key: u64,
}

impl Transmission {
    pub fn hops(&self, initial_ttl: u32) -> u32 {
        initial_ttl - self.ttl_remaining
    }
}

/// Lineage key of a freshly originated message.
#[inline]
pub fn origin_key(id: MessageId) -> u64 {
    hash_words(&[0x6f72_6967, id.origin as u64, id.seq as u64])
}

/// Lineage key of the copy `receiver` forwards after receiving `parent`.
#[inline]
pub fn child_key(parent: u64, receiver: EntityId) -> u64 {
    hash_words(&[0x6677_6421, parent, receiver as u64])
}

/// A forward decided in one step and emitted in the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingForward {
    pub id: MessageId,
    pub ttl_remaining: u32,
    pub key: u64,
}

impl PendingForward {
    pub fn emit(self, sender: EntityId, sender_pos: Position, step: Step) -> Transmission {
        Transmission {
            id: self.id,
            ttl_remaining: self.ttl_remaining,
            sender,
            sender_pos,
            sent_at: step,
            key: self.key,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CachePolicy {
    #[default]
    Off,
    Unbounded,
    Lru(NonZeroUsize),
}

impl CachePolicy {
    pub fn enabled(&self) -> bool {
        !matches!(self, CachePolicy::Off)
    }
}

impl fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CachePolicy::Off => f.write_str("off"),
            CachePolicy::Unbounded => f.write_str("unbounded"),
            CachePolicy::Lru(n) => write!(f, "lru:{n}"),
        }
    }
}

impl FromStr for CachePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(CachePolicy::Off),
            "unbounded" => Ok(CachePolicy::Unbounded),
            _ => {
                let cap = s
                    .strip_prefix("lru:")
                    .ok_or_else(|| format!("unknown cache policy `{s}` (expected off, unbounded or lru:N)"))?;
                let n: usize = cap
                    .parse()
                    .map_err(|_| format!("invalid lru capacity `{cap}`"))?;
                NonZeroUsize::new(n)
                    .map(CachePolicy::Lru)
                    .ok_or_else(|| "lru capacity must be at least 1".to_string())
            }
        }
    }
}

impl Serialize for CachePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CachePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub p_diss: f64,
    pub forward_range: f64,
    pub initial_ttl: u32,
    pub interaction_range: f64,
    pub p_gen: f64,
    pub cache: CachePolicy,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            p_diss: 0.6,
            forward_range: 200.0,
            initial_ttl: 4,
            interaction_range: 250.0,
            p_gen: 0.01,
            cache: CachePolicy::Off,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_diss) {
            return Err(format!("dissemination probability {} not in [0, 1]", self.p_diss));
        }
        if !(0.0..=1.0).contains(&self.p_gen) {
            return Err(format!("generation probability {} not in [0, 1]", self.p_gen));
        }
        if !(self.interaction_range.is_finite() && self.interaction_range > 0.0) {
            return Err(format!("interaction range {} must be positive", self.interaction_range));
        }
        if !(self.forward_range > 0.0 && self.forward_range <= self.interaction_range) {
            return Err(format!(
                "forwarding range {} must be in (0, interaction range {}]",
                self.forward_range, self.interaction_range
            ));
        }
        Ok(())
    }
}

/// Per-entity record of message ids already seen.
#[derive(Debug, Clone)]
pub enum SeenCache {
    Off,
    Unbounded(FxHashSet<MessageId>),
    Lru(LruIds),
}

impl SeenCache {
    pub fn new(policy: CachePolicy) -> Self {
        match policy {
            CachePolicy::Off => SeenCache::Off,
            CachePolicy::Unbounded => SeenCache::Unbounded(FxHashSet::default()),
            CachePolicy::Lru(cap) => SeenCache::Lru(LruIds::new(cap)),
        }
    }

    pub fn enabled(&self) -> bool {
        !matches!(self, SeenCache::Off)
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        match self {
            SeenCache::Off => false,
            SeenCache::Unbounded(set) => set.contains(id),
            SeenCache::Lru(lru) => lru.contains(id),
        }
    }

    /// Records `id` as most recently seen. Returns whether it was already
    /// present.
    pub fn insert(&mut self, id: MessageId) -> bool {
        match self {
            SeenCache::Off => false,
            SeenCache::Unbounded(set) => !set.insert(id),
            SeenCache::Lru(lru) => lru.insert(id),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SeenCache::Off => 0,
            SeenCache::Unbounded(set) => set.len(),
            SeenCache::Lru(lru) => lru.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bounded id set evicting the least recently touched entry.
#[derive(Debug, Clone)]
pub struct LruIds {
    capacity: usize,
    tick: u64,
    last_touch: FxHashMap<MessageId, u64>,
    by_touch: BTreeMap<u64, MessageId>,
}

impl LruIds {
    pub fn new(capacity: NonZeroUsize) -> Self {
        Self {
            capacity: capacity.get(),
            tick: 0,
            last_touch: FxHashMap::default(),
            by_touch: BTreeMap::new(),
        }
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.last_touch.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.last_touch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_touch.is_empty()
    }

    pub fn insert(&mut self, id: MessageId) -> bool {
        self.tick += 1;
        let present = match self.last_touch.insert(id, self.tick) {
            Some(old) => {
                self.by_touch.remove(&old);
                true
            }
            None => false,
        };
        self.by_touch.insert(self.tick, id);
        if self.last_touch.len() > self.capacity {
            if let Some((_, evicted)) = self.by_touch.pop_first() {
                self.last_touch.remove(&evicted);
            }
        }
        present
    }
}

/// Result of evaluating one received copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Forward,
    DropTtl,
    DropDistance,
    DropProbability,
    DropDuplicate,
}

/// Draws the origination decision for one entity and step.
pub fn originate(
    entity: EntityId,
    pos: Position,
    step: Step,
    params: &ProtocolParams,
    next_seq: &mut u32,
    decision_draw: f64,
) -> Option<Transmission> {
    if decision_draw >= params.p_gen {
        return None;
    }
    let id = MessageId::new(entity, *next_seq);
    *next_seq += 1;
    Some(Transmission {
        id,
        ttl_remaining: params.initial_ttl,
        sender: entity,
        sender_pos: pos,
        sent_at: step,
        key: origin_key(id),
    })
}

/// Decides what the receiver does with one received copy. Checks run in a
/// fixed order: duplicate, TTL, distance, probability. The id is recorded in
/// the receiver's cache whatever the outcome.
pub fn forward_decision(
    rx: &Transmission,
    receiver_pos: Position,
    params: &ProtocolParams,
    cache: &mut SeenCache,
    decision_draw: f64,
    world: &WorldSpec,
) -> Outcome {
    if cache.insert(rx.id) {
        return Outcome::DropDuplicate;
    }
    if rx.ttl_remaining == 0 {
        return Outcome::DropTtl;
    }
    if torus_distance(rx.sender_pos, receiver_pos, world) <= params.forward_range {
        return Outcome::DropDistance;
    }
    if decision_draw >= params.p_diss {
        return Outcome::DropProbability;
    }
    Outcome::Forward
}

/// The copy a receiver schedules after a `Forward` outcome.
pub fn schedule_forward(rx: &Transmission, receiver: EntityId) -> PendingForward {
    debug_assert!(rx.ttl_remaining > 0);
    PendingForward {
        id: rx.id,
        ttl_remaining: rx.ttl_remaining - 1,
        key: child_key(rx.key, receiver),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Unique,
    Duplicate,
}

/// Which message ids an entity has received, for unique/duplicate
/// accounting. Independent of the forwarding cache. Entries older than a
/// message's lifetime can be pruned since no further copies can arrive.
#[derive(Debug, Clone, Default)]
pub struct ReceiptLog {
    last_seen: FxHashMap<MessageId, Step>,
    delivered: u64,
}

impl ReceiptLog {
    pub fn deliver(&mut self, id: MessageId, step: Step) -> Delivery {
        self.delivered += 1;
        match self.last_seen.insert(id, step) {
            None => Delivery::Unique,
            Some(_) => Delivery::Duplicate,
        }
    }

    /// Marks a message as already known without counting a delivery (the
    /// originator knows its own message).
    pub fn mark_known(&mut self, id: MessageId, step: Step) {
        self.last_seen.insert(id, step);
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Forgets ids last seen before `cutoff`.
    pub fn prune_before(&mut self, cutoff: Step) {
        self.last_seen.retain(|_, s| *s >= cutoff);
    }

    pub fn tracked(&self) -> usize {
        self.last_seen.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldSpec {
        WorldSpec::new(1000.0, 250.0).unwrap()
    }

    fn rx(ttl: u32, dist: f64) -> (Transmission, Position) {
        let t = Transmission {
            id: MessageId::new(1, 0),
            ttl_remaining: ttl,
            sender: 1,
            sender_pos: Position::new(100.0, 100.0),
            sent_at: 0,
            key: 9,
        };
        (t, Position::new(100.0 + dist, 100.0))
    }

    #[test]
    fn origination_probability_edges() {
        let p = ProtocolParams { p_gen: 0.0, ..Default::default() };
        let mut seq = 0;
        assert!(originate(3, Position::default(), 7, &p, &mut seq, 0.0).is_none());
        let p = ProtocolParams { p_gen: 1.0, ..Default::default() };
        let t = originate(3, Position::default(), 7, &p, &mut seq, 0.999).unwrap();
        assert_eq!(t.ttl_remaining, 4);
        assert_eq!(t.sent_at, 7);
        assert_eq!(t.id, MessageId::new(3, 0));
        let t2 = originate(3, Position::default(), 8, &p, &mut seq, 0.5).unwrap();
        assert_eq!(t2.id.seq, 1);
        assert_ne!(t.key, t2.key);
    }

    #[test]
    fn forwards_far_receiver_with_lucky_draw() {
        let (t, pos) = rx(3, 220.0);
        let mut c = SeenCache::new(CachePolicy::Off);
        assert_eq!(forward_decision(&t, pos, &ProtocolParams::default(), &mut c, 0.55, &world()), Outcome::Forward);
        let f = schedule_forward(&t, 5);
        assert_eq!(f.ttl_remaining, 2);
        assert_eq!(f.key, child_key(t.key, 5));
    }

    #[test]
    fn exhausted_ttl_drops() {
        let (t, pos) = rx(0, 240.0);
        let mut c = SeenCache::new(CachePolicy::Off);
        assert_eq!(forward_decision(&t, pos, &ProtocolParams::default(), &mut c, 0.0, &world()), Outcome::DropTtl);
    }

    #[test]
    fn near_receiver_drops() {
        let (t, pos) = rx(3, 150.0);
        let mut c = SeenCache::new(CachePolicy::Off);
        assert_eq!(forward_decision(&t, pos, &ProtocolParams::default(), &mut c, 0.0, &world()), Outcome::DropDistance);
        // the threshold itself is not far enough
        let (t, pos) = rx(3, 200.0);
        assert_eq!(forward_decision(&t, pos, &ProtocolParams::default(), &mut c, 0.0, &world()), Outcome::DropDistance);
    }

    #[test]
    fn unlucky_draw_drops() {
        let (t, pos) = rx(3, 220.0);
        let mut c = SeenCache::new(CachePolicy::Off);
        let p = ProtocolParams::default();
        assert_eq!(forward_decision(&t, pos, &p, &mut c, 0.9, &world()), Outcome::DropProbability);
        assert_eq!(forward_decision(&t, pos, &p, &mut c, 0.6, &world()), Outcome::DropProbability);
    }

    #[test]
    fn cache_suppresses_second_copy() {
        let (t, pos) = rx(3, 220.0);
        let p = ProtocolParams { cache: CachePolicy::Unbounded, ..Default::default() };
        let mut c = SeenCache::new(p.cache);
        assert_eq!(forward_decision(&t, pos, &p, &mut c, 0.9, &world()), Outcome::DropProbability);
        assert_eq!(forward_decision(&t, pos, &p, &mut c, 0.0, &world()), Outcome::DropDuplicate);
        // without the cache every copy is judged afresh
        let mut off = SeenCache::new(CachePolicy::Off);
        assert_eq!(forward_decision(&t, pos, &ProtocolParams::default(), &mut off, 0.0, &world()), Outcome::Forward);
        assert_eq!(forward_decision(&t, pos, &ProtocolParams::default(), &mut off, 0.0, &world()), Outcome::Forward);
    }

    #[test]
    fn lru_evicts_least_recent() {
        let mut c = SeenCache::new(CachePolicy::Lru(NonZeroUsize::new(2).unwrap()));
        let (a, b, d) = (MessageId::new(0, 0), MessageId::new(0, 1), MessageId::new(0, 2));
        assert!(!c.insert(a));
        assert!(!c.insert(b));
        assert!(c.insert(a)); // refresh a; b is now oldest
        assert!(!c.insert(d));
        assert_eq!(c.len(), 2);
        assert!(c.contains(&a) && c.contains(&d) && !c.contains(&b));
    }

    #[test]
    fn cache_policy_parsing() {
        assert_eq!("off".parse::<CachePolicy>().unwrap(), CachePolicy::Off);
        assert_eq!("unbounded".parse::<CachePolicy>().unwrap(), CachePolicy::Unbounded);
        assert_eq!("lru:16".parse::<CachePolicy>().unwrap(), CachePolicy::Lru(NonZeroUsize::new(16).unwrap()));
        assert!("lru:0".parse::<CachePolicy>().is_err());
        assert!("lru".parse::<CachePolicy>().is_err());
        assert!("always".parse::<CachePolicy>().is_err());
        let p = CachePolicy::Lru(NonZeroUsize::new(3).unwrap());
        assert_eq!(p.to_string().parse::<CachePolicy>().unwrap(), p);
    }

    #[test]
    fn receipt_log_unique_then_duplicate() {
        let mut log = ReceiptLog::default();
        let x = MessageId::new(2, 0);
        assert_eq!(log.deliver(x, 3), Delivery::Unique);
        assert_eq!(log.deliver(x, 3), Delivery::Duplicate);
        assert_eq!(log.deliver(MessageId::new(2, 1), 4), Delivery::Unique);
        assert_eq!(log.delivered(), 3);
        log.prune_before(4);
        assert_eq!(log.tracked(), 1);
    }

    #[test]
    fn params_validation() {
        assert!(ProtocolParams::default().validate().is_ok());
        assert!(ProtocolParams { p_diss: 1.5, ..Default::default() }.validate().is_err());
        assert!(ProtocolParams { forward_range: 300.0, ..Default::default() }.validate().is_err());
        assert!(ProtocolParams { p_gen: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn forward_rate_matches_dissemination_probability() {
        use crate::rng::{DecisionStream, DrawKind};
        let s = DecisionStream::new(11);
        let p = ProtocolParams::default();
        let (t, pos) = rx(3, 220.0);
        let n = 100_000;
        let mut fwd = 0;
        for i in 0..n {
            let mut c = SeenCache::new(CachePolicy::Off);
            let draw = s.draw(DrawKind::Forward, i, 0, t.key);
            if forward_decision(&t, pos, &p, &mut c, draw, &world()) == Outcome::Forward {
                fwd += 1;
            }
        }
        let frac = fwd as f64 / n as f64;
        let se = (0.6f64 * 0.4 / n as f64).sqrt();
        assert!((frac - 0.6).abs() < 3.0 * se, "forward fraction {frac}");
    }
}
