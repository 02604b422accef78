//! Interaction-driven entity migration between workers.
//!
//! Each entity keeps a sliding window of how many deliveries it received from
//! senders owned by each worker. Periodically, an entity whose interactions
//! are dominated by one remote worker becomes a candidate to move there; the
//! strongest candidates move first, up to a per-evaluation cap.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::geometry::EntityId;
use crate::protocol::Step;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TallyEntry {
    step: Step,
    worker: u16,
    count: u32,
}

/// Per-entity delivery counts by sender worker over the last `window` steps.
#[derive(Debug, Clone, Default)]
pub struct InteractionWindow {
    entries: VecDeque<TallyEntry>,
}

impl InteractionWindow {
    pub fn record(&mut self, step: Step, worker: usize, window: u32) {
        while let Some(front) = self.entries.front() {
            if front.step + window <= step {
                self.entries.pop_front();
            } else {
                break;
            }
        }
        let worker = worker as u16;
        for e in self.entries.iter_mut().rev() {
            if e.step != step {
                break;
            }
            if e.worker == worker {
                e.count += 1;
                return;
            }
        }
        self.entries.push_back(TallyEntry {
            step,
            worker,
            count: 1,
        });
    }

    /// Counts per worker over steps `now - window + 1 ..= now`.
    pub fn counts(&self, now: Step, window: u32, workers: usize) -> Vec<u64> {
        let mut out = vec![0u64; workers];
        for e in &self.entries {
            if e.step + window > now && e.step <= now {
                out[e.worker as usize] += e.count as u64;
            }
        }
        out
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// An entity that would interact more locally on another worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigrationCandidate {
    pub entity: EntityId,
    pub from: usize,
    pub to: usize,
    /// Interactions with `to` minus interactions with `from`.
    pub gain_count: u64,
    /// All windowed interactions of the entity.
    pub total: u64,
}

impl MigrationCandidate {
    /// Compares by fractional gain, larger first, then by entity id.
    fn rank(&self, other: &Self) -> Ordering {
        let lhs = self.gain_count as u128 * other.total as u128;
        let rhs = other.gain_count as u128 * self.total as u128;
        rhs.cmp(&lhs).then(self.entity.cmp(&other.entity))
    }
}

/// A decided ownership transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migration {
    pub entity: EntityId,
    pub from: usize,
    pub to: usize,
}

/// Evaluates one entity. `counts[w]` is the number of windowed interactions
/// with senders owned by worker `w`.
pub fn candidate(entity: EntityId, home: usize, counts: &[u64], threshold: f64) -> Option<MigrationCandidate> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let (to, best) = counts
        .iter()
        .enumerate()
        .filter(|&(w, _)| w != home)
        .fold(None, |acc: Option<(usize, u64)>, (w, &c)| match acc {
            Some((_, bc)) if bc >= c => acc,
            _ => Some((w, c)),
        })?;
    let home_count = counts[home];
    let fraction = best as f64 / total as f64;
    if fraction > threshold && best > home_count {
        Some(MigrationCandidate {
            entity,
            from: home,
            to,
            gain_count: best - home_count,
            total,
        })
    } else {
        None
    }
}

/// Picks at most `max` migrations, strongest gain first.
pub fn migrate_evaluate(mut candidates: Vec<MigrationCandidate>, max: usize) -> Vec<Migration> {
    candidates.sort_unstable_by(|a, b| a.rank(b));
    candidates
        .into_iter()
        .take(max)
        .map(|c| Migration {
            entity: c.entity,
            from: c.from,
            to: c.to,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_local_entity_stays() {
        assert_eq!(candidate(0, 1, &[0, 100, 0, 0], 0.5), None);
    }

    #[test]
    fn dominant_remote_worker_attracts() {
        let c = candidate(7, 1, &[0, 20, 0, 80], 0.5).unwrap();
        assert_eq!((c.from, c.to, c.gain_count, c.total), (1, 3, 60, 100));
        // the default threshold too
        assert!(candidate(7, 1, &[0, 20, 0, 80], 0.6).is_some());
        // exactly at the threshold is not enough
        assert_eq!(candidate(7, 1, &[0, 40, 0, 60], 0.6), None);
    }

    #[test]
    fn remote_ties_go_to_lowest_worker() {
        let c = candidate(0, 0, &[0, 5, 5], 0.4).unwrap();
        assert_eq!(c.to, 1);
    }

    #[test]
    fn must_beat_home_share() {
        // 0.5 > threshold 0.3 but not above the home share
        assert_eq!(candidate(0, 0, &[50, 50], 0.3), None);
    }

    #[test]
    fn ranking_and_cap() {
        let mk = |entity, gain, total| MigrationCandidate { entity, from: 0, to: 1, gain_count: gain, total };
        let picked = migrate_evaluate(vec![mk(5, 10, 100), mk(2, 50, 100), mk(9, 1, 2), mk(1, 5, 10)], 3);
        // gains: 0.1, 0.5, 0.5, 0.5 -> ties by entity id
        assert_eq!(picked.iter().map(|m| m.entity).collect::<Vec<_>>(), vec![1, 2, 9]);
        assert!(migrate_evaluate(vec![mk(1, 1, 1)], 0).is_empty());
    }

    #[test]
    fn window_slides() {
        let mut w = InteractionWindow::default();
        w.record(0, 1, 3);
        w.record(1, 1, 3);
        w.record(1, 2, 3);
        w.record(1, 1, 3);
        assert_eq!(w.counts(1, 3, 3), vec![0, 3, 1]);
        assert_eq!(w.counts(3, 3, 3), vec![0, 2, 1]);
        w.record(4, 0, 3);
        assert_eq!(w.counts(4, 3, 3), vec![1, 0, 0]);
        w.clear();
        assert_eq!(w.counts(4, 3, 3), vec![0, 0, 0]);
    }
}
