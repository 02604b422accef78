//! Per-step counters, run summaries and derived statistics.

use std::fmt::Write as _;
use std::time::Duration;

use rustc_hash::FxHashMap;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::protocol::{MessageId, Outcome, Step};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cannot merge frames of steps {0} and {1}")]
    StepMismatch(Step, Step),
    #[error("wall-clock times must be positive (sequential {seq:?}, parallel {par:?})")]
    NonPositiveDuration { seq: Duration, par: Duration },
}

/// Exact header of the per-step results file.
pub const CSV_HEADER: &str = "step,originated,forwards,deliveries_total,deliveries_unique,deliveries_duplicate,drop_ttl,drop_distance,drop_probability,drop_duplicate,remote_transfers,migrations";

/// Aggregate counters for one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct MetricsFrame {
    pub step: Step,
    pub originated: u64,
    /// Forwarded copies emitted this step (decided the previous step).
    pub forwards_emitted: u64,
    pub deliveries_total: u64,
    pub deliveries_unique: u64,
    pub deliveries_duplicate: u64,
    pub drop_ttl: u64,
    pub drop_distance: u64,
    pub drop_probability: u64,
    pub drop_duplicate: u64,
    pub remote_transfers: u64,
    pub migrations: u64,
}

impl MetricsFrame {
    pub fn zero(step: Step) -> Self {
        Self {
            step,
            ..Default::default()
        }
    }

    /// Fieldwise sum of two frames of the same step.
    pub fn merge(&self, other: &MetricsFrame) -> Result<MetricsFrame, MetricsError> {
        if self.step != other.step {
            return Err(MetricsError::StepMismatch(self.step, other.step));
        }
        let mut out = *self;
        out.add_counts(other);
        Ok(out)
    }

    /// Adds every counter of `other`, ignoring its step.
    pub fn add_counts(&mut self, other: &MetricsFrame) {
        self.originated += other.originated;
        self.forwards_emitted += other.forwards_emitted;
        self.deliveries_total += other.deliveries_total;
        self.deliveries_unique += other.deliveries_unique;
        self.deliveries_duplicate += other.deliveries_duplicate;
        self.drop_ttl += other.drop_ttl;
        self.drop_distance += other.drop_distance;
        self.drop_probability += other.drop_probability;
        self.drop_duplicate += other.drop_duplicate;
        self.remote_transfers += other.remote_transfers;
        self.migrations += other.migrations;
    }

    pub fn record_outcome(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Forward => {}
            Outcome::DropTtl => self.drop_ttl += 1,
            Outcome::DropDistance => self.drop_distance += 1,
            Outcome::DropProbability => self.drop_probability += 1,
            Outcome::DropDuplicate => self.drop_duplicate += 1,
        }
    }

    pub fn drops(&self) -> u64 {
        self.drop_ttl + self.drop_distance + self.drop_probability + self.drop_duplicate
    }

    /// Originations plus forwards: every broadcast emitted this step.
    pub fn transmissions(&self) -> u64 {
        self.originated + self.forwards_emitted
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.originated,
            self.forwards_emitted,
            self.deliveries_total,
            self.deliveries_unique,
            self.deliveries_duplicate,
            self.drop_ttl,
            self.drop_distance,
            self.drop_probability,
            self.drop_duplicate,
            self.remote_transfers,
            self.migrations
        )
    }
}

pub type MetricsSeries = Vec<MetricsFrame>;

/// Renders a series as the results CSV, header included, `\n` line ends.
pub fn series_csv(series: &[MetricsFrame]) -> String {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for f in series {
        out.push_str(&f.csv_row());
        out.push('\n');
    }
    out
}

/// Sum of all frames; the result carries the last step number.
pub fn totals(series: &[MetricsFrame]) -> MetricsFrame {
    let mut t = MetricsFrame::zero(series.last().map_or(0, |f| f.step));
    for f in series {
        t.add_counts(f);
    }
    t
}

/// Per-message reach: when it was originated and how many distinct entities
/// other than its originator received it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReachLog {
    entries: FxHashMap<MessageId, (Step, u32)>,
}

impl ReachLog {
    pub fn originated(&mut self, id: MessageId, step: Step) {
        self.entries.entry(id).or_insert((step, 0)).0 = step;
    }

    pub fn reached(&mut self, id: MessageId) {
        self.entries.entry(id).or_insert((0, 0)).1 += 1;
    }

    pub fn get(&self, id: &MessageId) -> Option<(Step, u32)> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean fraction of other entities reached per message. Messages originated
/// within `initial_ttl + 1` steps of the end are left out since they could
/// not finish spreading. `None` when nothing qualifies or `N = 1`.
pub fn coverage(reach: &ReachLog, num_entities: u32, sim_steps: Step, initial_ttl: u32) -> Option<f64> {
    if num_entities < 2 {
        return None;
    }
    let others = (num_entities - 1) as f64;
    let mut ids: Vec<_> = reach
        .entries
        .iter()
        .filter(|(_, (origin_step, _))| (*origin_step as u64) + initial_ttl as u64 + 2 <= sim_steps as u64)
        .collect();
    if ids.is_empty() {
        return None;
    }
    // fixed summation order keeps the mean bit-reproducible
    ids.sort_unstable_by_key(|(id, _)| **id);
    let sum: f64 = ids.iter().map(|(_, (_, n))| *n as f64 / others).sum();
    Some(sum / ids.len() as f64)
}

/// `forwards / (originated + forwards)`; zero when nothing was sent.
pub fn forwarded_fraction(totals: &MetricsFrame) -> f64 {
    let all = totals.transmissions();
    if all == 0 {
        0.0
    } else {
        totals.forwards_emitted as f64 / all as f64
    }
}

/// Summary of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub wall_clock: Duration,
    pub totals: MetricsFrame,
    pub coverage: Option<f64>,
    pub forwarded_fraction: f64,
    /// Forwards decided in the final step, never emitted.
    pub forwards_pending_at_end: u64,
}

impl RunSummary {
    pub fn wall_clock_seconds(&self) -> f64 {
        self.wall_clock.as_secs_f64()
    }

    /// `key: value` lines for the run's totals and derived figures.
    pub fn to_kv(&self) -> String {
        let t = &self.totals;
        let mut s = String::new();
        let _ = writeln!(s, "wall_clock_seconds: {:.6}", self.wall_clock_seconds());
        for (k, v) in [
            ("originated", t.originated),
            ("forwards", t.forwards_emitted),
            ("transmissions", t.transmissions()),
            ("deliveries_total", t.deliveries_total),
            ("deliveries_unique", t.deliveries_unique),
            ("deliveries_duplicate", t.deliveries_duplicate),
            ("drop_ttl", t.drop_ttl),
            ("drop_distance", t.drop_distance),
            ("drop_probability", t.drop_probability),
            ("drop_duplicate", t.drop_duplicate),
            ("remote_transfers", t.remote_transfers),
            ("migrations", t.migrations),
            ("forwards_pending_at_end", self.forwards_pending_at_end),
        ] {
            let _ = writeln!(s, "{k}: {v}");
        }
        match self.coverage {
            Some(c) => {
                let _ = writeln!(s, "coverage: {c:.6}");
            }
            None => s.push_str("coverage: absent\n"),
        }
        let _ = writeln!(s, "forwarded_fraction: {:.6}", self.forwarded_fraction);
        s
    }
}

/// Sequential over parallel wall-clock time.
pub fn speedup(seq_wct: Duration, par_wct: Duration) -> Result<f64, MetricsError> {
    if seq_wct.is_zero() || par_wct.is_zero() {
        return Err(MetricsError::NonPositiveDuration {
            seq: seq_wct,
            par: par_wct,
        });
    }
    Ok(seq_wct.as_secs_f64() / par_wct.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub workers: usize,
    pub label: String,
    pub wct_seconds: f64,
    pub speedup: f64,
}

/// Wall-clock times per worker count, relative to a sequential baseline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeedupReport {
    pub sequential_seconds: f64,
    pub rows: Vec<SpeedupRow>,
}

impl SpeedupReport {
    pub fn new(sequential: Duration) -> Self {
        Self {
            sequential_seconds: sequential.as_secs_f64(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, workers: usize, label: &str, wct: Duration) -> Result<(), MetricsError> {
        let s = speedup(Duration::from_secs_f64(self.sequential_seconds), wct)?;
        self.rows.push(SpeedupRow {
            workers,
            label: label.to_string(),
            wct_seconds: wct.as_secs_f64(),
            speedup: s,
        });
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("workers,partitioning,wct_seconds,speedup\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6},{:.4}", r.workers, r.label, r.wct_seconds, r.speedup);
        }
        s
    }
}

/// Sample mean and 95% Student-t confidence half-width. The half-width is
/// `None` for fewer than two samples.
pub fn mean_ci95(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom positive")
        .inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

pub fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
