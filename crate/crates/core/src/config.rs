//! Run configuration, its validation, named presets, and the flat
//! `key = value` scenario file format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::WorldSpec;
use crate::mobility::SpeedRange;
use crate::protocol::{CachePolicy, ProtocolParams};

/// Hard cap on workers; remote-transfer bookkeeping uses a 64-bit mask.
pub const MAX_WORKERS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("invalid scenario file: {0}")]
    Scenario(String),
    #[error("unknown preset `{0}` (expected table1, fig3-scaling, fig4-overhead, fig5-speedup or fig6-adaptive)")]
    UnknownPreset(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Partitioning {
    #[default]
    Static,
    Adaptive,
}

impl fmt::Display for Partitioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partitioning::Static => "static",
            Partitioning::Adaptive => "adaptive",
        })
    }
}

/// Adaptive migration knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MigrationPolicy {
    /// Steps of interaction history considered.
    pub window: u32,
    /// Steps between evaluations.
    pub period: u32,
    /// Minimum fraction of interactions with one remote worker.
    pub threshold: f64,
    /// Migrations applied per evaluation; `None` means `ceil(N / 100)`.
    pub max_per_evaluation: Option<u32>,
}

impl Default for MigrationPolicy {
    fn default() -> Self {
        Self {
            window: 50,
            period: 50,
            threshold: 0.6,
            max_per_evaluation: None,
        }
    }
}

impl MigrationPolicy {
    pub fn max_for(&self, num_entities: u32) -> u32 {
        self.max_per_evaluation
            .unwrap_or_else(|| num_entities.div_ceil(100))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_entities: u32,
    pub sim_steps: u32,
    /// Square spaceunits per entity; sets the torus side.
    pub area_per_entity: f64,
    /// Grid cell edge; defaults to the interaction range.
    pub cell_size: Option<f64>,
    pub static_fraction: f64,
    pub speeds: SpeedRange,
    /// Pause at each waypoint. Only 0 is supported.
    pub sleep_time: u32,
    pub protocol: ProtocolParams,
    pub seed: u64,
    pub workers: usize,
    pub partitioning: Partitioning,
    pub migration: MigrationPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_entities: 1000,
            sim_steps: 900,
            area_per_entity: 10_000.0,
            cell_size: None,
            static_fraction: 0.5,
            speeds: SpeedRange::default(),
            sleep_time: 0,
            protocol: ProtocolParams::default(),
            seed: 1,
            workers: 1,
            partitioning: Partitioning::Static,
            migration: MigrationPolicy::default(),
        }
    }
}

impl SimConfig {
    pub fn cell_size(&self) -> f64 {
        self.cell_size.unwrap_or(self.protocol.interaction_range)
    }

    pub fn world(&self) -> Result<WorldSpec, ConfigError> {
        WorldSpec::from_density(self.num_entities, self.area_per_entity, self.cell_size())
            .map_err(|e| invalid(e.to_string()))
    }

    /// Entities with id below this are static; the rest move.
    pub fn num_static(&self) -> u32 {
        (self.num_entities as f64 * self.static_fraction).floor() as u32
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_entities == 0 {
            return Err(invalid("number of entities must be at least 1"));
        }
        if self.workers == 0 || self.workers > MAX_WORKERS {
            return Err(invalid(format!("workers must be in 1..={MAX_WORKERS}, got {}", self.workers)));
        }
        if !(self.area_per_entity.is_finite() && self.area_per_entity > 0.0) {
            return Err(invalid(format!("density must be positive, got {}", self.area_per_entity)));
        }
        if !(0.0..=1.0).contains(&self.static_fraction) {
            return Err(invalid(format!("static fraction {} not in [0, 1]", self.static_fraction)));
        }
        let SpeedRange { min, max } = self.speeds;
        if !(min.is_finite() && max.is_finite() && min > 0.0 && min <= max) {
            return Err(invalid(format!("speed range [{min}, {max}] must satisfy 0 < min <= max")));
        }
        if self.sleep_time != 0 {
            return Err(invalid("waypoint sleep time other than 0 is not supported"));
        }
        self.protocol.validate().map_err(invalid)?;
        let cell = self.cell_size();
        if !(cell.is_finite() && cell > 0.0) {
            return Err(invalid(format!("cell size must be positive, got {cell}")));
        }
        if cell < self.protocol.interaction_range {
            return Err(invalid(format!(
                "cell size {cell} is smaller than the interaction range {}",
                self.protocol.interaction_range
            )));
        }
        let m = &self.migration;
        if !(m.threshold > 0.0 && m.threshold <= 1.0) {
            return Err(invalid(format!("migration threshold {} not in (0, 1]", m.threshold)));
        }
        if m.window == 0 || m.period == 0 {
            return Err(invalid("migration window and period must be at least 1 step"));
        }
        self.world()?;
        Ok(())
    }
}

/// Named scenario presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table1,
    Fig3Scaling,
    Fig4Overhead,
    Fig5Speedup,
    Fig6Adaptive,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Table1,
        Preset::Fig3Scaling,
        Preset::Fig4Overhead,
        Preset::Fig5Speedup,
        Preset::Fig6Adaptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Fig3Scaling => "fig3-scaling",
            Preset::Fig4Overhead => "fig4-overhead",
            Preset::Fig5Speedup => "fig5-speedup",
            Preset::Fig6Adaptive => "fig6-adaptive",
        }
    }

    pub fn config(&self) -> SimConfig {
        let base = SimConfig::default();
        match self {
            Preset::Table1 | Preset::Fig3Scaling => base,
            Preset::Fig4Overhead => SimConfig {
                protocol: ProtocolParams {
                    cache: CachePolicy::Off,
                    ..base.protocol
                },
                ..base
            },
            Preset::Fig5Speedup => SimConfig {
                num_entities: 16_000,
                workers: 8,
                ..base
            },
            Preset::Fig6Adaptive => SimConfig {
                num_entities: 32_000,
                workers: 8,
                partitioning: Partitioning::Adaptive,
                ..base
            },
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ConfigError::UnknownPreset(s.to_string()))
    }
}

/// Flat scenario file. Omitted keys take the default scenario values;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScenarioFile {
    pub entities: u32,
    pub steps: u32,
    #[serde(with = "seed_serde")]
    pub seed: u64,
    pub workers: usize,
    pub adaptive: bool,
    pub cache: CachePolicy,
    pub density: f64,
    pub static_fraction: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub sleep_time: u32,
    pub interaction_range: f64,
    pub forwarding_range: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_size: Option<f64>,
    pub ttl: u32,
    pub dissemination_probability: f64,
    pub generation_probability: f64,
    pub migration_window: u32,
    pub migration_period: u32,
    pub migration_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub migration_max: Option<u32>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile::from(&SimConfig::default())
    }
}

impl From<&SimConfig> for ScenarioFile {
    fn from(c: &SimConfig) -> Self {
        Self {
            entities: c.num_entities,
            steps: c.sim_steps,
            seed: c.seed,
            workers: c.workers,
            adaptive: c.partitioning == Partitioning::Adaptive,
            cache: c.protocol.cache,
            density: c.area_per_entity,
            static_fraction: c.static_fraction,
            speed_min: c.speeds.min,
            speed_max: c.speeds.max,
            sleep_time: c.sleep_time,
            interaction_range: c.protocol.interaction_range,
            forwarding_range: c.protocol.forward_range,
            cell_size: c.cell_size,
            ttl: c.protocol.initial_ttl,
            dissemination_probability: c.protocol.p_diss,
            generation_probability: c.protocol.p_gen,
            migration_window: c.migration.window,
            migration_period: c.migration.period,
            migration_threshold: c.migration.threshold,
            migration_max: c.migration.max_per_evaluation,
        }
    }
}

impl From<&ScenarioFile> for SimConfig {
    fn from(s: &ScenarioFile) -> Self {
        SimConfig {
            num_entities: s.entities,
            sim_steps: s.steps,
            area_per_entity: s.density,
            cell_size: s.cell_size,
            static_fraction: s.static_fraction,
            speeds: SpeedRange {
                min: s.speed_min,
                max: s.speed_max,
            },
            sleep_time: s.sleep_time,
            protocol: ProtocolParams {
                p_diss: s.dissemination_probability,
                forward_range: s.forwarding_range,
                initial_ttl: s.ttl,
                interaction_range: s.interaction_range,
                p_gen: s.generation_probability,
                cache: s.cache,
            },
            seed: s.seed,
            workers: s.workers,
            partitioning: if s.adaptive {
                Partitioning::Adaptive
            } else {
                Partitioning::Static
            },
            migration: MigrationPolicy {
                window: s.migration_window,
                period: s.migration_period,
                threshold: s.migration_threshold,
                max_per_evaluation: s.migration_max,
            },
        }
    }
}

/// TOML integers are signed 64-bit, so seeds above `i64::MAX` are written
/// as strings. Both forms are accepted on input.
mod seed_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.collect_str(seed),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map_err(|_| serde::de::Error::custom("seed must be non-negative")),
            Raw::Text(t) => t.parse().map_err(|_| serde::de::Error::custom(format!("invalid seed `{t}`"))),
        }
    }
}

/// Parses scenario text. Validation is left to the caller so that flag
/// overrides can be applied first.
pub fn parse_scenario(text: &str) -> Result<SimConfig, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Scenario(e.message().to_string()))?;
    Ok(SimConfig::from(&file))
}

pub fn emit_scenario(config: &SimConfig) -> String {
    toml::to_string(&ScenarioFile::from(config)).expect("flat scenario always serializes")
}
