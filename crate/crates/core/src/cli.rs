//! Command-line front end: single runs, experiment sweeps, and
//! engine-versus-oracle verification.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{emit_scenario, parse_scenario, Partitioning, Preset, SimConfig};
use crate::engine;
use crate::metrics::{self, mean_ci95, median, series_csv, MetricsFrame, RunSummary, SpeedupReport};
use crate::oracle;
use crate::protocol::CachePolicy;

#[derive(Debug, Parser)]
#[command(name = "pbbsim", version, about = "Priority-based broadcast simulator on a toroidal plane")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write per-step results and a summary.
    Run(RunArgs),
    /// Run an experiment matrix over seeds and report aggregates.
    Sweep(SweepArgs),
    /// Check the engine against the brute-force oracle on a small scenario.
    Verify(VerifyArgs),
    /// Print the resolved scenario file.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Scenario source plus per-parameter overrides.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// Preset name or path to a scenario file.
    #[arg(long, default_value = "table1")]
    pub scenario: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub adaptive: Option<OnOff>,
    /// off, unbounded or lru:N
    #[arg(long)]
    pub cache: Option<CachePolicy>,
    #[arg(long)]
    pub entities: Option<u32>,
    /// Simulated time in timesteps.
    #[arg(long)]
    pub steps: Option<u32>,
    /// Square spaceunits per entity.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub static_fraction: Option<f64>,
    #[arg(long)]
    pub speed_min: Option<f64>,
    #[arg(long)]
    pub speed_max: Option<f64>,
    #[arg(long)]
    pub sleep_time: Option<u32>,
    #[arg(long)]
    pub interaction_range: Option<f64>,
    #[arg(long)]
    pub forwarding_range: Option<f64>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub ttl: Option<u32>,
    #[arg(long)]
    pub dissemination_probability: Option<f64>,
    #[arg(long)]
    pub generation_probability: Option<f64>,
    #[arg(long)]
    pub migration_window: Option<u32>,
    #[arg(long)]
    pub migration_period: Option<u32>,
    #[arg(long)]
    pub migration_threshold: Option<f64>,
    #[arg(long)]
    pub migration_max: Option<u32>,
}

impl ConfigArgs {
    /// Loads the scenario, applies overrides and validates.
    pub fn resolve(&self) -> Result<SimConfig> {
        let mut c = match self.scenario.parse::<Preset>() {
            Ok(p) => p.config(),
            Err(_) if Path::new(&self.scenario).exists() => {
                let text = fs::read_to_string(&self.scenario)
                    .with_context(|| format!("reading scenario {}", self.scenario))?;
                parse_scenario(&text)?
            }
            Err(e) => bail!("{e}; no scenario file at that path either"),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag {
                    c.$($field)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(workers => workers);
        set!(cache => protocol.cache);
        set!(entities => num_entities);
        set!(steps => sim_steps);
        set!(density => area_per_entity);
        set!(static_fraction => static_fraction);
        set!(speed_min => speeds.min);
        set!(speed_max => speeds.max);
        set!(sleep_time => sleep_time);
        set!(interaction_range => protocol.interaction_range);
        set!(forwarding_range => protocol.forward_range);
        set!(ttl => protocol.initial_ttl);
        set!(dissemination_probability => protocol.p_diss);
        set!(generation_probability => protocol.p_gen);
        set!(migration_window => migration.window);
        set!(migration_period => migration.period);
        set!(migration_threshold => migration.threshold);
        if let Some(v) = self.cell_size {
            c.cell_size = Some(v);
        }
        if let Some(v) = self.migration_max {
            c.migration.max_per_evaluation = Some(v);
        }
        if let Some(a) = self.adaptive {
            c.partitioning = match a {
                OnOff::On => Partitioning::Adaptive,
                OnOff::Off => Partitioning::Static,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for results.csv and summary.txt.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepPreset {
    #[value(name = "fig3-scaling")]
    Fig3Scaling,
    #[value(name = "fig5-speedup")]
    Fig5Speedup,
    #[value(name = "fig6-adaptive")]
    Fig6Adaptive,
    #[value(name = "cache-effect")]
    CacheEffect,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub preset: SweepPreset,
    /// Independent seeds per configuration cell.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Largest (or only) entity count; preset-specific default.
    #[arg(long)]
    pub max_entities: Option<u32>,
    /// Smallest entity count for the scaling sweep.
    #[arg(long, default_value_t = 1000)]
    pub min_entities: u32,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub workers_list: Vec<usize>,
    /// Override simulated steps (default 900).
    #[arg(long)]
    pub steps: Option<u32>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(a) => run_command(&a).map(|_| ExitCode::SUCCESS),
        Command::Sweep(a) => sweep_command(&a).map(|_| ExitCode::SUCCESS),
        Command::Verify(a) => verify_command(&a),
        Command::Scenario(a) => {
            print!("{}", emit_scenario(&a.config.resolve()?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Summary document: run figures followed by the configuration echo.
pub fn summary_document(config: &SimConfig, summary: &RunSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed: {}", config.seed);
    let _ = writeln!(s, "workers: {}", config.workers);
    let _ = writeln!(s, "partitioning: {}", config.partitioning);
    s.push_str(&summary.to_kv());
    for line in emit_scenario(config).lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            let _ = writeln!(s, "config.{k}: {}", v.trim_matches('"'));
        }
    }
    s
}

pub fn run_command(args: &RunArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let (series, summary) = engine::run(&config)?;
    let csv_path = args.out.join(RESULTS_FILE);
    let summary_path = args.out.join(SUMMARY_FILE);
    let written = (|| -> Result<()> {
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        fs::write(&csv_path, series_csv(&series)).with_context(|| format!("writing {}", csv_path.display()))?;
        fs::write(&summary_path, summary_document(&config, &summary))
            .with_context(|| format!("writing {}", summary_path.display()))?;
        Ok(())
    })();
    if written.is_err() {
        let _ = fs::remove_file(&csv_path);
        let _ = fs::remove_file(&summary_path);
    }
    written?;
    println!(
        "{} steps, {} entities: {} transmissions, {} deliveries, forwarded fraction {:.4}, {:.3} s",
        config.sim_steps,
        config.num_entities,
        summary.totals.transmissions(),
        summary.totals.deliveries_total,
        summary.forwarded_fraction,
        summary.wall_clock_seconds()
    );
    Ok(())
}

pub fn verify_command(args: &VerifyArgs) -> Result<ExitCode> {
    let config = args.config.resolve()?;
    let reference = oracle::oracle_run(&config)?;
    let (series, summary) = engine::run(&config)?;
    match first_difference(&series, &reference.series) {
        None if summary.coverage == reference.coverage => {
            println!("PASS: engine matches oracle over {} steps", series.len());
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("FAIL: coverage differs (engine {:?}, oracle {:?})", summary.coverage, reference.coverage);
            Ok(ExitCode::FAILURE)
        }
        Some(step) => {
            println!("FAIL: series differ first at step {step}");
            Ok(ExitCode::FAILURE)
        }
    }
}

/// Index of the first differing frame, counting a length mismatch.
pub fn first_difference(a: &[MetricsFrame], b: &[MetricsFrame]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or((a.len() != b.len()).then_some(a.len().min(b.len())))
}

/// Outcome of one run within a sweep.
#[derive(Debug, Clone)]
pub struct SweepSample {
    pub wct: Duration,
    pub totals: MetricsFrame,
    pub forwarded_fraction: f64,
}

fn sample(config: &SimConfig) -> Result<SweepSample> {
    let (_, s) = engine::run(config)?;
    Ok(SweepSample {
        wct: s.wall_clock,
        totals: s.totals,
        forwarded_fraction: s.forwarded_fraction,
    })
}

pub const AGGREGATE_HEADER: &str = "entities,workers,partitioning,cache,runs,wct_mean,wct_ci95,wct_median,deliveries_mean,deliveries_ci95,forwards_mean,forwards_ci95,forwarded_fraction_mean,remote_transfers_mean,remote_transfers_ci95";

fn fmt_ci(h: Option<f64>) -> String {
    h.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// One aggregate CSV row over the samples of a cell.
pub fn aggregate_row(config: &SimConfig, samples: &[SweepSample]) -> String {
    let col = |f: &dyn Fn(&SweepSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    let wct = col(&|s| s.wct.as_secs_f64());
    let (wm, wh) = mean_ci95(&wct);
    let (dm, dh) = mean_ci95(&col(&|s| s.totals.deliveries_total as f64));
    let (fm, fh) = mean_ci95(&col(&|s| s.totals.forwards_emitted as f64));
    let (ffm, _) = mean_ci95(&col(&|s| s.forwarded_fraction));
    let (rm, rh) = mean_ci95(&col(&|s| s.totals.remote_transfers as f64));
    format!(
        "{},{},{},{},{},{wm:.6},{},{:.6},{dm:.3},{},{fm:.3},{},{ffm:.6},{rm:.3},{}",
        config.num_entities,
        config.workers,
        config.partitioning,
        config.protocol.cache,
        samples.len(),
        fmt_ci(wh),
        median(&wct),
        fmt_ci(dh),
        fmt_ci(fh),
        fmt_ci(rh)
    )
}

fn mean_wct(samples: &[SweepSample]) -> Duration {
    let total: f64 = samples.iter().map(|s| s.wct.as_secs_f64()).sum();
    Duration::from_secs_f64(total / samples.len() as f64)
}

pub fn sweep_command(args: &SweepArgs) -> Result<()> {
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    if args.workers_list.is_empty() || args.workers_list.contains(&0) {
        bail!("--workers-list must hold positive worker counts");
    }
    let mut base = SimConfig::default();
    if let Some(steps) = args.steps {
        base.sim_steps = steps;
    }
    let seeds = 1..=args.seeds;
    let run_cell = |c: &SimConfig| -> Result<Vec<SweepSample>> {
        seeds
            .clone()
            .map(|seed| sample(&SimConfig { seed, ..c.clone() }))
            .collect()
    };
    let mut aggregate = format!("{AGGREGATE_HEADER}\n");
    let mut extra: Vec<(&str, String)> = Vec::new();

    match args.preset {
        SweepPreset::Fig3Scaling => {
            let max = args.max_entities.unwrap_or(8000);
            let mut n = args.min_entities.max(1);
            while n <= max {
                let c = SimConfig { num_entities: n, ..base.clone() };
                c.validate()?;
                aggregate.push_str(&aggregate_row(&c, &run_cell(&c)?));
                aggregate.push('\n');
                n *= 2;
            }
        }
        SweepPreset::Fig5Speedup | SweepPreset::Fig6Adaptive => {
            let adaptive = args.preset == SweepPreset::Fig6Adaptive;
            let n = args.max_entities.unwrap_or(if adaptive { 32_000 } else { 16_000 });
            let seq = SimConfig { num_entities: n, workers: 1, ..base.clone() };
            seq.validate()?;
            let seq_samples = run_cell(&seq)?;
            let mut report = SpeedupReport::new(mean_wct(&seq_samples));
            let mut paired = String::from("seed,workers,static_remote_transfers,adaptive_remote_transfers\n");
            for &w in &args.workers_list {
                let stat = SimConfig { workers: w, ..seq.clone() };
                stat.validate()?;
                let stat_samples = if w == 1 { seq_samples.clone() } else { run_cell(&stat)? };
                aggregate.push_str(&aggregate_row(&stat, &stat_samples));
                aggregate.push('\n');
                report.push(w, "static", mean_wct(&stat_samples))?;
                if adaptive {
                    let adap = SimConfig { partitioning: Partitioning::Adaptive, ..stat.clone() };
                    let adap_samples = run_cell(&adap)?;
                    aggregate.push_str(&aggregate_row(&adap, &adap_samples));
                    aggregate.push('\n');
                    report.push(w, "adaptive", mean_wct(&adap_samples))?;
                    for (seed, (s, a)) in seeds.clone().zip(stat_samples.iter().zip(&adap_samples)) {
                        let _ = writeln!(
                            paired,
                            "{seed},{w},{},{}",
                            s.totals.remote_transfers, a.totals.remote_transfers
                        );
                    }
                }
            }
            extra.push(("speedup.csv", report.to_csv()));
            if adaptive {
                extra.push(("paired.csv", paired));
            }
        }
        SweepPreset::CacheEffect => {
            let n = args.max_entities.unwrap_or(1000);
            let off = SimConfig { num_entities: n, ..base.clone() };
            off.validate()?;
            let on = SimConfig {
                protocol: crate::protocol::ProtocolParams {
                    cache: CachePolicy::Unbounded,
                    ..off.protocol
                },
                ..off.clone()
            };
            let off_samples = run_cell(&off)?;
            let on_samples = run_cell(&on)?;
            aggregate.push_str(&aggregate_row(&off, &off_samples));
            aggregate.push('\n');
            aggregate.push_str(&aggregate_row(&on, &on_samples));
            aggregate.push('\n');
            let mut effect = String::from("seed,transmissions_off,transmissions_on,reduction_factor\n");
            for (seed, (a, b)) in seeds.clone().zip(off_samples.iter().zip(&on_samples)) {
                let (t0, t1) = (a.totals.transmissions(), b.totals.transmissions());
                let _ = writeln!(effect, "{seed},{t0},{t1},{:.6}", reduction_factor(t0, t1));
            }
            extra.push(("cache_effect.csv", effect));
        }
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("aggregate.csv"), &aggregate)?;
    for (name, body) in &extra {
        fs::write(args.out.join(name), body)?;
    }
    print!("{aggregate}");
    for (name, body) in &extra {
        println!("\n{name}:\n{body}");
    }
    Ok(())
}

/// How many times fewer transmissions the cache leaves.
pub fn reduction_factor(without_cache: u64, with_cache: u64) -> f64 {
    if with_cache == 0 {
        if without_cache == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        without_cache as f64 / with_cache as f64
    }
}

/// Drops the partition-dependent columns (`remote_transfers`, `migrations`)
/// from a results CSV.
pub fn model_columns(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            cols[..cols.len().saturating_sub(2)].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub use metrics::CSV_HEADER;

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("pbbsim").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_preset() {
        let Command::Run(a) = parse(&["run", "--entities", "2000", "--cache", "lru:5", "--adaptive", "on", "--ttl", "3"]).command else {
            panic!()
        };
        let c = a.config.resolve().unwrap();
        assert_eq!(c.num_entities, 2000);
        assert_eq!(c.protocol.initial_ttl, 3);
        assert_eq!(c.partitioning, Partitioning::Adaptive);
        assert_eq!(c.protocol.cache.to_string(), "lru:5");
    }

    #[test]
    fn bad_inputs_rejected() {
        let Command::Run(a) = parse(&["run", "--entities", "0"]).command else { panic!() };
        assert!(a.config.resolve().is_err());
        let Command::Run(a) = parse(&["run", "--scenario", "nonexistent-preset"]).command else { panic!() };
        assert!(a.config.resolve().is_err());
        assert!(Cli::try_parse_from(["pbbsim", "run", "--cache", "maybe"]).is_err());
    }

    #[test]
    fn workers_list_parses() {
        let Command::Sweep(a) = parse(&["sweep", "--preset", "fig5-speedup", "--workers-list", "1,2,4"]).command else {
            panic!()
        };
        assert_eq!(a.workers_list, vec![1, 2, 4]);
    }

    #[test]
    fn model_column_projection() {
        let csv = format!("{CSV_HEADER}\n0,1,2,3,4,5,6,7,8,9,10,11\n");
        assert_eq!(
            model_columns(&csv),
            "step,originated,forwards,deliveries_total,deliveries_unique,deliveries_duplicate,drop_ttl,drop_distance,drop_probability,drop_duplicate\n0,1,2,3,4,5,6,7,8,9"
        );
    }

    #[test]
    fn reduction_factor_edges() {
        assert_eq!(reduction_factor(10, 5), 2.0);
        assert_eq!(reduction_factor(0, 0), 1.0);
        assert!(reduction_factor(3, 0).is_infinite());
    }

    #[test]
    fn first_difference_reports_index() {
        let a = vec![MetricsFrame::zero(0), MetricsFrame::zero(1)];
        let mut b = a.clone();
        assert_eq!(first_difference(&a, &b), None);
        b[1].originated = 1;
        assert_eq!(first_difference(&a, &b), Some(1));
        assert_eq!(first_difference(&a, &a[..1]), Some(1));
    }
}
