//! Command-line front end: map building, stream simulation, localization
//! and trajectory evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use nightrider_core::map::{build_map, load_map, load_points, save_map, MapBuildParams, MapError};
use nightrider_sim::io::{read_trajectory_csv, write_json, write_json_lines, write_text, write_trajectory_csv, IoError};
use nightrider_sim::metrics::MetricsError;
use nightrider_sim::montecarlo::{monte_carlo, MonteCarloSummary};
use nightrider_sim::scenario::ScenarioError;
use nightrider_sim::trajectory::path_length;
use nightrider_sim::{compute_ate, presets, run_pipeline, Ate, PipelineOptions, Scenario, SimError, World};

#[derive(Debug, Parser)]
#[command(name = "nightrider", version, about = "Streetlight-aided nighttime localization toolkit")]
pub struct Cli {
    /// More log output; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a labeled streetlight point cloud into a map file.
    BuildMap(BuildMapArgs),
    /// Generate truth and sensor streams for a scenario.
    Simulate(SimulateArgs),
    /// Run the filter on a scenario and write the trajectory and metrics.
    Localize(LocalizeArgs),
    /// Absolute trajectory error between two trajectory CSVs.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct BuildMapArgs {
    /// Points as `x y z` lines, or a map JSON whose points are re-clustered.
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub min_pts: usize,
    /// Statistical outlier filter `k,std_ratio` applied before clustering.
    #[arg(long, value_parser = parse_outlier)]
    pub outliers: Option<(usize, f64)>,
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Where the scenario comes from; `--seed` (or `NIGHTRIDER_SEED`) overrides its seed.
#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario: figure-eight, long-road, corridor or blackout.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, env = "NIGHTRIDER_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output directory, created if missing.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Map given to the filter instead of the generated one.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_vision: bool,
    #[arg(long)]
    pub no_extension: bool,
    #[arg(long)]
    pub no_degeneration: bool,
    #[arg(long)]
    pub no_recovery: bool,
    /// Monte-Carlo runs over consecutive seeds, in parallel.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub estimate: PathBuf,
    pub truth: PathBuf,
    /// Also write the result as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn parse_outlier(s: &str) -> Result<(usize, f64), String> {
    let (k, r) = s.split_once(',').ok_or("expected k,std_ratio")?;
    let k = k.trim().parse().map_err(|e| format!("k: {e}"))?;
    let r = r.trim().parse().map_err(|e| format!("std_ratio: {e}"))?;
    Ok((k, r))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    /// 2: bad or empty input; 3: file system errors; 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Scenario(ScenarioError::Invalid(_) | ScenarioError::Parse { .. }) => 2,
            CliError::Map(MapError::Io { .. }) | CliError::Scenario(ScenarioError::Io { .. }) | CliError::Io(IoError::Io { .. }) => 3,
            CliError::Sim(SimError::Map(MapError::Io { .. })) => 3,
            CliError::Map(_) | CliError::Io(IoError::Parse { .. }) | CliError::Metrics(_) => 2,
            CliError::Sim(_) => 1,
        }
    }
}

/// Runs a parsed command and returns the text to print.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::BuildMap(a) => cmd_build_map(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.display().to_string(), source }.into())
}

pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut s = match (&args.scenario, &args.preset) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => presets::by_name(name)
            .ok_or_else(|| CliError::Input(format!("unknown preset '{name}' (known: {})", presets::NAMES.join(", "))))?,
        (None, None) => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

pub fn cmd_build_map(args: &BuildMapArgs) -> Result<String, CliError> {
    if !(args.eps > 0.0) || args.min_pts == 0 {
        return Err(CliError::Input("eps must be positive and min-pts at least 1".into()));
    }
    let points = load_points(&args.input)?;
    if points.is_empty() {
        return Err(CliError::Input(format!("{}: no points", args.input.display())));
    }
    let map = build_map(&points, &MapBuildParams { eps: args.eps, min_pts: args.min_pts, outlier_filter: args.outliers });
    save_map(&map, &args.out)?;
    let mut out = format!("{} clusters from {} points", map.len(), points.len());
    if let Some(first) = map.clusters.first() {
        let (lo, hi) = map.clusters.iter().fold((first.center, first.center), |(lo, hi), c| (lo.inf(&c.center), hi.sup(&c.center)));
        write!(out, "\ncenters span [{:.2}, {:.2}, {:.2}] to [{:.2}, {:.2}, {:.2}]", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z).unwrap();
    }
    Ok(out)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let s = load_scenario(&args.scenario)?;
    let world = World::generate(&s)?;
    create_dir(&args.out)?;
    let dir = &args.out;
    write_text(&dir.join("scenario.json"), &s.to_json())?;
    save_map(&world.map, &dir.join("map.json"))?;
    write_trajectory_csv(&dir.join("truth.csv"), &world.truth_poses())?;

    let mut imu = String::from("t,gx,gy,gz,ax,ay,az\n");
    for m in &world.imu.samples {
        let (g, a) = (m.gyro, m.accel);
        writeln!(imu, "{},{},{},{},{},{},{}", m.timestamp, g.x, g.y, g.z, a.x, a.y, a.z).unwrap();
    }
    write_text(&dir.join("imu.csv"), &imu)?;
    let mut odom = String::from("t,vx,vy,vz\n");
    for o in &world.odom {
        writeln!(odom, "{},{},{},{}", o.timestamp, o.velocity.x, o.velocity.y, o.velocity.z).unwrap();
    }
    write_text(&dir.join("odom.csv"), &odom)?;
    write_json_lines(&dir.join("frames.jsonl"), &world.frames)?;

    let detections: usize = world.frames.iter().map(|f| f.detections.len()).sum();
    Ok(format!(
        "{}: {} imu, {} odometer, {} camera frames ({} detections), {} lamps -> {}",
        s.name,
        world.imu.samples.len(),
        world.odom.len(),
        world.frames.len(),
        detections,
        world.map.len(),
        dir.display()
    ))
}

#[derive(Debug, Serialize)]
pub struct LocalizeMetrics {
    pub scenario: String,
    pub seed: u64,
    pub options: PipelineOptions,
    pub path_length: f64,
    pub ate: Ate,
    /// Translation ATE as a percentage of the path length.
    pub relative_error_percent: f64,
    pub mean_nees: f64,
    pub final_position_error: f64,
    /// Matches per stage.
    pub matches: BTreeMap<String, usize>,
    pub events: usize,
}

fn options_from(args: &LocalizeArgs, base: PipelineOptions) -> PipelineOptions {
    PipelineOptions {
        vision: base.vision && !args.no_vision,
        extension: base.extension && !args.no_extension,
        degeneration: base.degeneration && !args.no_degeneration,
        recovery: base.recovery && !args.no_recovery,
    }
}

pub fn cmd_localize(args: &LocalizeArgs) -> Result<String, CliError> {
    let mut s = load_scenario(&args.scenario)?;
    s.options = options_from(args, s.options);
    if args.runs == 0 {
        return Err(CliError::Input("--runs must be at least 1".into()));
    }
    create_dir(&args.out)?;
    if args.runs > 1 {
        if args.map.is_some() {
            return Err(CliError::Input("--map cannot be combined with --runs".into()));
        }
        let summary: MonteCarloSummary = monte_carlo(&s, args.runs)?;
        write_json(&args.out.join("montecarlo.json"), &summary)?;
        return Ok(format!(
            "{} runs: mean NEES {:.2}, worst final error {:.3} m -> {}",
            summary.runs.len(),
            summary.mean_nees,
            summary.max_final_position_error,
            args.out.display()
        ));
    }

    let mut world = World::generate(&s)?;
    if let Some(path) = &args.map {
        world.map = load_map(path)?;
    }
    let out = run_pipeline(&world);
    let estimate = out.estimate_poses();
    let ate = compute_ate(&estimate, &world.truth_poses())?;
    let nees = out.nees_series(&world);
    let mut matches = BTreeMap::new();
    for m in &out.matches {
        *matches.entry(serde_json::to_value(m.stage).expect("stage").as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    let length = path_length(&world.truth);
    let metrics = LocalizeMetrics {
        scenario: s.name.clone(),
        seed: s.seed,
        options: s.options,
        path_length: length,
        ate,
        relative_error_percent: 100.0 * ate.translation_rmse / length.max(f64::EPSILON),
        mean_nees: nees.iter().sum::<f64>() / nees.len().max(1) as f64,
        final_position_error: out.position_errors(&world).last().map_or(0.0, |(_, e)| e.norm()),
        matches,
        events: out.events.len(),
    };
    let dir = &args.out;
    write_trajectory_csv(&dir.join("trajectory.csv"), &estimate)?;
    write_trajectory_csv(&dir.join("truth.csv"), &world.truth_poses())?;
    write_json_lines(&dir.join("matches.jsonl"), &out.matches)?;
    write_json_lines(&dir.join("events.jsonl"), &out.events)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(format!(
        "{} seed {}: ATE {:.3} m ({:.3}% of {:.1} m), {:.3} deg; mean NEES {:.2} -> {}",
        metrics.scenario,
        metrics.seed,
        ate.translation_rmse,
        metrics.relative_error_percent,
        length,
        ate.rotation_rmse_deg,
        metrics.mean_nees,
        dir.display()
    ))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let estimate = read_trajectory_csv(&args.estimate)?;
    let truth = read_trajectory_csv(&args.truth)?;
    if estimate.is_empty() || truth.is_empty() {
        return Err(CliError::Input("trajectory files must not be empty".into()));
    }
    let ate = compute_ate(&estimate, &truth)?;
    if let Some(path) = &args.json {
        write_json(path, &ate)?;
    }
    Ok(format!("ATE translation {:.6} m, rotation {:.6} deg over {} poses", ate.translation_rmse, ate.rotation_rmse_deg, ate.pairs))
}
