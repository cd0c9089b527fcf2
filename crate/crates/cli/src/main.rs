//! `ceamcl`: map and log generation, filter runs, comparisons and sweeps.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use ceamcl::config::Config;
use ceamcl::driver::Variant;
use ceamcl::error::Error;
use ceamcl::harness::{self, Scenario, StepRecord};
use ceamcl::models::default_bearings;
use ceamcl::rng::seeded;
use ceamcl::world::{build_asymmetric_room, build_symmetric_map, OccupancyGrid, Pose};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  the computation failed (for example an unreachable goal)
  2  usage error
  3  unknown filter variant
  4  an input file could not be read or parsed
  5  an output file could not be written";

#[derive(Parser)]
#[command(name = "ceamcl", version, about = "Coevolution-based adaptive Monte Carlo localization", after_help = EXIT_CODES)]
struct Cli {
    /// `key = value` file applied over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key after the file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a benchmark occupancy grid.
    GenMap(GenMapArgs),
    /// Drive a simulated robot along a planned route and record the log.
    GenLog(GenLogArgs),
    /// Run one filter variant over one log.
    Run(RunArgs),
    /// Run every variant over a set of logs and seeds.
    Compare(CompareArgs),
    /// Sweep one config key and record CEAMCL sample-size curves.
    Sweep(SweepArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Args)]
struct GenMapArgs {
    #[arg(long, default_value_t = 15.0)]
    side: f64,
    #[arg(long, default_value_t = 2)]
    rooms: usize,
    #[arg(long, default_value_t = 1.0)]
    door: f64,
    #[arg(long, default_value_t = 0.1)]
    resolution: f64,
    /// A single room with asymmetric furniture instead of the room grid.
    #[arg(long)]
    asymmetric: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenLogArgs {
    #[arg(long)]
    map: PathBuf,
    /// Start pose `x,y,theta`.
    #[arg(long, value_parser = parse_pose)]
    start: Pose,
    /// Waypoint `x,y`; repeat to chain legs.
    #[arg(long = "goal", required = true, value_parser = parse_point)]
    goals: Vec<(f64, f64)>,
    #[arg(long, env = "CEAMCL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    map: PathBuf,
    /// Rotational symmetry order of the map, used for ghost poses.
    #[arg(long, default_value_t = 1)]
    symmetry: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    log: PathBuf,
    /// mcl, gmcl or ceamcl.
    #[arg(long)]
    variant: String,
    #[arg(long, env = "CEAMCL_SEED", default_value_t = 0)]
    seed: u64,
    /// Per-step CSV.
    #[arg(long)]
    out: PathBuf,
    /// Run summary as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Add per-step wall time to the CSV.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    /// Seeds to run; defaults to the config's `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Give MCL and GMCL the mean CEAMCL sample count.
    #[arg(long)]
    match_budget: bool,
    /// Per-variant summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-step CSV of every run.
    #[arg(long)]
    steps: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    log: PathBuf,
    /// Config key to vary.
    #[arg(long, default_value = "delta")]
    param: String,
    #[arg(long, required = true, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Long-form curves CSV.
    #[arg(long)]
    out: PathBuf,
    /// Steady-state table as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("unknown variant {0:?}; expected mcl, gmcl or ceamcl")]
    UnknownVariant(String),
    #[error("cannot read {}: {source}", path.display())]
    Input { path: PathBuf, source: Error },
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(_) => 1,
            CliError::Usage(_) => 2,
            CliError::UnknownVariant(_) => 3,
            CliError::Input { .. } => 4,
            CliError::Output { .. } => 5,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_numbers(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_pose(s: &str) -> std::result::Result<Pose, String> {
    let v = parse_numbers(s, 3)?;
    Ok(Pose::new(v[0], v[1], v[2]))
}

fn parse_point(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_numbers(s, 2)?;
    Ok((v[0], v[1]))
}

fn input<T>(path: &Path, r: ceamcl::error::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let fail = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn load_config(cli: &Cli) -> CliResult<Config> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        let text = input(path, std::fs::read_to_string(path).map_err(Error::from))?;
        input(path, config.apply_text(&text))?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn load_scenario(args: &ScenarioArgs) -> CliResult<Scenario> {
    if args.symmetry == 0 {
        return Err(CliError::Usage("--symmetry must be at least 1".into()));
    }
    let map = input(&args.map, OccupancyGrid::load(&args.map))?;
    Ok(Scenario {
        map: Arc::new(map),
        symmetry: args.symmetry,
    })
}

fn load_log(path: &Path) -> CliResult<Vec<StepRecord>> {
    input(path, harness::load_log(path))
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    s.parse().map_err(|_| CliError::UnknownVariant(s.to_string()))
}

fn seeds_or_default(seeds: &[u64], config: &Config) -> CliResult<Vec<u64>> {
    let seeds = if seeds.is_empty() {
        config.seeds.clone()
    } else {
        seeds.to_vec()
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".into()));
    }
    Ok(seeds)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn gen_map(args: &GenMapArgs) -> CliResult<()> {
    let map = if args.asymmetric {
        build_asymmetric_room(args.side, args.resolution)
    } else {
        build_symmetric_map(args.side, args.rooms, args.door, args.resolution)
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(&args.out, &map.to_text())
}

fn gen_log(args: &GenLogArgs, config: &Config) -> CliResult<()> {
    let map = input(&args.map, OccupancyGrid::load(&args.map))?;
    let log = harness::generate_route_log(
        &map,
        args.start,
        &args.goals,
        &config.noise,
        config.step_len,
        &default_bearings(config.beams),
        config.max_range,
        &mut seeded(args.seed),
    )?;
    write_atomic(&args.out, &harness::log_to_text(&log)?)
}

#[derive(Serialize)]
struct RunSummary {
    variant: Variant,
    seed: u64,
    steps: usize,
    success: bool,
    converged_step: Option<usize>,
    expired_step: Option<usize>,
    diverged_at: Option<usize>,
    modes_lost_step: Option<usize>,
    final_error: Option<f64>,
    mean_samples: f64,
    final_samples: Option<usize>,
    final_species: Option<usize>,
}

fn run(args: &RunArgs, config: Config) -> CliResult<()> {
    let variant = parse_variant(&args.variant)?;
    let scenario = load_scenario(&args.scenario)?;
    let log = load_log(&args.log)?;
    let m = harness::run_single(&scenario, &log, variant, &Arc::new(config), args.seed, 0)?;
    write_atomic(&args.out, &harness::steps_csv(std::slice::from_ref(&m), args.timing))?;
    if let Some(path) = &args.summary {
        let summary = RunSummary {
            variant,
            seed: m.seed,
            steps: m.errors.len(),
            success: m.success,
            converged_step: m.converged_step,
            expired_step: m.expired_step,
            diverged_at: m.diverged_at,
            modes_lost_step: m.modes_lost_step,
            final_error: m.errors.last().copied(),
            mean_samples: m.mean_samples(),
            final_samples: m.samples.last().copied(),
            final_species: m.species.last().copied(),
        };
        write_atomic(path, &to_json(&summary))?;
    }
    Ok(())
}

fn compare(args: &CompareArgs, config: Config) -> CliResult<()> {
    let scenario = load_scenario(&args.scenario)?;
    let logs: Vec<Vec<StepRecord>> = args.logs.iter().map(|p| load_log(p)).collect::<CliResult<_>>()?;
    let seeds = seeds_or_default(&args.seeds, &config)?;
    let config = Arc::new(config);
    let cea = harness::run_experiment(&scenario, &logs, Variant::Ceamcl, &config, &seeds)?;
    let cea_summary = harness::summarize_runs(Variant::Ceamcl, &cea);
    let fixed = if args.match_budget {
        let mut c = (*config).clone();
        c.fixed_n = (cea_summary.mean_samples.round() as usize).max(1);
        Arc::new(c)
    } else {
        config.clone()
    };
    let mut rows = Vec::new();
    let mut all_runs = Vec::new();
    for v in [Variant::Mcl, Variant::Gmcl] {
        let runs = harness::run_experiment(&scenario, &logs, v, &fixed, &seeds)?;
        rows.push(harness::summarize_runs(v, &runs));
        all_runs.extend(runs);
    }
    rows.push(cea_summary);
    all_runs.extend(cea);
    write_atomic(&args.out, &harness::summary_csv(&rows))?;
    if let Some(path) = &args.steps {
        write_atomic(path, &harness::steps_csv(&all_runs, false))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    param: String,
    value: f64,
    steady_state: f64,
    predicted_equilibrium: f64,
    diverged_runs: usize,
}

fn sweep(args: &SweepArgs, config: Config) -> CliResult<()> {
    if !ceamcl::config::KEYS.contains(&args.param.as_str()) || args.param == "seeds" {
        return Err(CliError::Usage(format!("cannot sweep {:?}", args.param)));
    }
    let scenario = load_scenario(&args.scenario)?;
    let log = load_log(&args.log)?;
    let seeds = seeds_or_default(&args.seeds, &config)?;
    let curves =
        harness::sweep_param(&scenario, &log, &args.param, &args.values, &config, &seeds).map_err(|e| match e {
            Error::InvalidParameter(_) => CliError::Usage(e.to_string()),
            other => CliError::Run(other),
        })?;
    write_atomic(&args.out, &harness::sweep_csv(&curves))?;
    if let Some(path) = &args.summary {
        let rows: Vec<SweepRow> = curves
            .iter()
            .map(|c| SweepRow {
                param: c.param.clone(),
                value: c.value,
                steady_state: c.steady_state,
                predicted_equilibrium: c.predicted_equilibrium,
                diverged_runs: c.diverged_runs,
            })
            .collect();
        write_atomic(path, &to_json(&rows))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::GenMap(a) => gen_map(a),
        Command::GenLog(a) => gen_log(a, &config),
        Command::Run(a) => run(a, config),
        Command::Compare(a) => compare(a, config),
        Command::Sweep(a) => sweep(a, config),
        Command::Config => {
            print!("{}", config.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ceamcl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
