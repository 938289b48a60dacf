use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crowdmotion_core::eval::{self, Ablation, DataFormat, MetricMode, ModelKind, PredictionModel, PredictionTask};
use crowdmotion_core::kinematics::{
    estimate_trackable_set, format_cache_record, parse_cache, AgentProfile, CalibratedProfile, EstimationGrid,
    ProfileRef,
};
use crowdmotion_core::planner::{self, Controller, DriveConfig};
use crowdmotion_core::simulator::{self, Behavior, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(
    name = "crowdmotion",
    version,
    about = "Heterogeneous traffic motion model: calibration, simulation, prediction and driving benchmarks"
)]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate trackable velocity sets and write the cache file.
    EstimateKinematics(KinematicsArgs),
    /// Run a crowd simulation and log trajectories and traffic metrics.
    Simulate(SimulateArgs),
    /// Score trajectory predictions on a dataset.
    Evaluate(EvaluateArgs),
    /// Run the closed-loop driving benchmark.
    Drive(DriveArgs),
}

#[derive(Args, Debug)]
struct KinematicsArgs {
    /// TOML file with `[[profile]]` tables; the built-in profiles otherwise.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Tracking-error bound, meters.
    #[arg(long)]
    eps: Option<f64>,
    /// Tracking horizon, seconds.
    #[arg(long)]
    tau: Option<f64>,
    /// Cache file, relative to --out-dir.
    #[arg(long, default_value = "trackable.cache")]
    cache: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long, value_enum)]
    behavior: Option<BehaviorArg>,
    #[arg(long)]
    duration: Option<f64>,
    /// Trackable-set cache to use instead of calibrating.
    #[arg(long)]
    kinematics_cache: Option<PathBuf>,
    #[arg(long, default_value = "trajectories.csv")]
    trajectories: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BehaviorArg {
    Gamma,
    Ttc,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Dataset files (repeatable).
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "plain")]
    format: FormatArg,
    /// Models to score (repeatable).
    #[arg(long, value_enum, required = true)]
    model: Vec<ModelArg>,
    /// Extra rows for GAMMA models with one part removed (repeatable).
    #[arg(long, value_enum)]
    ablate: Vec<AblateArg>,
    /// Predict non-evaluated neighbours instead of replaying them.
    #[arg(long)]
    closed_loop_neighbors: bool,
    /// Metric for the sampled model.
    #[arg(long, value_enum, default_value = "best")]
    sample_metric: SampleMetricArg,
    /// Fill `runtime_s` with a timing measurement (not reproducible).
    #[arg(long)]
    measure_runtime: bool,
    #[arg(long)]
    obs_len: Option<usize>,
    #[arg(long)]
    pred_len: Option<usize>,
    #[arg(long)]
    kinematics_cache: Option<PathBuf>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Plain,
    Typed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Gamma,
    #[value(name = "gamma-s")]
    GammaS,
    Linear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblateArg {
    Kinematics,
    Polygon,
    Intention,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SampleMetricArg {
    Best,
    Average,
}

#[derive(Args, Debug)]
struct DriveArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long, value_enum)]
    controller: ControllerArg,
    #[arg(long, default_value_t = 1)]
    episodes: u64,
    /// Search expansions per decision.
    #[arg(long)]
    max_expansions: Option<usize>,
    /// Also write the ego belief of episode 0 after every decision.
    #[arg(long)]
    belief_trace: Option<PathBuf>,
    #[arg(long)]
    kinematics_cache: Option<PathBuf>,
    #[arg(long, default_value = "drive.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ControllerArg {
    Pomdp,
    Rollout,
    Gamma,
}

/// Error with the diagnostic class printed as `error[<kind>]`.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    error: anyhow::Error,
}

trait Kind<T> {
    fn kind(self, kind: &'static str) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Kind<T> for std::result::Result<T, E> {
    fn kind(self, kind: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure { kind, error: e.into() })
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = format!("{:#}", f.error).replace('\n', " ");
            eprintln!("error[{}]: {message}", f.kind);
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure { kind: "usage", error: anyhow!("--threads must be at least 1") });
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().kind("usage")?;
    }
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display())).kind("io")?;
    let started = Instant::now();
    let ctx = RunContext { out_dir: cli.out_dir.clone(), seed: cli.seed, threads: cli.threads, started };
    match cli.command {
        Command::EstimateKinematics(a) => estimate_kinematics(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Drive(a) => drive(&ctx, a),
    }
}

struct RunContext {
    out_dir: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    started: Instant,
}

/// Outputs are staged next to their final names and renamed once the
/// manifest is on disk.
struct Staged {
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    fn new() -> Self {
        Staged { files: Vec::new() }
    }

    fn create(&mut self, path: PathBuf) -> Outcome<BufWriter<fs::File>> {
        let tmp = path.with_extension(format!(
            "{}.partial",
            path.extension().map_or(String::new(), |e| e.to_string_lossy().into_owned())
        ));
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display())).kind("io")?;
        self.files.push((tmp, path));
        Ok(BufWriter::new(file))
    }

    fn finish(
        self,
        ctx: &RunContext,
        command: &str,
        config: Value,
        overrides: Vec<String>,
        seed: Value,
    ) -> Outcome<()> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "threads": ctx.threads,
            "config": config,
            "overrides": overrides,
            "outputs": self.files.iter().map(|(_, p)| p.display().to_string()).collect::<Vec<_>>(),
            "wall_time_s": ctx.started.elapsed().as_secs_f64(),
        });
        let path = ctx.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).kind("io")?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display())).kind("io")?;
        for (tmp, path) in self.files {
            fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display())).kind("io")?;
        }
        Ok(())
    }
}

fn output(ctx: &RunContext, name: &Path) -> PathBuf {
    ctx.out_dir.join(name)
}

/// Built-in profiles, calibrated or taken from a cache file. Cache records
/// whose horizon or error bound differ from the defaults are recomputed.
fn load_profiles(cache: Option<&Path>) -> Outcome<Vec<ProfileRef>> {
    let cached = match cache {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).kind("io")?;
            parse_cache(&text).with_context(|| format!("parsing {}", path.display())).kind("config")?
        }
        None => Vec::new(),
    };
    AgentProfile::builtin()
        .into_iter()
        .map(|profile| {
            let grid = EstimationGrid::for_kind(&profile.kind);
            match cached
                .iter()
                .find(|(n, set)| *n == profile.name && set.tau == grid.tau && set.eps_max == grid.eps_max)
            {
                Some((_, set)) => Ok(Arc::new(CalibratedProfile { profile, trackable: set.clone() })),
                None => CalibratedProfile::calibrate(profile).kind("config"),
            }
        })
        .collect()
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    profile: Vec<AgentProfile>,
}

fn estimate_kinematics(ctx: &RunContext, args: KinematicsArgs) -> Outcome<()> {
    let profiles = match &args.profiles {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).kind("io")?;
            let file: ProfileFile =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display())).kind("config")?;
            file.profile
        }
        None => AgentProfile::builtin(),
    };
    let cache_path = output(ctx, &args.cache);
    let mut records: BTreeMap<String, String> = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(&cache_path) {
        for (name, set) in
            parse_cache(&text).with_context(|| format!("parsing {}", cache_path.display())).kind("config")?
        {
            records.insert(name.clone(), format_cache_record(&name, &set));
        }
    }
    let mut overrides = Vec::new();
    if args.eps.is_some() {
        overrides.push("eps".to_string());
    }
    if args.tau.is_some() {
        overrides.push("tau".to_string());
    }
    let mut grids = Vec::new();
    for profile in &profiles {
        let mut grid = EstimationGrid::for_kind(&profile.kind);
        grid.eps_max = args.eps.unwrap_or(grid.eps_max);
        grid.tau = args.tau.unwrap_or(grid.tau);
        let set = estimate_trackable_set(profile, &grid).kind("config")?;
        println!("{} {}", profile.name, set.hull.len());
        records.insert(profile.name.clone(), format_cache_record(&profile.name, &set));
        grids.push(json!({ "profile": profile.name, "grid": grid }));
    }
    let mut staged = Staged::new();
    let mut out = staged.create(cache_path)?;
    writeln!(out, "# profile tau eps vx1 vy1 vx2 vy2 ...").kind("io")?;
    for line in records.values() {
        writeln!(out, "{line}").kind("io")?;
    }
    out.flush().kind("io")?;
    drop(out);
    let config = json!({ "profiles": args.profiles.as_ref().map(|p| p.display().to_string()), "grids": grids });
    staged.finish(ctx, "estimate-kinematics", config, overrides, Value::Null)
}

fn simulate(ctx: &RunContext, args: SimulateArgs) -> Outcome<()> {
    let mut config = match &args.scenario {
        Some(path) => ScenarioConfig::load(path).kind("config")?,
        None => ScenarioConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(map) = &args.map {
        config.map = map.clone();
        overrides.push("map".into());
    }
    if let Some(b) = args.behavior {
        config.behavior = match b {
            BehaviorArg::Gamma => Behavior::Gamma,
            BehaviorArg::Ttc => Behavior::Ttc,
        };
        overrides.push("behavior".into());
    }
    if let Some(d) = args.duration {
        config.duration = d;
        overrides.push("duration".into());
    }
    if let Some(s) = ctx.seed {
        config.seed = s;
        overrides.push("seed".into());
    }
    config.validate().kind("config")?;
    let base = args.scenario.as_deref().and_then(Path::parent);
    let road = Arc::new(config.load_map(base).kind("config")?);
    let profiles = load_profiles(args.kinematics_cache.as_deref())?;

    let mut staged = Staged::new();
    let mut traj = staged.create(output(ctx, &args.trajectories))?;
    let mut metrics = staged.create(output(ctx, &args.metrics))?;
    let summary = simulator::run(&config, road, &profiles, &mut traj, &mut metrics).kind("simulation")?;
    traj.flush().kind("io")?;
    metrics.flush().kind("io")?;
    drop((traj, metrics));
    println!(
        "steps {} mean_speed {:.4} congestion {:.4} spawned {} jammed {} finished {}",
        summary.steps,
        summary.mean_speed,
        summary.final_congestion,
        summary.spawned,
        summary.removed_jammed,
        summary.removed_finished
    );
    let resolved = serde_json::to_value(&config).kind("io")?;
    staged.finish(ctx, "simulate", json!({ "scenario": resolved, "summary": summary }), overrides, json!(config.seed))
}

fn evaluate(ctx: &RunContext, args: EvaluateArgs) -> Outcome<()> {
    let format = match args.format {
        FormatArg::Plain => DataFormat::Plain,
        FormatArg::Typed => DataFormat::Typed,
    };
    let mut task = PredictionTask::default();
    task.obs_len = args.obs_len.unwrap_or(task.obs_len);
    task.pred_len = args.pred_len.unwrap_or(task.pred_len);
    task.validate().kind("config")?;
    let seed = ctx.seed.unwrap_or(0);
    let profiles = load_profiles(args.kinematics_cache.as_deref())?;

    let mut models = Vec::new();
    for m in &args.model {
        let kind = match m {
            ModelArg::Gamma => ModelKind::GammaDet,
            ModelArg::GammaS => ModelKind::GammaStochastic,
            ModelArg::Linear => ModelKind::Linear,
        };
        let mut base = PredictionModel::new(kind, profiles.clone());
        base.seed = seed;
        base.closed_loop_neighbors = args.closed_loop_neighbors;
        models.push(base.clone());
        if kind != ModelKind::Linear {
            for a in &args.ablate {
                let name = match a {
                    AblateArg::Kinematics => "kinematics",
                    AblateArg::Polygon => "polygon",
                    AblateArg::Intention => "intention",
                };
                let mut m = base.clone();
                m.ablation = Ablation::default().with(name).kind("config")?;
                models.push(m);
            }
        }
    }

    let mut staged = Staged::new();
    let mut out = staged.create(output(ctx, &args.out))?;
    writeln!(out, "{}", eval::RESULTS_HEADER).kind("io")?;
    let mut datasets = Vec::new();
    for path in &args.data {
        let data = eval::load_trajectories(path, format)
            .with_context(|| format!("loading {}", path.display()))
            .kind("data")?;
        let windows = eval::windows(&data, &task).len();
        for model in &models {
            let preds = eval::predict(&data, &task, model).kind("model")?;
            let mode = match (model.kind, args.sample_metric) {
                (ModelKind::GammaStochastic, SampleMetricArg::Average) => MetricMode::AverageSample,
                (kind, _) => eval::default_metric(kind),
            };
            let metrics = eval::ade_fde(&preds, mode);
            let runtime = if args.measure_runtime {
                let crowd = busiest_frame(&data, &profiles);
                Some(eval::measure_runtime(model, &crowd, data.frame_period, 50).kind("model")?)
            } else {
                None
            };
            eval::write_results_row(&mut out, &data.name, &model.label(), &metrics, windows, runtime).kind("io")?;
            log::info!("{} {}: ade {:.4} fde {:.4}", data.name, model.label(), metrics.ade, metrics.fde);
        }
        datasets
            .push(json!({ "path": path.display().to_string(), "frame_period": data.frame_period, "windows": windows }));
    }
    out.flush().kind("io")?;
    drop(out);
    let config = json!({
        "datasets": datasets,
        "models": models.iter().map(|m| m.label()).collect::<Vec<_>>(),
        "task": { "obs_len": task.obs_len, "pred_len": task.pred_len, "stride": task.stride, "samples": task.samples },
        "closed_loop_neighbors": args.closed_loop_neighbors,
        "gamma": serde_json::to_value(models.first().map(|m| m.params).unwrap_or_default()).kind("io")?,
    });
    let mut overrides = Vec::new();
    if args.obs_len.is_some() {
        overrides.push("obs_len".into());
    }
    if args.pred_len.is_some() {
        overrides.push("pred_len".into());
    }
    staged.finish(ctx, "evaluate", config, overrides, json!(seed))
}

/// Agents of the most populated frame, with finite-difference velocities.
fn busiest_frame(data: &eval::TrajectoryDataset, profiles: &[ProfileRef]) -> Vec<crowdmotion_core::AgentState> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for t in data.tracks.values() {
        for &(f, _) in t {
            *counts.entry(f).or_insert(0) += 1;
        }
    }
    let Some((&frame, _)) = counts.iter().max_by_key(|(f, n)| (**n, std::cmp::Reverse(**f))) else {
        return Vec::new();
    };
    data.tracks
        .iter()
        .filter_map(|(&id, t)| {
            let i = t.iter().position(|&(f, _)| f == frame)?;
            let p = t[i].1;
            let v = if i > 0 { (p - t[i - 1].1) / data.frame_period } else { crowdmotion_core::Vec2::ZERO };
            let profile = profiles.iter().find(|pr| pr.name() == data.type_of(id))?.clone();
            Some(crowdmotion_core::AgentState::new(id, profile, p, v.angle(), v))
        })
        .collect()
}

fn drive(ctx: &RunContext, args: DriveArgs) -> Outcome<()> {
    let mut config = match &args.scenario {
        Some(path) => DriveConfig::load(path).kind("config")?,
        None => DriveConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(map) = &args.map {
        config.sim.map = map.clone();
        overrides.push("map".into());
    }
    if let Some(n) = args.max_expansions {
        config.search.max_expansions = n;
        overrides.push("max_expansions".into());
    }
    config.validate().kind("config")?;
    let seed = ctx.seed.unwrap_or(config.sim.seed);
    let controller = match args.controller {
        ControllerArg::Pomdp => Controller::ContextPomdp,
        ControllerArg::Rollout => Controller::Rollout,
        ControllerArg::Gamma => Controller::GammaControl,
    };
    let base = args.scenario.as_deref().and_then(Path::parent);
    let road = Arc::new(config.sim.load_map(base).kind("config")?);
    let profiles = load_profiles(args.kinematics_cache.as_deref())?;

    let mut staged = Staged::new();
    let mut trace = match &args.belief_trace {
        Some(p) => {
            let mut w = staged.create(output(ctx, p))?;
            writeln!(w, "step,agent_id,hypothesis_index,probability").kind("io")?;
            Some(w)
        }
        None => None,
    };
    let mut report = planner::DriveReport { controller: Some(controller), rows: Vec::new() };
    for episode in 0..args.episodes {
        let sink = if episode == 0 { trace.as_mut().map(|w| w as &mut dyn Write) } else { None };
        let row = planner::drive_episode_traced(&config, road.clone(), &profiles, controller, episode, seed, sink)
            .kind("simulation")?;
        log::info!("episode {episode}: {} steps, {} collisions", row.steps, row.collisions);
        report.rows.push(row);
    }
    if let Some(mut w) = trace {
        w.flush().kind("io")?;
    }
    let mut out = staged.create(output(ctx, &args.out))?;
    planner::write_drive_csv(&mut out, &report).kind("io")?;
    out.flush().kind("io")?;
    drop(out);
    println!(
        "{} episodes {} collisions/step {:.4} avg_speed {:.3} decels/step {:.4}",
        controller.name(),
        args.episodes,
        report.collisions_per_step(),
        report.avg_speed(),
        report.decels_per_step()
    );
    let resolved = serde_json::to_value(&config).kind("io")?;
    staged.finish(
        ctx,
        "drive",
        json!({ "scenario": resolved, "controller": controller.name(), "episodes": args.episodes }),
        overrides,
        json!(seed),
    )
}
