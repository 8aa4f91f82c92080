use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use ndarray::s;
use mdpsim_core::analysis::{read_records_csv, relative_performance, DEFAULT_BONFERRONI_M};
use mdpsim_core::experiment::{self, PipelineConfig};
use mdpsim_core::gridworld::{self, ConditionConfig, GridSize, GridSpec, ModelingMode};
use mdpsim_core::io::{self, read_matrix_csv, read_qtable_csv, write_matrix_csv, write_qtable_csv};
use mdpsim_core::metrics::DistanceMatrix;
use mdpsim_core::qlearn::{self, TabularEnv, TrainConfig};
use mdpsim_core::seed;
use mdpsim_core::similarity::{self, song_dprime, ss2_cross, ss2_full, SongConfig, Ss2Config};
use mdpsim_core::transfer::{self, ActionDistances, ActionLayout, Alg2Mode, TransferInputs, TransferMethod};
use mdpsim_core::{MdpGraph, MdpSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mdpsim", version, about = "Structural similarity and Q-table transfer between finite MDPs")]
struct Cli {
    /// Random seed (master seed for `experiment`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file, prefix or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a target gridworld and its source grids.
    Gen(GenArgs),
    /// Check an MDP or grid file.
    Validate { file: PathBuf },
    /// Print node and edge counts of an MDP or grid.
    GraphInfo { file: PathBuf },
    /// Compute state and action distances between two MDPs.
    Sim(SimArgs),
    /// Initialise a target Q-table from a source Q-table and distances.
    Transfer(TransferArgs),
    /// Train a Q-table on a grid until the convergence criterion holds.
    Train(TrainArgs),
    /// Measure learning from an initial Q-table.
    Eval(EvalArgs),
    /// Build the summary tables from an experiment record file.
    Analyze(AnalyzeArgs),
    /// Run the full transfer experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    /// `small`, `large` or `WxH`.
    #[arg(long, default_value = "small", value_parser = parse_size)]
    size: GridSize,
    #[arg(long)]
    rotate: bool,
    #[arg(long, default_value_t = 100.0)]
    reward: f64,
    /// Number of source grids.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = gridworld::DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, value_enum, default_value_t = Mode::SelfLoop)]
    mode: Mode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    SelfLoop,
    Omit,
}

impl From<Mode> for ModelingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::SelfLoop => ModelingMode::SelfLoop,
            Mode::Omit => ModelingMode::Omit,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Ss2,
    Ss2Full,
    Song,
    Uniform,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value_t = Metric::Ss2)]
    metric: Metric,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 0.9995)]
    cs: f64,
    #[arg(long, default_value_t = 0.5)]
    ca: f64,
    /// Discount of the d' baseline.
    #[arg(long, default_value_t = 0.5)]
    song_c: f64,
    /// Constant distance of the uniform baseline.
    #[arg(long, default_value_t = 0.5)]
    uniform_c: f64,
    #[arg(long, default_value_t = similarity::DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long, value_parser = parse_method)]
    method: TransferMethod,
    /// Source Q-table CSV.
    #[arg(long)]
    qin: PathBuf,
    /// Prefix written by `sim`.
    #[arg(long)]
    dist: PathBuf,
    /// Keep only the last source's contribution in t-avg-act.
    #[arg(long)]
    literal: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Initial Q-table; zeros when omitted.
    #[arg(long)]
    qinit: Option<PathBuf>,
    #[arg(long, default_value_t = 2500)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Keep every n-th step in the log.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BONFERRONI_M)]
    bonferroni_m: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON file mirroring the pipeline configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

fn parse_size(s: &str) -> Result<GridSize, String> {
    match s.to_ascii_lowercase().as_str() {
        "small" | "sm" => Ok(GridSize::Small),
        "large" | "lg" => Ok(GridSize::Large),
        other => {
            let (w, h) = other
                .split_once('x')
                .ok_or_else(|| format!("`{s}` is not small, large or WxH"))?;
            let width = w.parse().map_err(|_| format!("bad width in `{s}`"))?;
            let height = h.parse().map_err(|_| format!("bad height in `{s}`"))?;
            Ok(GridSize::Custom { width, height })
        }
    }
}

fn parse_method(s: &str) -> Result<TransferMethod, String> {
    s.parse().map_err(|e: mdpsim_core::Error| e.to_string())
}

/// A model file: an MDP, or a grid together with its MDP.
struct Model {
    spec: MdpSpec,
    grid: Option<GridSpec>,
}

fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("width").is_some() {
        let grid = GridSpec::from_json(&text).with_context(|| format!("grid {}", path.display()))?;
        Ok(Model {
            spec: grid.to_mdp(),
            grid: Some(grid),
        })
    } else {
        let spec = MdpSpec::from_json(&text).with_context(|| format!("MDP {}", path.display()))?;
        Ok(Model { spec, grid: None })
    }
}

fn load_grid(path: &Path) -> Result<GridSpec> {
    GridSpec::load(path).with_context(|| format!("grid {}", path.display()))
}

/// Graph with rewards rescaled to [0, 1], as used by the similarity metrics.
fn similarity_graph(path: &Path) -> Result<MdpGraph> {
    let model = load_model(path)?;
    model.spec.ensure_valid()?;
    Ok(MdpGraph::build(&model.spec.normalize_rewards())?)
}

fn require_out(out: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    out.clone().ok_or_else(|| anyhow!(UsageError(format!("--out <{what}> is required"))))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let dir = require_out(&cli.out, "dir")?;
    let mut cond = ConditionConfig::new(args.size, args.rotate, args.reward, args.n, cli.seed.unwrap_or(0));
    cond.density = args.density;
    cond.modeling_mode = args.mode.into();
    let generated = gridworld::generate(&cond)?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    generated.target.save(dir.join("target.json"))?;
    for (i, source) in generated.sources.iter().enumerate() {
        source.save(dir.join(format!("source_{i:03}.json")))?;
    }
    io::write_json(dir.join("condition.json"), &cond)?;
    println!("{}: target and {} sources in {}", cond.label(), generated.sources.len(), dir.display());
    print!("{}", generated.target.render());
    Ok(())
}

fn cmd_validate(file: &Path) -> Result<()> {
    let model = load_model(file)?;
    let violations = model.spec.validate();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        bail!("{}: {} violation(s)", file.display(), violations.len());
    }
    if let Some(grid) = &model.grid {
        let optimal = grid.optimal_length()?;
        println!("ok: {}x{} grid, optimal path {} steps", grid.width, grid.height, optimal);
    } else {
        println!("ok: {}", model.spec.name);
    }
    Ok(())
}

fn cmd_graph_info(cli: &Cli, file: &Path) -> Result<()> {
    let model = load_model(file)?;
    model.spec.ensure_valid()?;
    let graph = MdpGraph::build(&model.spec)?;
    let summary = graph.summary();
    let text = serde_json::to_string_pretty(&summary)?;
    match &cli.out {
        Some(path) => {
            create_parent(path)?;
            std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_sim(cli: &Cli, args: &SimArgs) -> Result<()> {
    let prefix = require_out(&cli.out, "prefix")?;
    create_parent(&prefix)?;
    let gm = similarity_graph(&args.source)?;
    let gn = similarity_graph(&args.target)?;
    let action_ids = |g: &MdpGraph| (0..g.action_count()).map(|a| g.action_id(a)).collect::<Vec<_>>();

    let (states, actions, meta) = match args.metric {
        Metric::Ss2 | Metric::Ss2Full => {
            let cfg = Ss2Config {
                max_iterations: args.max_iterations,
                ..Ss2Config::with_constants(args.cs, args.ca)
            };
            let (s, a, r) = if args.metric == Metric::Ss2 {
                let r = ss2_cross(&gm, &gn, cfg)?;
                (r.state_distances(), r.action_distances(), r)
            } else {
                let r = ss2_full(&gm, &gn, cfg)?;
                let (nm, am) = (gm.state_count(), gm.action_count());
                let s = r.s.slice(s![..nm, nm..nm + gn.state_count()]).to_owned();
                let a = r.a.slice(s![..am, am..am + gn.action_count()]).to_owned();
                (DistanceMatrix::from_similarity(&s)?, DistanceMatrix::from_similarity(&a)?, r)
            };
            let meta = json!({
                "iterations": r.iterations,
                "converged": r.converged,
                "config": cfg,
            });
            (s, Some(a), meta)
        }
        Metric::Song => {
            let cfg = SongConfig {
                c: args.song_c,
                max_iterations: args.max_iterations,
                ..SongConfig::default()
            };
            let r = song_dprime(&gm, &gn, cfg)?;
            let meta = json!({
                "iterations": r.iterations,
                "converged": r.converged,
                "config": cfg,
            });
            (r.distances()?, None, meta)
        }
        Metric::Uniform => {
            let d = similarity::uniform_metric(gm.state_count(), gn.state_count(), args.uniform_c)?;
            let meta = json!({
                "iterations": 0,
                "converged": true,
                "config": { "c": args.uniform_c },
            });
            (d, None, meta)
        }
    };
    if !meta["converged"].as_bool().unwrap_or(true) {
        warn!("stopped after {} sweeps without converging", meta["iterations"]);
    }

    write_matrix_csv(with_suffix(&prefix, ".S.csv"), "state", gm.state_ids(), gn.state_ids(), states.values())?;
    if let Some(a) = &actions {
        write_matrix_csv(with_suffix(&prefix, ".A.csv"), "action", &action_ids(&gm), &action_ids(&gn), a.values())?;
    }
    let mut meta = meta;
    meta["metric"] = json!(args.metric.to_possible_value().expect("named").get_name());
    meta["source"] = json!(args.source.display().to_string());
    meta["target"] = json!(args.target.display().to_string());
    meta["action_distances"] = json!(actions.is_some());
    io::write_json(with_suffix(&prefix, ".meta.json"), &meta)?;
    println!(
        "{}: {}x{} states, {} sweeps, converged {}",
        meta["metric"].as_str().unwrap_or_default(),
        gm.state_count(),
        gn.state_count(),
        meta["iterations"],
        meta["converged"]
    );
    Ok(())
}

/// Action layout recovered from `state:label` headers.
fn layout_from_ids(ids: &[String], states: &[String], labels: &[String]) -> Result<ActionLayout> {
    let mut per_state = vec![Vec::new(); states.len()];
    for (node, id) in ids.iter().enumerate() {
        let (state, label) = id
            .rsplit_once(':')
            .ok_or_else(|| anyhow!("action id `{id}` is not of the form state:label"))?;
        let s = states
            .iter()
            .position(|x| x == state)
            .ok_or_else(|| anyhow!("action `{id}` refers to unknown state `{state}`"))?;
        let l = labels
            .iter()
            .position(|x| x == label)
            .ok_or_else(|| anyhow!("action `{id}` has a label missing from the Q-table"))?;
        per_state[s].push((node, l));
    }
    Ok(ActionLayout::new(per_state))
}

fn cmd_transfer(cli: &Cli, args: &TransferArgs) -> Result<()> {
    let out = require_out(&cli.out, "csv")?;
    let q_in = read_qtable_csv(&args.qin).with_context(|| format!("Q-table {}", args.qin.display()))?;
    let s_path = with_suffix(&args.dist, ".S.csv");
    let s = read_matrix_csv(&s_path).with_context(|| format!("distances {}", s_path.display()))?;
    if s.row_ids != q_in.states {
        bail!("state rows of {} do not match the Q-table states", s_path.display());
    }
    let states = DistanceMatrix::new(s.values)?;

    let action_parts = if args.method.needs_action_distances() {
        let a_path = with_suffix(&args.dist, ".A.csv");
        if !a_path.exists() {
            bail!("{} requires action distances but {} is missing", args.method, a_path.display());
        }
        let a = read_matrix_csv(&a_path).with_context(|| format!("distances {}", a_path.display()))?;
        let source = layout_from_ids(&a.row_ids, &s.row_ids, &q_in.actions)?;
        let target = layout_from_ids(&a.col_ids, &s.col_ids, &q_in.actions)?;
        Some((DistanceMatrix::new(a.values)?, source, target))
    } else {
        None
    };
    let inputs = TransferInputs {
        state_distances: &states,
        action_distances: action_parts.as_ref().map(|(matrix, source, target)| ActionDistances {
            matrix,
            source,
            target,
        }),
        q_in: &q_in,
        target_states: &s.col_ids,
    };
    let mode = if args.literal {
        Alg2Mode::Literal
    } else {
        Alg2Mode::Accumulate
    };
    let q_out = transfer::transfer(args.method, &inputs, None, mode)?;
    create_parent(&out)?;
    write_qtable_csv(&out, &q_out)?;
    println!("{}: {} target states written to {}", args.method, q_out.states.len(), out.display());
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = require_out(&cli.out, "csv")?;
    let grid = load_grid(&args.grid)?;
    let env = TabularEnv::from_grid(&grid)?;
    let optimal = grid.optimal_length()?;
    let mut cfg = TrainConfig::default();
    if let Some(max) = args.max_steps {
        cfg.max_steps = max;
    }
    let mut rng = seed::stream(cli.seed.unwrap_or(0), &[seed::tag("train")]);
    let outcome = qlearn::train_to_criterion(&env, optimal, &cfg, &mut rng)?;
    if !outcome.converged {
        warn!("criterion not reached within {} steps", cfg.max_steps);
    }
    create_parent(&out)?;
    write_qtable_csv(&out, &outcome.q)?;
    println!(
        "trained {} steps, {} episodes, converged {} (optimal path {})",
        outcome.steps, outcome.episodes, outcome.converged, optimal
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let out = require_out(&cli.out, "csv")?;
    if args.trials == 0 {
        return Err(anyhow!(UsageError("--trials must be positive".into())));
    }
    let grid = load_grid(&args.grid)?;
    let env = TabularEnv::from_grid(&grid)?;
    let optimal = grid.optimal_length()?;
    let q_init = match &args.qinit {
        Some(path) => read_qtable_csv(path).with_context(|| format!("Q-table {}", path.display()))?,
        None => env.zero_q(),
    };
    let cfg = TrainConfig::default();
    let master = cli.seed.unwrap_or(0);
    let mut logs = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let mut rng = seed::stream(master, &[seed::tag("eval"), trial as u64]);
        logs.push(qlearn::evaluate_transfer(&env, &q_init, args.steps, args.eps, &cfg, &mut rng)?);
    }
    create_parent(&out)?;
    qlearn::write_step_logs(&out, &logs, args.stride)?;
    let mean = logs.iter().map(|l| l.total_episodes() as f64).sum::<f64>() / logs.len() as f64;
    println!(
        "mean episodes {:.2}, relative performance {:.2}",
        mean,
        relative_performance(mean, args.steps, optimal)
    );
    Ok(())
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<()> {
    let dir = require_out(&cli.out, "dir")?;
    let records = read_records_csv(&args.records).with_context(|| format!("records {}", args.records.display()))?;
    if records.is_empty() {
        bail!("{} holds no records", args.records.display());
    }
    experiment::write_analysis(&dir, &records, args.bonferroni_m)?;
    println!("{} records analysed into {}", records.len(), dir.display());
    Ok(())
}

fn cmd_experiment(cli: &Cli, args: &ExperimentArgs) -> Result<()> {
    let dir = require_out(&cli.out, "dir")?;
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => io::read_json::<PipelineConfig>(path).with_context(|| format!("config {}", path.display()))?,
        (None, Some(Preset::Full)) => PipelineConfig::full(),
        (None, Some(Preset::Desk)) => PipelineConfig::desk(),
        (None, None) => return Err(anyhow!(UsageError("one of --config or --preset is required".into()))),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    info!("running {} units", cfg.conditions.len() * cfg.n_sources);
    let out = experiment::run_experiment(&cfg, Some(&dir))?;
    println!(
        "{} records, {} failed units, outputs in {}",
        out.records.len(),
        out.failures.len(),
        dir.display()
    );
    for f in &out.failures {
        eprintln!("failed: {f:?}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Validate { file } => cmd_validate(file),
        Command::GraphInfo { file } => cmd_graph_info(cli, file),
        Command::Sim(a) => cmd_sim(cli, a),
        Command::Transfer(a) => cmd_transfer(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Analyze(a) => cmd_analyze(cli, a),
        Command::Experiment(a) => cmd_experiment(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            warn!("thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
