//! End-to-end gridworld transfer experiment.
//!
//! For every condition a target grid and `n_sources` source grids are drawn.
//! Each (condition, source) unit trains the source agent, computes the state
//! (and for SS2, action) distances to the target under every metric, transfers
//! the Q-table with every applicable method and evaluates the result over
//! `n_trials` runs. Units are independent, checkpointed, and merged in sorted
//! order, so the output does not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, relative_performance, DistanceKind, ExperimentRecord, MetricKind, DEFAULT_BONFERRONI_M,
};
use crate::error::{Error, Result};
use crate::gridworld::{self, ConditionConfig, GridSize, GridSpec, ModelingMode, DEFAULT_DENSITY};
use crate::io::{self, fmt_sig};
use crate::mdp::MdpGraph;
use crate::metrics::{hausdorff, DistanceMatrix};
use crate::qlearn::{evaluate_transfer, train_to_criterion, TabularEnv, TrainConfig};
use crate::seed;
use crate::similarity::{song_dprime, ss2_cross, uniform_metric, SongConfig, Ss2Config};
use crate::transfer::{
    transfer, uniform_plan, ActionDistances, ActionLayout, Alg2Mode, QTable, TransferInputs,
    TransferMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub size: GridSize,
    pub rotations: bool,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub conditions: Vec<Condition>,
    pub n_sources: usize,
    pub n_trials: usize,
    pub measurement_steps: usize,
    pub eval_epsilon: f64,
    pub metrics: Vec<MetricKind>,
    pub methods: Vec<TransferMethod>,
    pub master_seed: u64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub density: f64,
    pub modeling_mode: ModelingMode,
    pub ss2: Ss2Config,
    pub song: SongConfig,
    pub uniform_distance: f64,
    pub train: TrainConfig,
    pub alg2_mode: Alg2Mode,
    /// Keep every n-th step of the mean evaluation curve.
    pub curve_stride: usize,
    pub bonferroni_m: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            conditions: Vec::new(),
            n_sources: 10,
            n_trials: 10,
            measurement_steps: 2500,
            eval_epsilon: 0.1,
            metrics: MetricKind::ALL.to_vec(),
            methods: TransferMethod::ALL.to_vec(),
            master_seed: 0,
            jobs: 0,
            density: DEFAULT_DENSITY,
            modeling_mode: ModelingMode::SelfLoop,
            ss2: Ss2Config::default(),
            song: SongConfig::default(),
            uniform_distance: 0.5,
            train: TrainConfig::default(),
            alg2_mode: Alg2Mode::Accumulate,
            curve_stride: 25,
            bonferroni_m: DEFAULT_BONFERRONI_M,
        }
    }
}

impl PipelineConfig {
    /// Full design: two sizes × rotations on/off × rewards 1 and 100,
    /// 100 sources, 50 trials.
    pub fn full() -> Self {
        let mut conditions = Vec::new();
        for size in [GridSize::Large, GridSize::Small] {
            for reward in [1.0, 100.0] {
                for rotations in [false, true] {
                    conditions.push(Condition {
                        size,
                        rotations,
                        reward,
                    });
                }
            }
        }
        PipelineConfig {
            conditions,
            n_sources: 100,
            n_trials: 50,
            ..Self::default()
        }
    }

    /// Small 9×9, reward 100, with and without rotations; 10 sources, 10 trials.
    pub fn desk() -> Self {
        PipelineConfig {
            conditions: [false, true]
                .into_iter()
                .map(|rotations| Condition {
                    size: GridSize::Small,
                    rotations,
                    reward: 100.0,
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::InvalidConfig("no conditions".into()));
        }
        if self.n_trials == 0 || self.measurement_steps == 0 {
            return Err(Error::InvalidConfig("n_trials and measurement_steps must be positive".into()));
        }
        if self.metrics.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig("metrics and methods must be non-empty".into()));
        }
        if self.pairs().is_empty() {
            return Err(Error::InvalidConfig("no valid metric-method pair".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(Error::InvalidConfig("eval_epsilon must lie in [0, 1]".into()));
        }
        self.ss2.validate()?;
        self.train.validate()?;
        for i in 0..self.conditions.len() {
            self.condition_config(i).validate()?;
        }
        Ok(())
    }

    /// Metric-method pairs to run; action-aware methods only with SS2.
    pub fn pairs(&self) -> Vec<(MetricKind, TransferMethod)> {
        let mut out = Vec::new();
        for &m in &self.metrics {
            for &t in &self.methods {
                if m.supports(t) && !out.contains(&(m, t)) {
                    out.push((m, t));
                }
            }
        }
        out
    }

    pub fn expected_records(&self) -> usize {
        self.conditions.len() * self.n_sources * self.pairs().len()
    }

    pub fn condition_config(&self, index: usize) -> ConditionConfig {
        let c = self.conditions[index];
        ConditionConfig {
            size: c.size,
            rotations: c.rotations,
            reward: c.reward,
            n_sources: self.n_sources,
            seed: seed::derive(self.master_seed, &[seed::tag("condition"), index as u64]),
            density: self.density,
            modeling_mode: self.modeling_mode,
        }
    }

    /// Everything that affects results; `jobs` is deliberately left out.
    fn fingerprint(&self) -> u64 {
        let mut canon = self.clone();
        canon.jobs = 0;
        let text = serde_json::to_string(&canon).expect("config serialises");
        seed::tag(&text)
    }
}

/// Mean cumulative episodes over trials at sampled steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub condition: String,
    pub metric: MetricKind,
    pub method: TransferMethod,
    pub source: usize,
    pub step: usize,
    pub mean_episodes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub steps: u64,
    pub episodes: usize,
    pub converged: bool,
    pub optimal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub condition: usize,
    pub source: usize,
    pub training: SourceInfo,
    pub records: Vec<ExperimentRecord>,
    pub curves: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub condition: String,
    pub source: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub curves: Vec<CurvePoint>,
    pub failures: Vec<UnitFailure>,
    pub training: Vec<(String, usize, SourceInfo)>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: u64,
    unit: UnitResult,
}

/// Distances from a source to the target under one metric.
pub struct MetricDistances {
    pub states: DistanceMatrix,
    pub actions: Option<DistanceMatrix>,
}

pub fn metric_distances(
    cfg: &PipelineConfig,
    metric: MetricKind,
    source: &MdpGraph,
    target: &MdpGraph,
) -> Result<MetricDistances> {
    match metric {
        MetricKind::Ss2 => {
            let r = ss2_cross(source, target, cfg.ss2)?;
            if !r.converged {
                warn!("SS2 stopped after {} sweeps without converging", r.iterations);
            }
            Ok(MetricDistances {
                states: r.state_distances(),
                actions: Some(r.action_distances()),
            })
        }
        MetricKind::Song => {
            let r = song_dprime(source, target, cfg.song)?;
            if !r.converged {
                warn!("d' stopped after {} sweeps without converging", r.iterations);
            }
            Ok(MetricDistances {
                states: r.distances()?,
                actions: None,
            })
        }
        MetricKind::Uniform => Ok(MetricDistances {
            states: uniform_metric(source.state_count(), target.state_count(), cfg.uniform_distance)?,
            actions: None,
        }),
    }
}

fn normalized_graph(grid: &GridSpec) -> Result<MdpGraph> {
    MdpGraph::build(&grid.to_mdp().normalize_rewards())
}

/// Train, measure and transfer for one (condition, source) pair.
pub fn run_unit(
    cfg: &PipelineConfig,
    condition: usize,
    target: &GridSpec,
    source_index: usize,
) -> Result<UnitResult> {
    let cond = cfg.condition_config(condition);
    let label = cond.label();
    let source = gridworld::generate_source(&cond, source_index)?;
    let key = |role: &str| [seed::tag(role), condition as u64, source_index as u64];

    let source_env = TabularEnv::from_grid(&source)?;
    let optimal = source.optimal_length()?;
    let mut rng = seed::stream(cfg.master_seed, &key("train"));
    let trained = train_to_criterion(&source_env, optimal, &cfg.train, &mut rng)?;
    if !trained.converged {
        warn!("{label} source {source_index}: training stopped at {} steps without reaching the criterion", trained.steps);
    }
    let training = SourceInfo {
        steps: trained.steps,
        episodes: trained.episodes,
        converged: trained.converged,
        optimal,
    };

    let target_env = TabularEnv::from_grid(target)?;
    let target_optimal = target.optimal_length()?;
    let gs = normalized_graph(&source)?;
    let gt = normalized_graph(target)?;
    let source_layout = ActionLayout::from_graph(&gs);
    let target_layout = ActionLayout::from_graph(&gt);
    let target_states = gt.state_ids().to_vec();

    let mut records = Vec::new();
    let mut curves = Vec::new();
    for &metric in &cfg.metrics {
        let methods: Vec<TransferMethod> = cfg
            .pairs()
            .into_iter()
            .filter(|p| p.0 == metric)
            .map(|p| p.1)
            .collect();
        if methods.is_empty() {
            continue;
        }
        let dist = metric_distances(cfg, metric, &gs, &gt)?;
        let plan = uniform_plan(&dist.states)?;
        let all_s: Vec<usize> = (0..dist.states.rows()).collect();
        let all_t: Vec<usize> = (0..dist.states.cols()).collect();
        let phi = hausdorff(&all_s, &all_t, &dist.states)?;
        let psi = plan.cost;
        let inputs = TransferInputs {
            state_distances: &dist.states,
            action_distances: dist.actions.as_ref().map(|m| ActionDistances {
                matrix: m,
                source: &source_layout,
                target: &target_layout,
            }),
            q_in: &trained.q,
            target_states: &target_states,
        };
        for method in methods {
            let q_out = transfer(method, &inputs, Some(&plan), cfg.alg2_mode)?;
            let (avg, curve) = evaluate(cfg, &target_env, &q_out, condition, source_index)?;
            records.push(ExperimentRecord {
                condition: label.clone(),
                metric,
                method,
                source: source_index,
                avg_episodes: avg,
                rel_perf: relative_performance(avg, cfg.measurement_steps, target_optimal),
                phi,
                psi,
            });
            curves.extend(curve.into_iter().map(|(step, mean_episodes)| CurvePoint {
                condition: label.clone(),
                metric,
                method,
                source: source_index,
                step,
                mean_episodes,
            }));
        }
    }
    Ok(UnitResult {
        condition,
        source: source_index,
        training,
        records,
        curves,
    })
}

/// Average episodes completed over the trials, and the sampled mean curve.
/// Trial `k` uses the same stream for every metric-method pair.
fn evaluate(
    cfg: &PipelineConfig,
    env: &TabularEnv,
    q: &QTable,
    condition: usize,
    source: usize,
) -> Result<(f64, Vec<(usize, f64)>)> {
    let mut totals = vec![0.0; cfg.measurement_steps];
    let mut episodes = 0.0;
    for trial in 0..cfg.n_trials {
        let mut rng = seed::stream(
            cfg.master_seed,
            &[seed::tag("eval"), condition as u64, source as u64, trial as u64],
        );
        let log = evaluate_transfer(env, q, cfg.measurement_steps, cfg.eval_epsilon, &cfg.train, &mut rng)?;
        for (t, done) in totals.iter_mut().zip(log.episodes_completed()) {
            *t += done as f64;
        }
        episodes += log.total_episodes() as f64;
    }
    let n = cfg.n_trials as f64;
    let stride = cfg.curve_stride.max(1);
    let curve = totals
        .iter()
        .enumerate()
        .filter(|(i, _)| (i + 1) % stride == 0 || i + 1 == totals.len())
        .map(|(i, &t)| (i + 1, t / n))
        .collect();
    Ok((episodes / n, curve))
}

fn checkpoint_path(dir: &Path, condition: usize, source: usize) -> PathBuf {
    dir.join(format!("c{condition:02}_s{source:03}.json"))
}

fn load_checkpoint(path: &Path, fingerprint: u64) -> Option<UnitResult> {
    let cp: Checkpoint = io::read_json(path).ok()?;
    (cp.fingerprint == fingerprint).then_some(cp.unit)
}

/// Run the whole design. With an output directory, grids, checkpoints,
/// records, curves and the analysis tables are written there and finished
/// units are reused on a rerun.
pub fn run_experiment(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let fingerprint = cfg.fingerprint();
    let checkpoints = out_dir.map(|d| d.join("checkpoints"));
    if let Some(dir) = &checkpoints {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut targets = Vec::with_capacity(cfg.conditions.len());
    for i in 0..cfg.conditions.len() {
        let cond = cfg.condition_config(i);
        let generated = gridworld::generate(&ConditionConfig { n_sources: 0, ..cond.clone() })?;
        if let Some(dir) = out_dir {
            let grid_dir = dir.join("grids").join(format!("c{i:02}"));
            std::fs::create_dir_all(&grid_dir).map_err(|e| Error::io(&grid_dir, e))?;
            generated.target.save(grid_dir.join("target.json"))?;
            for s in 0..cfg.n_sources {
                gridworld::generate_source(&cond, s)?.save(grid_dir.join(format!("source_{s:03}.json")))?;
            }
        }
        targets.push(generated.target);
    }

    let units: Vec<(usize, usize)> = (0..cfg.conditions.len())
        .flat_map(|c| (0..cfg.n_sources).map(move |s| (c, s)))
        .collect();
    let results: Vec<(usize, usize, Result<UnitResult>)> = pool.install(|| {
        units
            .par_iter()
            .map(|&(c, s)| {
                let path = checkpoints.as_ref().map(|d| checkpoint_path(d, c, s));
                if let Some(unit) = path.as_deref().and_then(|p| load_checkpoint(p, fingerprint)) {
                    return (c, s, Ok(unit));
                }
                let result = run_unit(cfg, c, &targets[c], s);
                if let (Ok(unit), Some(p)) = (&result, &path) {
                    let cp = Checkpoint {
                        fingerprint,
                        unit: unit.clone(),
                    };
                    if let Err(e) = io::write_json(p, &cp) {
                        warn!("could not write checkpoint {}: {e}", p.display());
                    }
                }
                info!("condition {c} source {s} done");
                (c, s, result)
            })
            .collect()
    });

    let mut out = ExperimentOutput::default();
    let mut by_key = BTreeMap::new();
    for (c, s, result) in results {
        let label = cfg.condition_config(c).label();
        match result {
            Ok(unit) => {
                by_key.insert((c, s), unit);
            }
            Err(e) => {
                warn!("{label} source {s} failed: {e}");
                out.failures.push(UnitFailure {
                    condition: label,
                    source: s,
                    error: e.to_string(),
                });
            }
        }
    }
    for ((c, s), unit) in by_key {
        out.training.push((cfg.condition_config(c).label(), s, unit.training));
        out.records.extend(unit.records);
        out.curves.extend(unit.curves);
    }
    let order = |r: &ExperimentRecord| (r.condition.clone(), r.metric, r.method, r.source);
    out.records.sort_by_key(order);
    out.curves
        .sort_by_key(|p| (p.condition.clone(), p.metric, p.method, p.source, p.step));

    if let Some(dir) = out_dir {
        write_outputs(cfg, dir, &out)?;
    }
    Ok(out)
}

fn write_outputs(cfg: &PipelineConfig, dir: &Path, out: &ExperimentOutput) -> Result<()> {
    io::write_json(dir.join("config.json"), cfg)?;
    analysis::write_records_csv(dir.join("records.csv"), &out.records)?;

    let path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["condition", "metric", "method", "source", "step", "mean_episodes"])?;
    for p in &out.curves {
        w.write_record([
            p.condition.clone(),
            p.metric.name().into(),
            p.method.name().into(),
            p.source.to_string(),
            p.step.to_string(),
            fmt_sig(p.mean_episodes),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("training.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["condition", "source", "optimal", "steps", "episodes", "converged"])?;
    for (label, s, info) in &out.training {
        w.write_record([
            label.clone(),
            s.to_string(),
            info.optimal.to_string(),
            info.steps.to_string(),
            info.episodes.to_string(),
            info.converged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    if !out.failures.is_empty() {
        io::write_json(dir.join("failures.json"), &out.failures)?;
    }
    if !out.records.is_empty() {
        write_analysis(dir, &out.records, cfg.bonferroni_m)?;
    }
    Ok(())
}

/// Performance table, both correlation tables and the ANOVA table.
pub fn write_analysis(dir: &Path, records: &[ExperimentRecord], bonferroni_m: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    analysis::write_performance_csv(dir.join("performance.csv"), &analysis::aggregate(records)?)?;
    analysis::write_correlation_csv(
        dir.join("correlation_hausdorff.csv"),
        &analysis::correlations(records, DistanceKind::Phi),
    )?;
    analysis::write_correlation_csv(
        dir.join("correlation_kantorovich.csv"),
        &analysis::correlations(records, DistanceKind::Psi),
    )?;
    analysis::write_anova_csv(dir.join("anova.csv"), &analysis::anova_table(records, bonferroni_m))
}
