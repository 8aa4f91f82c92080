//! Performance and MDP-level distance summaries, Pearson correlation, one-way
//! ANOVA with Bonferroni correction, and the result tables built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::io::fmt_sig;
use crate::metrics::{hausdorff, DistanceMatrix, TransportPlan};
use crate::transfer::{uniform_plan, TransferMethod};

/// State distance used to drive a transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ss2,
    Song,
    Uniform,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Ss2, MetricKind::Song, MetricKind::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ss2 => "ss2",
            MetricKind::Song => "song",
            MetricKind::Uniform => "uniform",
        }
    }

    pub fn table_label(self) -> &'static str {
        match self {
            MetricKind::Ss2 => "SS2",
            MetricKind::Song => "Song",
            MetricKind::Uniform => "Uniform",
        }
    }

    /// Only SS2 yields action distances.
    pub fn supports(self, method: TransferMethod) -> bool {
        self == MetricKind::Ss2 || !method.needs_action_distances()
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::parse("metric", format!("unknown metric `{s}`")))
    }
}

/// The eight metric-method pairs, in the order used by the correlation tables.
pub const METRIC_METHODS: [(MetricKind, TransferMethod); 8] = [
    (MetricKind::Ss2, TransferMethod::TStateAct),
    (MetricKind::Ss2, TransferMethod::TAvgAct),
    (MetricKind::Ss2, TransferMethod::TState),
    (MetricKind::Ss2, TransferMethod::TAvg),
    (MetricKind::Song, TransferMethod::TState),
    (MetricKind::Song, TransferMethod::TAvg),
    (MetricKind::Uniform, TransferMethod::TState),
    (MetricKind::Uniform, TransferMethod::TAvg),
];

pub fn pair_label(metric: MetricKind, method: TransferMethod) -> String {
    format!("{}, {}", metric.table_label(), method.table_label())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub condition: String,
    pub metric: MetricKind,
    pub method: TransferMethod,
    pub source: usize,
    pub avg_episodes: f64,
    pub rel_perf: f64,
    pub phi: f64,
    pub psi: f64,
}

pub fn write_records_csv(path: impl AsRef<Path>, records: &[ExperimentRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "condition", "metric", "method", "source", "avg_episodes", "rel_perf", "phi", "psi",
    ])?;
    for r in records {
        w.write_record([
            r.condition.clone(),
            r.metric.name().into(),
            r.method.name().into(),
            r.source.to_string(),
            fmt_sig(r.avg_episodes),
            fmt_sig(r.rel_perf),
            fmt_sig(r.phi),
            fmt_sig(r.psi),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// `100 · optimal / (steps / avg_episodes)`, and 0 when no episode finished.
pub fn relative_performance(avg_episodes: f64, measurement_steps: usize, optimal_length: usize) -> f64 {
    if avg_episodes <= 0.0 || measurement_steps == 0 {
        return 0.0;
    }
    let episode_performance = measurement_steps as f64 / avg_episodes;
    100.0 * optimal_length as f64 / episode_performance
}

/// Hausdorff reduction of a state distance matrix over all states.
pub fn mdp_distance_hausdorff(d: &DistanceMatrix) -> Result<f64> {
    let rows: Vec<usize> = (0..d.rows()).collect();
    let cols: Vec<usize> = (0..d.cols()).collect();
    hausdorff(&rows, &cols, d)
}

/// Transport cost between uniform distributions over the two state sets.
pub fn mdp_distance_kantorovich(d: &DistanceMatrix) -> Result<f64> {
    Ok(uniform_plan(d)?.cost)
}

/// Same as [`mdp_distance_kantorovich`] for an already solved uniform plan.
pub fn kantorovich_from_plan(plan: &TransportPlan) -> f64 {
    plan.cost
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "pearson inputs have lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("pearson needs at least two points".into()));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// Upper tail of the F distribution through the regularised incomplete beta.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::Degenerate("ANOVA needs at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Degenerate(format!(
            "every ANOVA group needs at least two samples, found {}",
            g.len()
        )));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();
    if ss_within == 0.0 && ss_between == 0.0 {
        return Err(Error::Degenerate("all ANOVA samples are identical".into()));
    }
    let f = if ss_within == 0.0 {
        f64::INFINITY
    } else {
        (ss_between / df_between as f64) / (ss_within / df_within as f64)
    };
    Ok(AnovaResult {
        f,
        p: f_survival(f, df_between as f64, df_within as f64),
        df_between,
        df_within,
    })
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let m = mean(xs);
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary {
            n: xs.len(),
            mean: m,
            std,
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ({:.1})", self.mean, self.std)
    }
}

/// Experimental factors parsed from a condition label such as `Sm, R100, Rot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Factors {
    pub dimension: String,
    pub reward: String,
    pub rotate: bool,
}

impl Factors {
    pub fn parse(label: &str) -> Factors {
        let parts: Vec<&str> = label.split(',').map(str::trim).collect();
        Factors {
            dimension: parts.first().copied().unwrap_or_default().to_string(),
            reward: parts
                .iter()
                .find(|p| p.starts_with('R') && *p != &"Rot")
                .copied()
                .unwrap_or_default()
                .to_string(),
            rotate: parts.contains(&"Rot"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    Dimension,
    Rotate,
    Reward,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Dimension, Factor::Rotate, Factor::Reward];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Dimension => "Dimension",
            Factor::Rotate => "Rotate",
            Factor::Reward => "Reward",
        }
    }

    fn level(self, f: &Factors) -> String {
        match self {
            Factor::Dimension => f.dimension.clone(),
            Factor::Rotate => f.rotate.to_string(),
            Factor::Reward => f.reward.clone(),
        }
    }
}

/// Mean (std) of relative performance per condition and metric-method.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceTable {
    pub conditions: Vec<String>,
    pub columns: Vec<(MetricKind, TransferMethod)>,
    pub cells: BTreeMap<(String, MetricKind, TransferMethod), Summary>,
}

impl PerformanceTable {
    pub fn get(&self, condition: &str, metric: MetricKind, method: TransferMethod) -> Option<Summary> {
        self.cells.get(&(condition.to_string(), metric, method)).copied()
    }
}

fn present_pairs(records: &[ExperimentRecord]) -> Vec<(MetricKind, TransferMethod)> {
    METRIC_METHODS
        .into_iter()
        .filter(|&(m, t)| records.iter().any(|r| r.metric == m && r.method == t))
        .collect()
}

fn conditions(records: &[ExperimentRecord]) -> Vec<String> {
    let mut c: Vec<String> = records.iter().map(|r| r.condition.clone()).collect();
    c.sort();
    c.dedup();
    c
}

pub fn aggregate(records: &[ExperimentRecord]) -> Result<PerformanceTable> {
    if records.is_empty() {
        return Err(Error::EmptySet("experiment records"));
    }
    let mut groups: BTreeMap<(String, MetricKind, TransferMethod), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.condition.clone(), r.metric, r.method))
            .or_default()
            .push(r.rel_perf);
    }
    let mut columns = present_pairs(records);
    columns.sort_by_key(|&(m, t)| pair_label(m, t));
    Ok(PerformanceTable {
        conditions: conditions(records),
        columns,
        cells: groups
            .into_iter()
            .map(|(k, v)| (k, Summary::of(&v).expect("non-empty group")))
            .collect(),
    })
}

pub fn write_performance_csv(path: impl AsRef<Path>, table: &PerformanceTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["Condition".to_string()];
    header.extend(table.columns.iter().map(|&(m, t)| pair_label(m, t)));
    w.write_record(&header)?;
    for c in &table.conditions {
        let mut row = vec![c.clone()];
        for &(m, t) in &table.columns {
            row.push(table.get(c, m, t).map_or_else(|| "NA".into(), |s| s.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceKind {
    /// Hausdorff reduction Φ.
    Phi,
    /// Kantorovich reduction Ψ.
    Psi,
}

/// Pearson r between an MDP distance and relative performance, for "All" and
/// each condition; `None` where the correlation is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub kind: DistanceKind,
    pub rows: Vec<String>,
    pub columns: Vec<(MetricKind, TransferMethod)>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn correlations(records: &[ExperimentRecord], kind: DistanceKind) -> CorrelationTable {
    let columns = present_pairs(records);
    let mut rows = vec!["All".to_string()];
    rows.extend(conditions(records));
    let values = rows
        .iter()
        .map(|row| {
            columns
                .iter()
                .map(|&(m, t)| {
                    let (xs, ys): (Vec<f64>, Vec<f64>) = records
                        .iter()
                        .filter(|r| r.metric == m && r.method == t)
                        .filter(|r| row == "All" || &r.condition == row)
                        .map(|r| {
                            let d = match kind {
                                DistanceKind::Phi => r.phi,
                                DistanceKind::Psi => r.psi,
                            };
                            (d, r.rel_perf)
                        })
                        .unzip();
                    pearson(&xs, &ys).ok()
                })
                .collect()
        })
        .collect();
    CorrelationTable {
        kind,
        rows,
        columns,
        values,
    }
}

pub fn write_correlation_csv(path: impl AsRef<Path>, table: &CorrelationTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["Condition".to_string()];
    header.extend(table.columns.iter().map(|&(m, t)| pair_label(m, t)));
    w.write_record(&header)?;
    for (label, values) in table.rows.iter().zip(&table.values) {
        let mut row = vec![label.clone()];
        row.extend(
            values
                .iter()
                .map(|v| v.map_or_else(|| "NA".into(), |r| format!("{r:.3}"))),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub metric: MetricKind,
    pub method: TransferMethod,
    pub factor: Factor,
    /// `None` when the factor has fewer than two levels or a group is degenerate.
    pub result: Option<AnovaResult>,
    pub p_corrected: Option<f64>,
}

/// Number of simultaneous tests in the full design: 8 metric-methods × 3 factors.
pub const DEFAULT_BONFERRONI_M: usize = 24;

/// One-way ANOVA of relative performance on each factor within each metric-method.
pub fn anova_table(records: &[ExperimentRecord], m: usize) -> Vec<AnovaRow> {
    let mut out = Vec::new();
    for (metric, method) in present_pairs(records) {
        let subset: Vec<&ExperimentRecord> = records
            .iter()
            .filter(|r| r.metric == metric && r.method == method)
            .collect();
        for factor in Factor::ALL {
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &subset {
                groups
                    .entry(factor.level(&Factors::parse(&r.condition)))
                    .or_default()
                    .push(r.rel_perf);
            }
            let groups: Vec<Vec<f64>> = groups.into_values().collect();
            let result = anova_oneway(&groups).ok();
            out.push(AnovaRow {
                metric,
                method,
                factor,
                result,
                p_corrected: result.map(|r| bonferroni(r.p, m)),
            });
        }
    }
    out
}

pub fn write_anova_csv(path: impl AsRef<Path>, rows: &[AnovaRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["Algorithm", "Factor", "F", "p", "p_bonferroni", "df_between", "df_within"])?;
    for row in rows {
        let na = || "NA".to_string();
        let (f, p, d1, d2) = match row.result {
            Some(r) => (
                fmt_sig(r.f),
                format!("{:.4e}", r.p),
                r.df_between.to_string(),
                r.df_within.to_string(),
            ),
            None => (na(), na(), na(), na()),
        };
        w.write_record([
            pair_label(row.metric, row.method),
            row.factor.name().to_string(),
            f,
            p,
            row.p_corrected.map_or_else(na, |p| format!("{p:.4e}")),
            d1,
            d2,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
