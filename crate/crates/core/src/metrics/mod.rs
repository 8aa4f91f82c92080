//! Distance primitives: reward distance, Hausdorff distance between node sets
//! and the earth mover's (Kantorovich) distance with its transport plan.

pub mod transport;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mdp::{MdpGraph, NodeRef};

/// Tolerance on marginal sums and feasibility checks.
pub const MARGINAL_TOLERANCE: f64 = 1e-9;

/// Finitely supported probability distribution over opaque indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Vec<usize>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "support has {} points, weights {}",
                support.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!("weight {w} is negative")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MARGINAL_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDistribution(
                "support entries are not distinct".into(),
            ));
        }
        Ok(DiscreteDistribution { support, weights })
    }

    /// Uniform distribution on `0..n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySet("uniform distribution"));
        }
        Self::new((0..n).collect(), vec![1.0 / n as f64; n])
    }

    pub fn point(index: usize) -> Self {
        DiscreteDistribution {
            support: vec![index],
            weights: vec![1.0],
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Matrix of non-negative distances between a row index set and a column
/// index set.
///
/// SS2 and uniform distances live in `[0, 1]`; the Song baseline is only
/// bounded by `1 / (1 - C)`, so the constructor checks non-negativity and
/// [`DistanceMatrix::is_unit_bounded`] reports the stronger property.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "distance entry {v} is negative or not finite"
            )));
        }
        Ok(DistanceMatrix { values })
    }

    /// `1 - S` for a similarity matrix `S` with entries in `[0, 1]`.
    pub fn from_similarity(similarity: &Array2<f64>) -> Result<Self> {
        Self::new(similarity.mapv(|s| 1.0 - s))
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((rows, cols), value))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn transpose(&self) -> DistanceMatrix {
        DistanceMatrix {
            values: self.values.t().to_owned(),
        }
    }

    pub fn is_unit_bounded(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Optimal transport plan between two distributions. `flow` is indexed by
/// positions in the two supports (not by the support values themselves).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flow: Array2<f64>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.flow.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.flow.columns().into_iter().map(|c| c.sum()).collect()
    }
}

/// `|E[r_α] - E[r_β]|` for two action nodes of the same graph.
pub fn reward_distance(graph: &MdpGraph, alpha: NodeRef, beta: NodeRef) -> Result<f64> {
    Ok((graph.expected_reward(alpha)? - graph.expected_reward(beta)?).abs())
}

/// Exact earth mover's distance between `p` and `q` under `ground`, where
/// `ground[(u, v)]` is the distance between support value `u` of `p` and
/// support value `v` of `q`.
///
/// Points of zero weight are removed before solving and receive zero flow.
pub fn solve_emd(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    ground: &DistanceMatrix,
) -> Result<TransportPlan> {
    if let Some(&u) = p.support.iter().find(|&&u| u >= ground.rows()) {
        return Err(Error::DimensionMismatch(format!(
            "source support point {u} outside ground matrix with {} rows",
            ground.rows()
        )));
    }
    if let Some(&v) = q.support.iter().find(|&&v| v >= ground.cols()) {
        return Err(Error::DimensionMismatch(format!(
            "target support point {v} outside ground matrix with {} columns",
            ground.cols()
        )));
    }

    let rows: Vec<usize> = (0..p.support.len()).filter(|&i| p.weights[i] > 0.0).collect();
    let cols: Vec<usize> = (0..q.support.len()).filter(|&j| q.weights[j] > 0.0).collect();
    let supply: Vec<f64> = rows.iter().map(|&i| p.weights[i]).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| q.weights[j]).collect();
    let mut cost = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            cost.push(ground.get(p.support[i], q.support[j]));
        }
    }
    let solution = transport::solve_dense(&supply, &demand, &cost);

    let mut flow = Array2::zeros((p.support.len(), q.support.len()));
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            flow[[i, j]] = solution.flow[a * cols.len() + b];
        }
    }
    Ok(TransportPlan {
        flow,
        cost: solution.cost,
    })
}

/// Directed-and-back Hausdorff distance between two index sets under `dist`,
/// where `dist(a, b)` is indexed by row element `a` and column element `b`.
pub(crate) fn hausdorff_by(
    rows: &[usize],
    cols: &[usize],
    dist: impl Fn(usize, usize) -> f64,
) -> f64 {
    let forward = rows
        .iter()
        .map(|&a| cols.iter().map(|&b| dist(a, b)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let backward = cols
        .iter()
        .map(|&b| rows.iter().map(|&a| dist(a, b)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    forward.max(backward)
}

/// `max( max_a min_b d(a,b), max_b min_a d(a,b) )`. Empty sets are rejected;
/// callers decide what an empty neighbourhood means.
pub fn hausdorff(a_set: &[usize], b_set: &[usize], dist: &DistanceMatrix) -> Result<f64> {
    if a_set.is_empty() || b_set.is_empty() {
        return Err(Error::EmptySet("hausdorff"));
    }
    if a_set.iter().any(|&a| a >= dist.rows()) || b_set.iter().any(|&b| b >= dist.cols()) {
        return Err(Error::DimensionMismatch(
            "set element outside distance matrix".into(),
        ));
    }
    Ok(hausdorff_by(a_set, b_set, |a, b| dist.get(a, b)))
}
