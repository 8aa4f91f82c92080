//! State and action similarity between two MDPs.
//!
//! * [`ss2`]: the SS2 fixed point, either over the disjoint union of both
//!   graphs ([`ss2_full`]) or directly over the cross pairs ([`ss2_cross`]).
//! * [`song`]: the Song et al. `d'` cross-MDP bisimulation distance.
//! * [`uniform_metric`]: constant-distance baseline.

pub mod song;
pub mod ss2;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;

pub use song::{song_dprime, SongConfig, SongResult, SongSign};
pub use ss2::{
    action_update, init_base_cases, init_cross_base_cases, ss2_cross, ss2_full, state_update,
    Ss2Solver, SweepStats,
};

pub const DEFAULT_ABS_TOL: f64 = 1e-8;
pub const DEFAULT_REL_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;

/// Initial values of non-absorbing cross pairs in [`ss2_cross`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossInit {
    /// All zeros; required for monotone convergence.
    #[default]
    Zeros,
    /// Same-index pairs start at `C_S`.
    CsIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ss2Config {
    pub c_s: f64,
    pub c_a: f64,
    /// Similarity of two distinct absorbing states.
    pub omega: f64,
    pub max_iterations: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub cross_init: CrossInit,
}

impl Default for Ss2Config {
    fn default() -> Self {
        Ss2Config {
            c_s: 0.9995,
            c_a: 0.5,
            omega: 0.9995,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            cross_init: CrossInit::Zeros,
        }
    }
}

impl Ss2Config {
    /// Config with the given constants and `ω = C_S`.
    pub fn with_constants(c_s: f64, c_a: f64) -> Self {
        Ss2Config {
            c_s,
            c_a,
            omega: c_s,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.c_s) || !open(self.c_a) {
            return Err(Error::InvalidConfig(format!(
                "C_S = {} and C_A = {} must lie in (0, 1)",
                self.c_s, self.c_a
            )));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "omega = {} must lie in (0, 1]",
                self.omega
            )));
        }
        if self.abs_tol <= 0.0 || self.rel_tol <= 0.0 {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Converged state and action similarity matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityResult {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute entry change of each sweep.
    pub history: Vec<f64>,
}

impl SimilarityResult {
    pub fn state_distances(&self) -> DistanceMatrix {
        DistanceMatrix::from_similarity(&self.s).expect("similarities lie in [0, 1]")
    }

    pub fn action_distances(&self) -> DistanceMatrix {
        DistanceMatrix::from_similarity(&self.a).expect("similarities lie in [0, 1]")
    }
}

/// Fixed-point stopping rule: every entry satisfies
/// `|cur - prev| <= abs_tol + rel_tol * |prev|`.
pub fn converged(prev: &Array2<f64>, cur: &Array2<f64>, abs_tol: f64, rel_tol: f64) -> Result<bool> {
    if prev.dim() != cur.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            prev.dim(),
            cur.dim()
        )));
    }
    Ok(prev
        .iter()
        .zip(cur.iter())
        .all(|(&p, &c)| (c - p).abs() <= abs_tol + rel_tol * p.abs()))
}

/// Constant distance `c` between every source and target state.
pub fn uniform_metric(n_m: usize, n_n: usize, c: f64) -> Result<DistanceMatrix> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidConfig(format!("uniform distance {c} outside [0, 1]")));
    }
    DistanceMatrix::constant(n_m, n_n, c)
}
