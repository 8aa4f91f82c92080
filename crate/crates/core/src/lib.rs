//! Structural similarity between finite MDPs and similarity-guided transfer of
//! tabular Q-functions.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: declarative MDPs, their bipartite state/action graphs, validation
//!   and reward normalisation.
//! * [`metrics`]: reward distance, Hausdorff distance and an exact
//!   transportation (earth mover's distance) solver.
//! * [`similarity`]: the SS2 fixed-point iteration (full and cross forms), the
//!   Song `d'` baseline and the uniform baseline.
//! * [`transfer`]: Q-table initialisation from a source task (T-STATE, T-AVG and
//!   their action-aware variants).
//! * [`gridworld`] and [`qlearn`]: the gridworld benchmark and tabular Q-learning.
//! * [`analysis`]: relative performance, MDP-level distances, Pearson, ANOVA.
//! * [`experiment`]: the end-to-end transfer experiment pipeline.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod gridworld;
pub mod io;
pub mod mdp;
pub mod metrics;
pub mod qlearn;
pub mod seed;
pub mod similarity;
pub mod transfer;

pub use error::{Error, Result};
pub use mdp::{MdpGraph, MdpSpec};
pub use similarity::{Ss2Config, SimilarityResult};
