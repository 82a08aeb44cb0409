//! Sorted-ℓ1 (SLOPE) TPP–FDP trade-off machinery: proximal operators, AMP
//! state evolution and calibration, the Donoho–Tanner power limit, upper and
//! lower trade-off curves, and finite-sample experiments.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod normal;
pub mod dists;
pub mod sorted_l1;
pub mod tradeoff;
pub mod qp;
pub mod state_evolution;
pub mod lower_bound;
pub mod empirics;

pub use dists::{Atom, PenaltySpec, PriorSpec, ProblemShape};
pub use empirics::{
    InstanceComparison, ModelInstance, Preset, SelectionMetrics, SignalModel, SolverConfig,
    SweepConfig, SweepResult,
};
pub use error::{Error, Result};
pub use lower_bound::{AnalyticChain, LowerBoundGrid};
pub use qp::QpInstance;
pub use sorted_l1::PenaltyVector;
pub use state_evolution::{SeConfig, SeSolution};
pub use tradeoff::{Region, TradeoffPoint, TwoLevelConstruction};
