//! Optimized power-level selection for uncoordinated uplink NOMA random access.
//!
//! Active users pick one of `Q` received-SNR levels at random and rely on
//! channel inversion so the base station sees exactly that level. This crate
//! computes the level-selection distribution that minimizes the
//! Poisson-weighted truncated block error probability of a tagged user, and
//! checks the result three ways: closed-form BPSK error expressions, a seeded
//! Monte Carlo joint maximum-likelihood detector, and a slot-level system
//! simulation.
//!
//! The pipeline is:
//!
//! 1. [`scenario`] builds the SNR grid, traffic model and block settings.
//! 2. [`error_models`] gives per-collision bit/block error probabilities.
//! 3. [`objective`] assembles collision error tensors and evaluates the
//!    truncated average BLEP and throughput.
//! 4. [`qp`] solves the small dense quadratic/linear programs.
//! 5. [`optimizer`] runs the single-collision QP, the iterative scheme for
//!    larger detectors, and the constrained-user variants.
//! 6. [`sim`] simulates the random-access system slot by slot.
//! 7. [`experiments`] sweeps parameters and emits CSV records.

pub mod detect;
pub mod error;
pub mod error_models;
pub mod experiments;
pub mod objective;
pub mod optimizer;
pub mod qp;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use error_models::{BepEstimate, BlockModel, ErrorModelSpec, EvalMode};
pub use objective::{CollisionErrorTensor, ModelSettings, ObjectiveBundle};
pub use optimizer::{OptimizerConfig, UserPowerConstraint};
pub use qp::{QpProblem, SolveReport, SolveStatus};
pub use scenario::{
    BlockConfig, ErrorMetric, LevelDistribution, Modulation, PowerLevelGrid, TrafficModel,
};
pub use sim::SimStats;
