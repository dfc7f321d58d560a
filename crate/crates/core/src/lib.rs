//! Graphon mean-field equilibria for heterogeneous populations.
//!
//! Agents sit at positions in `[0, 1]` and interact through a graphon; the
//! state of the population is a distribution over states per agent class.
//! The crate computes equilibrium prescriptions by backward recursion on a
//! discretized population-state space (finite horizon) or by policy iteration
//! on a stationary value (infinite horizon), audits them, and checks them
//! against finite-population simulations.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod finite;
pub mod game;
pub mod graphon;
pub mod infinite;
pub mod malware;
pub mod mfgrid;
pub mod model;
pub mod nsim;
pub mod policy;
pub mod verify;

pub use config::ExperimentConfig;
pub use dynamics::{propagate, trajectory, ConstantPolicy, Policy, PopulationState, Prescription};
pub use error::{Error, Result};
pub use finite::{solve_finite, stage_fixed_point, FixedPointConfig, StageDiagnostics, StageSolution};
pub use game::{Game, Reduction};
pub use graphon::{AgentClassGrid, Graphon, GraphonKind};
pub use infinite::{solve_infinite, stationary_mean_field, InfiniteConfig, StationaryReport, StationarySolution};
pub use mfgrid::{MeanFieldGrid, ValueTable};
pub use model::{Horizon, KernelRule, ModelBuilder, ModelSpec, RewardRule};
pub use nsim::{mf_gap, sample_network, simulate, SampledNetwork};
pub use policy::{PolicyTable, StagePolicy};
pub use verify::{best_response_value, converse_scan, equilibrium_gap, GapReport, ScanReport};
