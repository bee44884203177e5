//! Simulation of Kohonen self-organizing maps, vector quantization and the
//! generalized winner-relaxing family, with tools to measure magnification
//! exponents, check the winner-relaxing potential and drive reproducible
//! experiment sweeps.
//!
//! - [`topology`]: lattice geometry, neighborhood kernel, winner search
//! - [`stimuli`]: input densities and samplers
//! - [`learning`]: update rules, annealing schedule, training driver
//! - [`potential`]: potential function, gradient checks, TSP limit
//! - [`analysis`]: magnification fits, ordering, firing entropy
//! - [`harness`]: configuration and experiment orchestration

pub mod analysis;
pub mod error;
pub mod harness;
pub mod learning;
pub mod potential;
pub mod stimuli;
pub mod topology;

pub use analysis::{
    estimate_exponent, firing_entropy, ordering_report, ordering_time, theoretical_exponent,
    ExponentFit, FiringHistogram, OrderingReport,
};
pub use error::{Error, Result};
pub use learning::{
    gwrk_step, schedule_at, som_step, train, vq_step, Initialization, LearningSchedule, Rule,
    RuleConfig, TrainingRun, Trajectory,
};
pub use potential::{
    expected_gwrk_step, gradient_check, tsp_limit_energy, wrk_potential, PotentialReport,
    VoronoiPartition,
};
pub use stimuli::{Marginal, StimulusDistribution};
pub use topology::{
    find_winner, kernel_value, lattice_distance, KernelMode, LatticeTopology, NeighborhoodKernel,
    NetworkState,
};
