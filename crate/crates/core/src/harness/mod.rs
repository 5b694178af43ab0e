//! Synthetic denoising trajectories and the experiments run on them.

mod bound;
mod persistence;
mod perturbation;
mod trajectory;

use serde::{Deserialize, Serialize};

pub use bound::{bound_check_experiment, forward_bound_check, BoundCheck, BoundCheckSummary};
pub use persistence::{persistence_experiment, PersistencePoint, PersistenceReport};
pub use perturbation::{perturbation_experiment, PerturbationPoint, Propagation};
pub use trajectory::{generate_trajectory, TrajectoryConfig};

/// One experiment result as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub metrics: serde_json::Value,
}
