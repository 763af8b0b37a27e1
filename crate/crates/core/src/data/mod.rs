//! Synthetic datasets, client partitioning, and the server-held canary and
//! auxiliary sets.

mod canary;
mod dataset;
mod partition;
mod synthetic;

pub use canary::{CanarySet, CanaryWindow};
pub use dataset::Dataset;
pub use partition::{partition, Partition, Scheme};
pub use synthetic::{make_auxiliary, make_synthetic, Standardizer, SyntheticTask, DEFAULT_SEPARATION};
