//! Federated training: honest local rounds, DP noising, FedAvg, and the round loop
//! that drives clients, detectors and mitigation.

mod aggregate;
mod client;
mod simulation;

pub use aggregate::fedavg;
pub use client::{dp_noise, honest_local_round, DpConfig, TrainingProtocol};
pub use simulation::{run_experiment, ClientRole, RoundRecord, RoundState, RunOutput, Simulation};
