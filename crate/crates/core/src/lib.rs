//! Free-rider detection for federated learning.
//!
//! A server runs FedAvg over a cohort in which some clients fabricate updates
//! instead of training. Detectors score every client's update each round:
//!
//! * membership inference on a per-round batch of server-held canaries
//!   ([`detect::mia`]): honest clients train on the canaries, free-riders cannot;
//! * label-distribution inference ([`detect::pia`]): fabricated updates imply
//!   label distributions that are too stable or too close to the cohort average;
//! * update-statistic baselines ([`detect::baseline`]).
//!
//! [`engine::Simulation`] runs the whole loop on a synthetic classification task;
//! the `freeride` binary wraps it with config files and CSV output.

pub mod cli;
pub mod config;
pub mod data;
pub mod detect;
pub mod engine;
mod error;
pub mod freerider;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod stats;

pub use config::ExperimentConfig;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                mod $name {}
            )*
        };
    }

    chapters! {
        introduction => "introduction.md",
        running => "running.md",
        configuration => "configuration.md",
        federation => "federation.md",
        free_riders => "free-riders.md",
        membership => "membership.md",
        label_inference => "label-inference.md",
        decisions => "decisions.md",
        outputs => "outputs.md",
        reproducibility => "reproducibility.md",
    }
}
