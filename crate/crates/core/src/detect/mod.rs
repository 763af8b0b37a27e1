//! Free-rider detectors. Each turns one round of client updates into a score per
//! client and a flag per client.

pub mod baseline;
pub mod mia;
pub mod pia;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use baseline::{cosim_feature, feature_decide, l2_feature, std_feature};
pub use mia::{cosine_decide, cosine_scores, loss_decide, loss_scores, CanaryGradients, ScoreKind, ScoreMatrix};
pub use pia::{
    consistency_score, diversity_score, global_distribution, pia_dai, pia_decide, pia_wainakh, DaiBasis, ImpactModel,
    LabelDistribution, PiaAttack,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    /// Canary loss of the local model, high outliers flagged.
    Loss,
    /// Member against non-member gradient cosine, flagged when indistinguishable.
    Cosine,
    /// Round-to-round change of the inferred label distribution.
    Consistency,
    /// Residual of the inferred distribution against the cohort mean and uniform.
    Diversity,
    /// Update norm.
    L2,
    /// Update coordinate spread.
    Std,
    /// Cosine with a random peer's update.
    Cosim,
    /// Ground truth, for testing mitigation.
    Oracle,
}

impl Detector {
    pub const ALL: [Detector; 8] = [
        Detector::Loss,
        Detector::Cosine,
        Detector::Consistency,
        Detector::Diversity,
        Detector::L2,
        Detector::Std,
        Detector::Cosim,
        Detector::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Loss => "loss",
            Detector::Cosine => "cosine",
            Detector::Consistency => "consistency",
            Detector::Diversity => "diversity",
            Detector::L2 => "l2",
            Detector::Std => "std",
            Detector::Cosim => "cosim",
            Detector::Oracle => "oracle",
        }
    }

    /// Needs a canary window each round.
    pub fn uses_canaries(self) -> bool {
        matches!(self, Detector::Loss | Detector::Cosine)
    }

    /// Needs inferred label distributions.
    pub fn uses_label_inference(self) -> bool {
        matches!(self, Detector::Consistency | Detector::Diversity)
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Detector::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Detector::ALL.iter().map(|d| d.name()).collect();
            Error::invalid(format!("unknown detector `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// One detector's verdict on one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub detector: Detector,
    /// The per-client statistic the decision was made on (t-test p value for `cosine`).
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
}
