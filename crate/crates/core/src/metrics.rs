//! Confusion counts and rates per round and detector.

use crate::detect::Detector;
use crate::engine::RoundRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_flags(flags: &[bool], truth: &[bool]) -> Result<Self> {
        if flags.len() != truth.len() {
            return Err(Error::shape(format!(
                "{} flags for {} clients",
                flags.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&f, &t) in flags.iter().zip(truth) {
            match (f, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// 0 when nothing was flagged.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// 0 when `tp = 0`.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }

    /// 0 when there are no negatives.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorMetrics {
    pub detector: Detector,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

impl DetectorMetrics {
    pub fn new(detector: Detector, confusion: Confusion) -> Self {
        DetectorMetrics {
            detector,
            confusion,
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            fpr: confusion.fpr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub detectors: Vec<DetectorMetrics>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl RoundMetrics {
    pub fn detector(&self, d: Detector) -> Option<&DetectorMetrics> {
        self.detectors.iter().find(|m| m.detector == d)
    }
}

pub fn compute_metrics(record: &RoundRecord, truth: &[bool]) -> Result<RoundMetrics> {
    let detectors = record
        .outputs
        .iter()
        .map(|o| Confusion::from_flags(&o.flags, truth).map(|c| DetectorMetrics::new(o.detector, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundMetrics {
        round: record.round(),
        detectors,
        train_accuracy: record.train_accuracy,
        test_accuracy: record.test_accuracy,
    })
}

/// Mean F1 of `detector` over the given rounds (0 when absent from all of them).
pub fn mean_f1(rounds: &[RoundMetrics], detector: Detector) -> f64 {
    let values: Vec<f64> = rounds
        .iter()
        .filter_map(|r| r.detector(detector).map(|m| m.f1))
        .collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
