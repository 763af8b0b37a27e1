//! Shared decision primitives: the cohort z-score outlier test and the
//! two-sample Student t-test. Every detector goes through these two functions.

mod special;

pub use special::{ln_gamma, regularized_incomplete_beta, student_t_two_sided_p};

use crate::error::{Error, Result};

/// Which tail(s) of the z distribution raise a flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    High,
    Low,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZVerdict {
    /// Signed z value `(s - mean) / std`.
    pub z: f64,
    pub flag: bool,
    pub side: Side,
}

/// Cohort z-test with population standard deviation. A cohort with no spread
/// (std below a few ulps of the scores' magnitude) raises no flags.
pub fn z_test(scores: &[f64], tau: f64, side: Side) -> Result<Vec<ZVerdict>> {
    if scores.len() < 3 {
        return Err(Error::invalid(format!(
            "z-test needs at least 3 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("z-test scores must be finite"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let magnitude = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if std <= 8.0 * f64::EPSILON * magnitude || std == 0.0 {
        return Ok(scores
            .iter()
            .map(|_| ZVerdict {
                z: 0.0,
                flag: false,
                side,
            })
            .collect());
    }
    Ok(scores
        .iter()
        .map(|s| {
            let z = (s - mean) / std;
            let flag = match side {
                Side::High => z > tau,
                Side::Low => z < -tau,
                Side::TwoSided => z.abs() > tau,
            };
            ZVerdict { z, flag, side }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TVerdict {
    pub t: f64,
    pub df: f64,
    /// Two-sided p value.
    pub p: f64,
    /// Set when the means are statistically indistinguishable (`p >= alpha`).
    pub flag: bool,
}

/// Pooled-variance two-sample Student t-test.
pub fn t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TVerdict> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ssa: f64 = a.iter().map(|v| (v - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
    let df = na + nb - 2.0;
    let pooled = (ssa + ssb) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let diff = ma - mb;
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let p = student_t_two_sided_p(t, df);
    Ok(TVerdict {
        t,
        df,
        p,
        flag: p >= alpha,
    })
}
