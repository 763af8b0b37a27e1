//! Update-statistic baselines: one scalar per client, two-sided z-test.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{cosine, ParamVector};
use crate::stats::{z_test, Side, ZVerdict};

/// `||G_n||_2` per client.
pub fn l2_feature(updates: &[ParamVector]) -> Vec<f64> {
    updates.iter().map(|u| u.norm()).collect()
}

/// Population std of the coordinates of `G_n` per client.
pub fn std_feature(updates: &[ParamVector]) -> Vec<f64> {
    updates.iter().map(|u| u.std()).collect()
}

/// Cosine of every update with one reference update drawn uniformly per round.
/// The reference client itself is scored against a second, different draw.
/// Returns the scores and the reference index.
pub fn cosim_feature<R: Rng + ?Sized>(updates: &[ParamVector], rng: &mut R) -> Result<(Vec<f64>, usize)> {
    if updates.len() < 2 {
        return Err(Error::invalid("cosine baseline needs at least two clients"));
    }
    let n = updates.len();
    let reference = rng.random_range(0..n);
    let mut alternate = rng.random_range(0..n - 1);
    if alternate >= reference {
        alternate += 1;
    }
    let scores = updates
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let r = if i == reference { alternate } else { reference };
            cosine(u.values(), updates[r].values()).unwrap_or(0.0)
        })
        .collect();
    Ok((scores, reference))
}

pub fn feature_decide(scores: &[f64], tau: f64) -> Result<Vec<ZVerdict>> {
    z_test(scores, tau, Side::TwoSided)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerShape;
    use crate::rng;

    fn v(values: &[f64]) -> ParamVector {
        ParamVector::new(vec![LayerShape::new(values.len(), 1, false)], values.to_vec()).unwrap()
    }

    #[test]
    fn l2_and_std_match_hand_values() {
        let us = [v(&[3.0, 4.0]), v(&[1.0, 1.0, 1.0, 1.0])];
        assert_eq!(l2_feature(&us), vec![5.0, 2.0]);
        assert_eq!(std_feature(&us), vec![0.5, 0.0]);
    }

    #[test]
    fn cosim_reference_never_compared_with_itself() {
        let us = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0]), v(&[-1.0, 0.0])];
        for seed in 0..50 {
            let (scores, r) = cosim_feature(&us, &mut rng::stream(seed, &[])).unwrap();
            assert!(scores[r] < 1.0 - 1e-12, "seed {seed}");
            assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));
        }
        assert!(cosim_feature(&us[..1], &mut rng::stream(0, &[])).is_err());
    }

    #[test]
    fn odd_norm_is_flagged() {
        let mut us: Vec<ParamVector> = (0..9).map(|i| v(&[1.0 + 0.01 * i as f64, 0.0])).collect();
        us.push(v(&[0.0, 0.0]));
        let verdicts = feature_decide(&l2_feature(&us), 1.0).unwrap();
        let flagged: Vec<usize> = (0..10).filter(|&i| verdicts[i].flag).collect();
        assert_eq!(flagged, vec![9]);
    }
}
