use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, ParamVector, SgdState};

/// Local-training hyperparameters fixed by the server for every client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingProtocol {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub canary_epochs: usize,
}

impl Default for TrainingProtocol {
    fn default() -> Self {
        TrainingProtocol {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 64,
            local_epochs: 1,
            canary_epochs: 3,
        }
    }
}

impl TrainingProtocol {
    /// Number of optimizer steps spent on a shard of `n` samples over `epochs`.
    pub fn data_steps(&self, n: usize, epochs: usize) -> usize {
        epochs * n.div_ceil(self.batch_size.max(1))
    }
}

/// One honest round: `epochs` shuffled mini-batch passes over `shard`, then
/// `canary_epochs` full-batch passes over `canary`, all with one optimizer whose
/// velocity starts at zero. Returns the final local parameters.
pub fn honest_local_round<R: Rng + ?Sized>(
    global: &DenseNet,
    shard: &Dataset,
    canary: Option<&Dataset>,
    protocol: &TrainingProtocol,
    epochs: usize,
    canary_epochs: usize,
    rng: &mut R,
) -> Result<ParamVector> {
    if epochs > 0 && shard.is_empty() {
        return Err(Error::invalid("client shard is empty"));
    }
    if protocol.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut net = global.clone();
    let mut opt = SgdState::new(&net, protocol.learning_rate, protocol.momentum, protocol.weight_decay)?;
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(protocol.batch_size) {
            let batch = shard.subset(chunk);
            let (_, grad) = net.loss_and_grad(batch.features(), batch.labels())?;
            opt.step(&mut net, &grad)?;
        }
    }
    if canary_epochs > 0 {
        let canary = canary.ok_or_else(|| Error::invalid("canary training requested without a canary window"))?;
        for _ in 0..canary_epochs {
            let (_, grad) = net.loss_and_grad(canary.features(), canary.labels())?;
            opt.step(&mut net, &grad)?;
        }
    }
    Ok(net.into_params())
}

/// Local differential-privacy noising of a model delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_sigma: f64,
    /// Reported privacy level; not used in any computation.
    pub epsilon_label: Option<f64>,
}

/// Clips `update` to L2 norm `clip_norm` (scaling down only), then adds
/// `N(0, (noise_sigma * clip_norm)^2)` to every coordinate.
pub fn dp_noise<R: Rng + ?Sized>(update: &ParamVector, dp: &DpConfig, rng: &mut R) -> Result<ParamVector> {
    if dp.clip_norm.is_nan() || dp.clip_norm <= 0.0 {
        return Err(Error::invalid(format!("clip norm {} must be positive", dp.clip_norm)));
    }
    let norm = update.norm();
    let mut out = if norm > dp.clip_norm {
        update.scaled(dp.clip_norm / norm)
    } else {
        update.clone()
    };
    let std = dp.noise_sigma * dp.clip_norm;
    if std > 0.0 {
        for v in out.values_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticTask};
    use crate::nn::LayerShape;
    use crate::rng;

    fn setup() -> (DenseNet, Dataset, Dataset) {
        let task = SyntheticTask::new(3, 8, 3.0, 4).unwrap();
        let shard = task.sample(100, &mut rng::stream(4, &[1])).unwrap();
        let canary = task.sample(20, &mut rng::stream(4, &[2])).unwrap();
        let net = DenseNet::new(&[8, 16, 3], &mut rng::stream(4, &[3])).unwrap();
        (net, shard, canary)
    }

    #[test]
    fn no_epochs_returns_global() {
        let (net, shard, canary) = setup();
        let p = TrainingProtocol::default();
        let out = honest_local_round(&net, &shard, Some(&canary), &p, 0, 0, &mut rng::stream(0, &[0])).unwrap();
        assert_eq!(&out, net.params());
    }

    #[test]
    fn canary_training_lowers_canary_loss() {
        let (mut net, shard, canary) = setup();
        let p = TrainingProtocol::default();
        // warm up so the comparison is not dominated by the first steps
        for r in 0..20 {
            let params = honest_local_round(&net, &shard, None, &p, 1, 0, &mut rng::stream(0, &[r])).unwrap();
            net = net.with_params(params).unwrap();
        }
        let before = net.loss(canary.features(), canary.labels()).unwrap();
        let params = honest_local_round(&net, &shard, Some(&canary), &p, 1, 3, &mut rng::stream(0, &[99])).unwrap();
        let with_canary = net.with_params(params).unwrap();
        let params = honest_local_round(&net, &shard, None, &p, 1, 0, &mut rng::stream(0, &[99])).unwrap();
        let without = net.with_params(params).unwrap();
        let after = with_canary.loss(canary.features(), canary.labels()).unwrap();
        let control = without.loss(canary.features(), canary.labels()).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(after < control, "{after} !< {control}");
    }

    #[test]
    fn local_round_is_deterministic() {
        let (net, shard, canary) = setup();
        let p = TrainingProtocol::default();
        let a = honest_local_round(&net, &shard, Some(&canary), &p, 2, 3, &mut rng::stream(5, &[1])).unwrap();
        let b = honest_local_round(&net, &shard, Some(&canary), &p, 2, 3, &mut rng::stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_shard_rejected() {
        let (net, _, canary) = setup();
        let empty = make_synthetic(3, 3, 8, 0).unwrap().subset(&[]);
        let p = TrainingProtocol::default();
        assert!(honest_local_round(&net, &empty, Some(&canary), &p, 1, 0, &mut rng::stream(0, &[0])).is_err());
        // a client that only trains on canaries needs no shard
        assert!(honest_local_round(&net, &empty, Some(&canary), &p, 0, 1, &mut rng::stream(0, &[0])).is_ok());
    }

    fn vec_of(values: Vec<f64>) -> ParamVector {
        let n = values.len();
        ParamVector::new(vec![LayerShape::new(n, 1, false)], values).unwrap()
    }

    #[test]
    fn dp_identity_when_small_and_noiseless() {
        let u = vec_of(vec![0.1, -0.2, 0.05]);
        let dp = DpConfig {
            clip_norm: 1.0,
            noise_sigma: 0.0,
            epsilon_label: None,
        };
        assert_eq!(dp_noise(&u, &dp, &mut rng::stream(0, &[0])).unwrap(), u);
    }

    #[test]
    fn dp_clips_to_norm() {
        let u = vec_of(vec![3.0, 4.0]);
        let dp = DpConfig {
            clip_norm: 2.5,
            noise_sigma: 0.0,
            epsilon_label: None,
        };
        let out = dp_noise(&u, &dp, &mut rng::stream(0, &[0])).unwrap();
        assert!((out.norm() - 2.5).abs() < 1e-15);
        assert!((out.values()[0] / out.values()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dp_noise_has_requested_scale() {
        let u = vec_of(vec![0.0; 10_000]);
        let dp = DpConfig {
            clip_norm: 0.5,
            noise_sigma: 1.0,
            epsilon_label: Some(4.0),
        };
        let out = dp_noise(&u, &dp, &mut rng::stream(1, &[0])).unwrap();
        let s = out.std();
        assert!((s / 0.5 - 1.0).abs() < 0.05, "{s}");
        let bad = DpConfig { clip_norm: 0.0, ..dp };
        assert!(dp_noise(&u, &bad, &mut rng::stream(1, &[0])).is_err());
    }
}
