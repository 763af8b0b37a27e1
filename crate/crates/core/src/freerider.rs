//! Free-rider update fabricators. A free-rider sees only the broadcast history
//! (previous global models and aggregate gradients) and returns a fake local model.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::nn::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Previous global model plus decaying Gaussian noise.
    Fraboni,
    /// Previous global model plus previous aggregate gradient plus noise.
    Lin,
    /// Norm-matched gradient replay with partial-coordinate noise.
    Zhu,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Fraboni => "fraboni",
            StrategyKind::Lin => "lin",
            StrategyKind::Zhu => "zhu",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fraboni" => Ok(StrategyKind::Fraboni),
            "lin" => Ok(StrategyKind::Lin),
            "zhu" => Ok(StrategyKind::Zhu),
            other => Err(Error::invalid(format!(
                "unknown free-rider strategy `{other}` (expected fraboni, lin or zhu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrStrategy {
    pub kind: StrategyKind,
    /// Noise scale multiplier.
    pub alpha: f64,
    /// Decay exponent applied to the round index.
    pub gamma: f64,
    /// Fraction of coordinates that receive noise (Zhu).
    pub fraction: f64,
    /// Rate in the expected-cosine schedule `C^2 / (C^2 + e^{2 lambda t})` (Zhu).
    pub lambda: f64,
    /// Noise std used before any aggregate gradient exists.
    pub fallback_sigma: f64,
}

impl FrStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        FrStrategy {
            kind,
            alpha: 1.0,
            gamma: 1.0,
            fraction: 0.6,
            lambda: 0.01,
            fallback_sigma: 0.01,
        }
    }

    pub fn fabricate<R: Rng + ?Sized>(&self, sig: &PublicSignals<'_>, rng: &mut R) -> ParamVector {
        match self.kind {
            StrategyKind::Fraboni => fraboni_update(sig, self.alpha, self.gamma, self.fallback_sigma, rng),
            StrategyKind::Lin => lin_update(sig, self.alpha, self.gamma, self.fallback_sigma, rng),
            StrategyKind::Zhu => zhu_update(sig, self, rng),
        }
    }
}

/// Everything the protocol broadcasts: `M^{t-1}`, `G^{t-1}`, `G^{t-2}`, `M^0`,
/// the round index and the cohort size.
#[derive(Debug, Clone, Copy)]
pub struct PublicSignals<'a> {
    pub prev_model: &'a ParamVector,
    pub prev_gradient: Option<&'a ParamVector>,
    pub prev_gradient2: Option<&'a ParamVector>,
    pub initial_model: &'a ParamVector,
    pub round: usize,
    pub cohort: usize,
}

fn add_gaussian<R: Rng + ?Sized>(base: &mut ParamVector, std: f64, rng: &mut R) {
    for v in base.values_mut() {
        *v += std * rng.sample::<f64, _>(StandardNormal);
    }
}

fn decayed_std(alpha: f64, sigma: f64, gamma: f64, round: usize) -> f64 {
    alpha * sigma * (round.max(1) as f64).powf(-gamma)
}

/// `M^{t-1} + N(0, alpha * sigma * t^{-gamma})` with `sigma = std(G^{t-1})`,
/// or `fallback_sigma` before the first aggregate exists.
pub fn fraboni_update<R: Rng + ?Sized>(
    sig: &PublicSignals<'_>,
    alpha: f64,
    gamma: f64,
    fallback_sigma: f64,
    rng: &mut R,
) -> ParamVector {
    let sigma = sig.prev_gradient.map_or(fallback_sigma, ParamVector::std);
    let mut out = sig.prev_model.clone();
    add_gaussian(&mut out, decayed_std(alpha, sigma, gamma, sig.round), rng);
    out
}

/// `M^{t-1} + G^{t-1} + N(0, alpha * std(G^{t-1}) * t^{-gamma})`; Fraboni's
/// update in round 1.
pub fn lin_update<R: Rng + ?Sized>(
    sig: &PublicSignals<'_>,
    alpha: f64,
    gamma: f64,
    fallback_sigma: f64,
    rng: &mut R,
) -> ParamVector {
    let Some(grad) = sig.prev_gradient else {
        return fraboni_update(sig, alpha, gamma, fallback_sigma, rng);
    };
    let mut out = sig.prev_model.add(grad).expect("broadcast shapes agree");
    add_gaussian(&mut out, decayed_std(alpha, grad.std(), gamma, sig.round), rng);
    out
}

/// Expected cosine between honest updates, `C^2 / (C^2 + e^{2 lambda t})`.
pub fn expected_cosine(c: f64, lambda: f64, round: usize) -> f64 {
    let c2 = c * c;
    c2 / (c2 + (2.0 * lambda * round as f64).exp())
}

/// Noise magnitude `sqrt(n^2 / (n + (n^2 - n) E[cos]) - 1) * ||G^{t-1}||`.
pub fn zhu_phi(cohort: usize, expected_cos: f64, grad_norm: f64) -> f64 {
    let n = cohort as f64;
    let ratio = n * n / (n + (n * n - n) * expected_cos);
    (ratio - 1.0).max(0.0).sqrt() * grad_norm
}

/// Ratio `||M - M^0|| / ||M||`, zero for a zero model.
pub fn drift_ratio(model: &ParamVector, initial: &ParamVector) -> f64 {
    let norm = model.norm();
    if norm == 0.0 {
        return 0.0;
    }
    model.sub(initial).expect("broadcast shapes agree").norm() / norm
}

/// `M^{t-1} + (||G^{t-1}|| / ||G^{t-2}||) G^{t-1}` plus noise of total energy
/// `phi(t)^2` spread over a fresh random `ceil(d P)` coordinates. Falls back to
/// [`lin_update`] until two aggregate gradients exist.
pub fn zhu_update<R: Rng + ?Sized>(sig: &PublicSignals<'_>, strategy: &FrStrategy, rng: &mut R) -> ParamVector {
    let (Some(g1), Some(g2)) = (sig.prev_gradient, sig.prev_gradient2) else {
        return lin_update(sig, strategy.alpha, strategy.gamma, strategy.fallback_sigma, rng);
    };
    if sig.round < 3 {
        return lin_update(sig, strategy.alpha, strategy.gamma, strategy.fallback_sigma, rng);
    }
    let n1 = g1.norm();
    let n2 = g2.norm();
    let scale = if n2 > 0.0 { n1 / n2 } else { 1.0 };
    let mut out = sig.prev_model.clone();
    out.axpy(scale, g1).expect("broadcast shapes agree");

    let c = drift_ratio(sig.prev_model, sig.initial_model);
    let phi = zhu_phi(sig.cohort, expected_cosine(c, strategy.lambda, sig.round), n1);
    let p = out.len();
    let k = ((strategy.fraction * p as f64).ceil() as usize).clamp(1, p);
    let std = phi / (k as f64).sqrt();
    let values = out.values_mut();
    for i in index::sample(rng, p, k) {
        values[i] += std * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerShape;
    use crate::rng;

    fn vec_of(values: Vec<f64>) -> ParamVector {
        let n = values.len();
        ParamVector::new(vec![LayerShape::new(n, 1, false)], values).unwrap()
    }

    struct History {
        model: ParamVector,
        g1: ParamVector,
        g2: ParamVector,
        init: ParamVector,
    }

    fn history(p: usize) -> History {
        History {
            model: vec_of((0..p).map(|i| (i as f64 * 0.1).sin()).collect()),
            g1: vec_of((0..p).map(|i| 0.01 * (i as f64 * 0.7).cos()).collect()),
            g2: vec_of((0..p).map(|i| 0.02 * (i as f64 * 0.3).cos()).collect()),
            init: vec_of(vec![0.0; p]),
        }
    }

    fn signals(h: &History, round: usize) -> PublicSignals<'_> {
        PublicSignals {
            prev_model: &h.model,
            prev_gradient: Some(&h.g1),
            prev_gradient2: Some(&h.g2),
            initial_model: &h.init,
            round,
            cohort: 8,
        }
    }

    #[test]
    fn zero_alpha_returns_previous_model() {
        let h = history(50);
        let mut r = rng::stream(1, &[0]);
        assert_eq!(fraboni_update(&signals(&h, 3), 0.0, 1.0, 0.01, &mut r), h.model);
        let lin = lin_update(&signals(&h, 3), 0.0, 1.0, 0.01, &mut r);
        assert_eq!(lin, h.model.add(&h.g1).unwrap());
    }

    #[test]
    fn fraboni_noise_decays_with_round() {
        let h = history(10_000);
        let mut r = rng::stream(2, &[0]);
        let mut noise_std = |t| {
            fraboni_update(&signals(&h, t), 1.0, 1.0, 0.01, &mut r)
                .sub(&h.model)
                .unwrap()
                .std()
        };
        let ratio = noise_std(4) / noise_std(1);
        assert!((ratio - 0.25).abs() < 0.025, "ratio {ratio}");
    }

    #[test]
    fn cold_start_uses_fallback_sigma() {
        let h = history(10_000);
        let sig = PublicSignals {
            prev_gradient: None,
            prev_gradient2: None,
            round: 1,
            ..signals(&h, 1)
        };
        let mut r = rng::stream(3, &[0]);
        for kind in [StrategyKind::Fraboni, StrategyKind::Lin, StrategyKind::Zhu] {
            let s = FrStrategy::new(kind)
                .fabricate(&sig, &mut r)
                .sub(&h.model)
                .unwrap()
                .std();
            assert!((s - 0.01).abs() < 0.0005, "{kind}: {s}");
        }
    }

    #[test]
    fn zhu_without_noise_is_scaled_replay() {
        // E[cos] = 1 makes the bracket n^2 / n^2 - 1 = 0.
        assert_eq!(zhu_phi(8, 1.0, 3.0), 0.0);
        // C = 0 gives E[cos] = 0 and phi = sqrt(n - 1) * ||G||.
        assert!((zhu_phi(8, 0.0, 2.0) - 7f64.sqrt() * 2.0).abs() < 1e-14);
        assert_eq!(expected_cosine(0.0, 0.01, 5), 0.0);
    }

    #[test]
    fn zhu_noise_energy_and_support() {
        let h = history(5_000);
        let mut r = rng::stream(4, &[0]);
        let s = FrStrategy::new(StrategyKind::Zhu);
        let out = s.fabricate(&signals(&h, 10), &mut r);
        let mut base = h.model.clone();
        base.axpy(h.g1.norm() / h.g2.norm(), &h.g1).unwrap();
        let noise = out.sub(&base).unwrap();
        let touched = noise.values().iter().filter(|v| **v != 0.0).count();
        assert_eq!(touched, 3_000);
        let c = drift_ratio(&h.model, &h.init);
        let phi = zhu_phi(8, expected_cosine(c, 0.01, 10), h.g1.norm());
        let energy = noise.norm();
        assert!((energy / phi - 1.0).abs() < 0.05, "{energy} vs {phi}");
    }

    #[test]
    fn strategy_names_parse() {
        assert_eq!("zhu".parse::<StrategyKind>().unwrap(), StrategyKind::Zhu);
        assert!("selfish".parse::<StrategyKind>().is_err());
    }
}
