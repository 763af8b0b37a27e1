//! Label-distribution inference from client updates, and the two detectors built on it.

mod nnls;

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::engine::TrainingProtocol;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, ParamVector};
use crate::stats::{z_test, Side, ZVerdict};

pub use nnls::nnls;

const SIMPLEX_TOLERANCE: f64 = 1e-12;
const LOG_FLOOR: f64 = 1e-12;

/// A probability vector over labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    /// Validates non-negativity and unit sum (to 1e-12).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("label distribution over zero labels"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid(format!(
                "negative or non-finite probability in {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(LabelDistribution(probs))
    }

    pub fn uniform(labels: usize) -> Self {
        LabelDistribution(vec![1.0 / labels as f64; labels])
    }

    /// Normalizes non-negative weights; all-zero weights give the uniform distribution.
    pub fn from_weights(weights: &[f64]) -> Self {
        let clean: Vec<f64> = weights
            .iter()
            .map(|w| if w.is_finite() { w.max(0.0) } else { 0.0 })
            .collect();
        let sum: f64 = clean.iter().sum();
        if sum <= 0.0 {
            return Self::uniform(weights.len());
        }
        LabelDistribution(clean.iter().map(|w| w / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn labels(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn distance(&self, other: &LabelDistribution) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Which label-inference attack feeds the PIA detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PiaAttack {
    Wainakh,
    Dai,
}

impl fmt::Display for PiaAttack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PiaAttack::Wainakh => "wainakh",
            PiaAttack::Dai => "dai",
        })
    }
}

impl FromStr for PiaAttack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "wainakh" => Ok(PiaAttack::Wainakh),
            "dai" => Ok(PiaAttack::Dai),
            other => Err(Error::invalid(format!(
                "unknown label attack `{other}` (expected wainakh or dai)"
            ))),
        }
    }
}

/// Per-output-node summary of the last layer: the bias entry, or the weight row
/// sum when the layer has no bias.
fn output_signature(params: &ParamVector) -> Vec<f64> {
    let last = params.shapes().len() - 1;
    let shape = params.shapes()[last];
    let (w, b) = params.layer(last);
    if shape.has_bias {
        b.to_vec()
    } else {
        w.chunks(shape.cols).map(|row| row.iter().sum()).collect()
    }
}

fn label_subsets(aux: &Dataset) -> Result<Vec<Dataset>> {
    let l = aux.label_count();
    let mut idx = vec![Vec::new(); l];
    for (i, &y) in aux.labels().iter().enumerate() {
        idx[y].push(i);
    }
    if let Some(k) = idx.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("auxiliary set has no samples of label {k}")));
    }
    Ok(idx.iter().map(|ix| aux.subset(ix)).collect())
}

/// How strongly one training sample of a label pushes its own output node,
/// estimated on auxiliary samples at the current global model, plus the training
/// protocol that converts gradient sums into parameter displacement. Labels
/// share one impact magnitude and the positive offsets a sample adds to the
/// other nodes are left out, so an update without label signal peels to the
/// uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactModel {
    labels: usize,
    impact: f64,
    protocol: TrainingProtocol,
}

impl ImpactModel {
    pub fn estimate(global: &DenseNet, aux: &Dataset, protocol: &TrainingProtocol) -> Result<Self> {
        let l = global.output_dim();
        if aux.label_count() != l {
            return Err(Error::shape(format!(
                "auxiliary set has {} labels, network outputs {l}",
                aux.label_count()
            )));
        }
        let mut total = 0.0;
        for (k, d) in label_subsets(aux)?.iter().enumerate() {
            let (_, g) = global.loss_and_grad(d.features(), d.labels())?;
            total -= output_signature(&g)[k];
        }
        let impact = total / l as f64;
        if !(impact > 0.0 && impact.is_finite()) {
            return Err(Error::invalid(format!("label impact {impact} is not positive")));
        }
        Ok(ImpactModel {
            labels: l,
            impact,
            protocol: *protocol,
        })
    }

    /// Own-node gradient magnitude of one sample.
    pub fn impact(&self) -> f64 {
        self.impact
    }

    /// Output-signature impact of one sample of label `k`.
    pub fn impact_vector(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.labels];
        v[k] = -self.impact;
        v
    }

    /// Mean parameter displacement per unit of per-sample gradient for a shard of
    /// `samples`: the learning rate times the momentum amplification of every data
    /// step (canary steps that follow keep the data velocity alive), averaged over
    /// the shard.
    pub fn displacement_per_sample(&self, samples: usize) -> f64 {
        let p = &self.protocol;
        if samples == 0 {
            return 0.0;
        }
        let data_steps = p.data_steps(samples, p.local_epochs);
        let total = data_steps + p.canary_epochs;
        let amp = |i: usize| {
            if p.momentum == 0.0 {
                1.0
            } else {
                (1.0 - p.momentum.powi((total - i + 1) as i32)) / (1.0 - p.momentum)
            }
        };
        p.learning_rate * (1..=data_steps).map(amp).sum::<f64>() / samples as f64
    }
}

/// Impact-based label counting. The output signature of the update is converted
/// to per-sample gradient units; then, `samples` times, the label with the
/// strongest presence (most negative entry) is counted and its impact removed.
/// A zero update gives the uniform distribution.
pub fn pia_wainakh(update: &ParamVector, samples: usize, model: &ImpactModel) -> LabelDistribution {
    let l = model.labels;
    let signature = output_signature(update);
    let scale = model.displacement_per_sample(samples);
    if scale <= 0.0 || signature.iter().all(|&v| v == 0.0) {
        return LabelDistribution::uniform(l);
    }
    // an update is minus the accumulated gradient
    let mut residual: Vec<f64> = signature.iter().map(|v| -v / scale).collect();
    let mut counts = vec![0.0; l];
    for _ in 0..samples {
        let mut k = 0;
        for j in 1..l {
            if residual[j] < residual[k] {
                k = j;
            }
        }
        counts[k] += 1.0;
        residual[k] += model.impact;
    }
    LabelDistribution::from_weights(&counts)
}

/// Last-layer displacement directions for training on a single label.
#[derive(Debug, Clone, PartialEq)]
pub struct DaiBasis {
    basis: Vec<Vec<f64>>,
}

fn last_layer(params: &ParamVector) -> Vec<f64> {
    let last = params.shapes().len() - 1;
    let (w, b) = params.layer(last);
    w.iter().chain(b).copied().collect()
}

impl DaiBasis {
    pub fn estimate(global: &DenseNet, aux: &Dataset) -> Result<Self> {
        let basis = label_subsets(aux)?
            .iter()
            .map(|d| {
                global
                    .loss_and_grad(d.features(), d.labels())
                    .map(|(_, g)| last_layer(&g).iter().map(|v| -v).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DaiBasis { basis })
    }

    pub fn labels(&self) -> usize {
        self.basis.len()
    }
}

/// Null-class filtering plus non-negative decomposition of the last-layer update.
/// Labels whose output row moved down (bias plus weight row sum `<= 0`) are
/// absent. The update is fitted with the remaining single-label directions and
/// their equal mix, and the mix coefficient is shared evenly among those labels.
pub fn pia_dai(update: &ParamVector, basis: &DaiBasis) -> LabelDistribution {
    let l = basis.labels();
    let last = update.shapes().len() - 1;
    let shape = update.shapes()[last];
    let (w, b) = update.layer(last);
    let present: Vec<usize> = (0..l)
        .filter(|&j| {
            let row: f64 = w[j * shape.cols..(j + 1) * shape.cols].iter().sum();
            row + b.get(j).copied().unwrap_or(0.0) > 0.0
        })
        .collect();
    if present.is_empty() {
        log::warn!("every label looks absent from the update; returning the uniform distribution");
        return LabelDistribution::uniform(l);
    }
    let target = last_layer(update);
    let mut columns: Vec<Vec<f64>> = present.iter().map(|&k| basis.basis[k].clone()).collect();
    let dim = target.len();
    let unified: Vec<f64> = (0..dim)
        .map(|i| present.iter().map(|&k| basis.basis[k][i]).sum::<f64>() / present.len() as f64)
        .collect();
    columns.push(unified);
    let x = nnls(&columns, &target);
    let shared = x[present.len()] / present.len() as f64;
    let mut weights = vec![0.0; l];
    for (i, &k) in present.iter().enumerate() {
        weights[k] = x[i] + shared;
    }
    if weights.iter().all(|&v| v == 0.0) {
        for &k in &present {
            weights[k] = 1.0;
        }
    }
    LabelDistribution::from_weights(&weights)
}

/// Element-wise mean of the clients' inferred distributions.
pub fn global_distribution(dists: &[LabelDistribution]) -> Result<LabelDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::invalid("no distributions to average"))?;
    let l = first.labels();
    let mut mean = vec![0.0; l];
    for d in dists {
        if d.labels() != l {
            return Err(Error::shape("distributions over different label counts"));
        }
        for (m, p) in mean.iter_mut().zip(d.probs()) {
            *m += p / dists.len() as f64;
        }
    }
    Ok(LabelDistribution::from_weights(&mean))
}

/// `||L_n^t - L_n^{t-1}||_2`; without a previous round the uniform distribution stands in.
pub fn consistency_score(current: &LabelDistribution, previous: Option<&LabelDistribution>) -> f64 {
    match previous {
        Some(p) => current.distance(p),
        None => current.distance(&LabelDistribution::uniform(current.labels())),
    }
}

/// Log mean-squared residual of `L_n ~ a * L^t + b * uniform` (least squares).
/// When the two regressors are collinear only the first is used.
pub fn diversity_score(client: &LabelDistribution, global: &LabelDistribution) -> f64 {
    let l = client.labels();
    let y = client.probs();
    let a = global.probs();
    let u = vec![1.0 / l as f64; l];
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>();
    let (aa, ab, bb) = (dot(a, a), dot(a, &u), dot(&u, &u));
    let (ay, by) = (dot(a, y), dot(&u, y));
    let det = aa * bb - ab * ab;
    let (alpha, beta) = if det > 1e-12 * aa * bb {
        ((ay * bb - by * ab) / det, (aa * by - ab * ay) / det)
    } else {
        (if aa > 0.0 { ay / aa } else { 0.0 }, 0.0)
    };
    let mse = (0..l).map(|i| (y[i] - alpha * a[i] - beta * u[i]).powi(2)).sum::<f64>() / l as f64;
    (mse + LOG_FLOOR).ln()
}

/// Two-sided z-test over the per-client PIA scores.
pub fn pia_decide(scores: &[f64], tau: f64) -> Result<Vec<ZVerdict>> {
    z_test(scores, tau, Side::TwoSided)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticTask;
    use crate::engine::honest_local_round;
    use crate::rng;

    #[test]
    fn distribution_validation() {
        assert!(LabelDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(LabelDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(LabelDistribution::new(vec![]).is_err());
        assert_eq!(LabelDistribution::from_weights(&[0.0, 0.0]).probs(), &[0.5, 0.5]);
        assert_eq!(LabelDistribution::from_weights(&[1.0, 3.0]).probs(), &[0.25, 0.75]);
    }

    #[test]
    fn consistency_uses_uniform_prior() {
        let d = LabelDistribution::new(vec![1.0, 0.0]).unwrap();
        assert!((consistency_score(&d, None) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(consistency_score(&d, Some(&d)), 0.0);
    }

    #[test]
    fn diversity_of_regressor_combination_hits_floor() {
        let g = LabelDistribution::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        // 0.5 g + 0.5 uniform lies in the span
        let mix = LabelDistribution::new(vec![0.325, 0.275, 0.225, 0.175]).unwrap();
        assert!((diversity_score(&mix, &g) - LOG_FLOOR.ln()).abs() < 1e-3);
        let one_hot = LabelDistribution::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(diversity_score(&one_hot, &g) > -5.0);
    }

    #[test]
    fn diversity_collinear_regressors() {
        let u = LabelDistribution::uniform(4);
        let d = LabelDistribution::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        // fit by the uniform vector alone: residual is d - uniform
        let expected = ((0.45f64.powi(2) + 3.0 * 0.15f64.powi(2)) / 4.0 + LOG_FLOOR).ln();
        assert!((diversity_score(&d, &u) - expected).abs() < 1e-12);
    }

    fn trained_setup(labels_of_client: &[usize]) -> (DenseNet, Dataset, Dataset, TrainingProtocol) {
        let task = SyntheticTask::new(4, 16, 4.0, 11).unwrap();
        let pool = task.sample(4000, &mut rng::stream(11, &[1])).unwrap();
        let mut net = DenseNet::new(&[16, 32, 4], &mut rng::stream(11, &[2])).unwrap();
        let p = TrainingProtocol {
            canary_epochs: 0,
            ..TrainingProtocol::default()
        };
        let warm = pool.subset(&(0..1000).collect::<Vec<_>>());
        for r in 0..10 {
            net = net
                .with_params(honest_local_round(&net, &warm, None, &p, 1, 0, &mut rng::stream(0, &[r])).unwrap())
                .unwrap();
        }
        let idx: Vec<usize> = (1000..4000)
            .filter(|&i| labels_of_client.contains(&pool.labels()[i]))
            .take(200)
            .collect();
        let shard = pool.subset(&idx);
        let aux = task.auxiliary(100, 11).unwrap();
        (net, shard, aux, p)
    }

    #[test]
    fn wainakh_finds_single_label_client() {
        let (net, shard, aux, p) = trained_setup(&[2]);
        let local = honest_local_round(&net, &shard, None, &p, 1, 0, &mut rng::stream(1, &[0])).unwrap();
        let update = local.sub(net.params()).unwrap();
        let model = ImpactModel::estimate(&net, &aux, &p).unwrap();
        let d = pia_wainakh(&update, shard.len(), &model);
        assert_eq!(d.argmax(), 2, "{:?}", d.probs());
        let d = pia_dai(&update, &DaiBasis::estimate(&net, &aux).unwrap());
        assert_eq!(d.argmax(), 2, "{:?}", d.probs());
    }

    #[test]
    fn wainakh_tracks_balanced_client() {
        let (net, shard, aux, p) = trained_setup(&[0, 1, 2, 3]);
        let local = honest_local_round(&net, &shard, None, &p, 1, 0, &mut rng::stream(1, &[0])).unwrap();
        let update = local.sub(net.params()).unwrap();
        let model = ImpactModel::estimate(&net, &aux, &p).unwrap();
        let d = pia_wainakh(&update, shard.len(), &model);
        let truth: Vec<f64> = shard
            .label_histogram()
            .iter()
            .map(|&c| c as f64 / shard.len() as f64)
            .collect();
        let truth = LabelDistribution::new(truth).unwrap();
        assert!(d.distance(&truth) < 0.15, "{:?} vs {:?}", d.probs(), truth.probs());
    }

    fn toy_model(labels: usize, protocol: TrainingProtocol) -> ImpactModel {
        ImpactModel {
            labels,
            impact: 0.25,
            protocol,
        }
    }

    #[test]
    fn displacement_matches_scalar_momentum_run() {
        for (n, batch, epochs, canary, mu) in [
            (200usize, 64usize, 1usize, 3usize, 0.9),
            (50, 50, 2, 0, 0.5),
            (7, 3, 1, 5, 0.0),
        ] {
            let p = TrainingProtocol {
                learning_rate: 0.03,
                momentum: mu,
                weight_decay: 0.0,
                batch_size: batch,
                local_epochs: epochs,
                canary_epochs: canary,
            };
            // every sample has unit gradient; canary steps contribute none
            let steps = epochs * n.div_ceil(batch);
            let (mut x, mut v) = (0.0f64, 0.0f64);
            for i in 0..steps + canary {
                v = mu * v + if i < steps { 1.0 } else { 0.0 };
                x -= p.learning_rate * v;
            }
            let got = toy_model(3, p).displacement_per_sample(n);
            assert!(
                (got - (-x / n as f64)).abs() < 1e-12 * got,
                "{got} vs {}",
                -x / n as f64
            );
        }
    }

    #[test]
    fn noise_below_impact_peels_round_robin() {
        let p = TrainingProtocol::default();
        let model = toy_model(4, p);
        let shapes = vec![crate::nn::LayerShape::new(4, 2, true)];
        let mut update = ParamVector::zeros(shapes);
        let (_, b) = update.layer_mut(0);
        b.copy_from_slice(&[1e-13, -2e-13, 3e-13, 0.0]);
        assert_eq!(pia_wainakh(&update, 40, &model), LabelDistribution::uniform(4));
    }

    #[test]
    fn dai_drops_labels_whose_row_moved_down() {
        let shapes = vec![crate::nn::LayerShape::new(3, 2, true)];
        let column = |k: usize| {
            let mut v = vec![0.0; 9];
            v[2 * k] = 1.0;
            v[2 * k + 1] = 1.0;
            v[6 + k] = 1.0;
            v
        };
        let basis = DaiBasis {
            basis: (0..3).map(column).collect(),
        };
        // label 1 pulled down, labels 0 and 2 up 1:3
        let mut values = vec![0.0; 9];
        for (i, (c0, c2)) in column(0).iter().zip(column(2)).enumerate() {
            values[i] = c0 + 3.0 * c2;
        }
        values[2] = -0.5;
        values[7] = -0.5;
        let update = ParamVector::new(shapes, values).unwrap();
        let d = pia_dai(&update, &basis);
        assert_eq!(d.probs()[1], 0.0);
        assert!((d.probs()[2] - 0.75).abs() < 1e-6, "{:?}", d.probs());
    }

    #[test]
    fn zero_update_is_uniform() {
        let (net, _, aux, p) = trained_setup(&[0]);
        let model = ImpactModel::estimate(&net, &aux, &p).unwrap();
        let zero = net.params().zeros_like();
        assert_eq!(pia_wainakh(&zero, 50, &model), LabelDistribution::uniform(4));
        assert_eq!(
            pia_dai(&zero, &DaiBasis::estimate(&net, &aux).unwrap()),
            LabelDistribution::uniform(4)
        );
    }
}
