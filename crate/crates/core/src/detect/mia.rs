//! Canary-based membership inference against client updates.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{cosine, DenseNet, ParamVector};
use crate::stats::{t_test, z_test, Side, TVerdict, ZVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    /// Cross-entropy of each canary under `M^{t-1} + G_n`.
    Loss,
    /// Cosine between `G_n` and each member canary's gradient.
    Member,
    /// Cosine between `G_n` and each non-member sample's gradient.
    Nonmember,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Loss => "loss",
            ScoreKind::Member => "member",
            ScoreKind::Nonmember => "nonmember",
        })
    }
}

/// Clients by samples score matrix for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub round: usize,
    pub kind: ScoreKind,
    pub scores: Array2<f64>,
}

impl ScoreMatrix {
    pub fn clients(&self) -> usize {
        self.scores.nrows()
    }

    pub fn samples(&self) -> usize {
        self.scores.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.scores.rows().into_iter().map(|r| r.sum()).collect()
    }
}

/// Per-canary loss of every client's local model `M^{t-1} + G_n`.
pub fn loss_scores(global: &DenseNet, updates: &[ParamVector], canary: &Dataset, round: usize) -> Result<ScoreMatrix> {
    if canary.is_empty() {
        return Err(Error::invalid("canary window is empty"));
    }
    let rows = updates
        .par_iter()
        .map(|g| {
            let local = global.with_params(global.params().add(g)?)?;
            local.sample_losses(canary.features(), canary.labels())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Array2::zeros((updates.len(), canary.len()));
    for (n, row) in rows.iter().enumerate() {
        for (s, &v) in row.iter().enumerate() {
            scores[[n, s]] = v;
        }
    }
    Ok(ScoreMatrix {
        round,
        kind: ScoreKind::Loss,
        scores,
    })
}

/// Row sums z-scored across clients; flags `z > tau` (models that never saw the canaries).
pub fn loss_decide(matrix: &ScoreMatrix, tau: f64) -> Result<Vec<ZVerdict>> {
    z_test(&matrix.row_sums(), tau, Side::High)
}

/// Per-sample gradients at `M^{t-1}` for the round's members and non-members.
#[derive(Debug, Clone)]
pub struct CanaryGradients {
    pub members: Vec<ParamVector>,
    pub nonmembers: Vec<ParamVector>,
}

fn per_sample_gradients(global: &DenseNet, data: &Dataset) -> Result<Vec<ParamVector>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let one = data.subset(&[i]);
            global.loss_and_grad(one.features(), one.labels()).map(|(_, g)| g)
        })
        .collect()
}

impl CanaryGradients {
    pub fn compute(global: &DenseNet, members: &Dataset, nonmembers: &Dataset) -> Result<Self> {
        if members.is_empty() || nonmembers.is_empty() {
            return Err(Error::invalid("member and non-member sets must be non-empty"));
        }
        Ok(CanaryGradients {
            members: per_sample_gradients(global, members)?,
            nonmembers: per_sample_gradients(global, nonmembers)?,
        })
    }
}

fn cosine_row(update: &ParamVector, grads: &[ParamVector], zero_norms: &mut usize) -> Vec<f64> {
    grads
        .iter()
        .map(|g| match cosine(update.values(), g.values()) {
            Some(c) => c,
            None => {
                *zero_norms += 1;
                0.0
            }
        })
        .collect()
}

/// Member and non-member cosine matrices. Zero-norm vectors score 0.
pub fn cosine_scores(
    updates: &[ParamVector],
    grads: &CanaryGradients,
    round: usize,
) -> Result<(ScoreMatrix, ScoreMatrix)> {
    for u in updates {
        if let Some(g) = grads.members.first() {
            u.check_shape(g)?;
        }
    }
    let mut zero_norms = 0usize;
    let n = updates.len();
    let mut member = Array2::zeros((n, grads.members.len()));
    let mut nonmember = Array2::zeros((n, grads.nonmembers.len()));
    for (i, u) in updates.iter().enumerate() {
        for (j, v) in cosine_row(u, &grads.members, &mut zero_norms).into_iter().enumerate() {
            member[[i, j]] = v;
        }
        for (j, v) in cosine_row(u, &grads.nonmembers, &mut zero_norms)
            .into_iter()
            .enumerate()
        {
            nonmember[[i, j]] = v;
        }
    }
    if zero_norms > 0 {
        log::warn!("round {round}: {zero_norms} cosine scores involved a zero-norm vector and were set to 0");
    }
    Ok((
        ScoreMatrix {
            round,
            kind: ScoreKind::Member,
            scores: member,
        },
        ScoreMatrix {
            round,
            kind: ScoreKind::Nonmember,
            scores: nonmember,
        },
    ))
}

/// Per client: pooled t-test of member against non-member cosines. A client is
/// flagged when the two are indistinguishable (`p >= alpha`).
pub fn cosine_decide(member: &ScoreMatrix, nonmember: &ScoreMatrix, alpha: f64) -> Result<Vec<TVerdict>> {
    if member.clients() != nonmember.clients() {
        return Err(Error::shape("member and non-member matrices disagree on client count"));
    }
    member
        .scores
        .rows()
        .into_iter()
        .zip(nonmember.scores.rows())
        .map(|(a, b)| t_test(&a.to_vec(), &b.to_vec(), alpha))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticTask;
    use crate::engine::{honest_local_round, TrainingProtocol};
    use crate::nn::LayerShape;
    use crate::rng;

    fn setup() -> (DenseNet, Dataset, Dataset, Dataset) {
        let task = SyntheticTask::new(3, 16, 3.0, 2).unwrap();
        let shard = task.sample(120, &mut rng::stream(2, &[1])).unwrap();
        let canary = task.sample(30, &mut rng::stream(2, &[2])).unwrap();
        let other = task.sample(30, &mut rng::stream(2, &[3])).unwrap();
        let net = DenseNet::new(&[16, 32, 3], &mut rng::stream(2, &[4])).unwrap();
        (net, shard, canary, other)
    }

    #[test]
    fn loss_matrix_matches_direct_evaluation() {
        let (net, shard, canary, _) = setup();
        let p = TrainingProtocol::default();
        let local = honest_local_round(&net, &shard, Some(&canary), &p, 1, 3, &mut rng::stream(0, &[0])).unwrap();
        let update = local.sub(net.params()).unwrap();
        let m = loss_scores(&net, &[update.clone(), update.zeros_like()], &canary, 4).unwrap();
        assert_eq!((m.clients(), m.samples()), (2, 30));
        let direct = net
            .with_params(local)
            .unwrap()
            .sample_losses(canary.features(), canary.labels())
            .unwrap();
        for (s, d) in direct.iter().enumerate() {
            assert!((m.scores[[0, s]] - d).abs() < 1e-12);
        }
        let base = net.sample_losses(canary.features(), canary.labels()).unwrap();
        assert!((m.scores[[1, 0]] - base[0]).abs() < 1e-12);
        assert!(m.row_sums()[0] < m.row_sums()[1]);
    }

    #[test]
    fn cosine_separates_members_for_canary_trained_update() {
        let (mut net, shard, canary, other) = setup();
        let p = TrainingProtocol::default();
        for r in 0..10 {
            let params = honest_local_round(&net, &shard, None, &p, 1, 0, &mut rng::stream(1, &[r])).unwrap();
            net = net.with_params(params).unwrap();
        }
        let local = honest_local_round(&net, &shard, Some(&canary), &p, 1, 3, &mut rng::stream(0, &[0])).unwrap();
        let update = local.sub(net.params()).unwrap();
        let grads = CanaryGradients::compute(&net, &canary, &other).unwrap();
        let noise = {
            let mut r = rng::stream(9, &[9]);
            let v = (0..update.len())
                .map(|_| rand::Rng::random_range(&mut r, -1e-3..1e-3))
                .collect();
            update.with_values(v).unwrap()
        };
        let (mem, non) = cosine_scores(&[update, noise], &grads, 1).unwrap();
        let verdicts = cosine_decide(&mem, &non, 0.05).unwrap();
        // a canary-trained update points against the member gradients
        assert!(verdicts[0].t < 0.0 && !verdicts[0].flag, "{:?}", verdicts[0]);
        assert!(verdicts[1].flag, "{:?}", verdicts[1]);
    }

    #[test]
    fn zero_update_scores_zero() {
        let shapes = vec![LayerShape::new(2, 1, false)];
        let zero = ParamVector::zeros(shapes.clone());
        let g = ParamVector::new(shapes, vec![1.0, 0.0]).unwrap();
        let grads = CanaryGradients {
            members: vec![g.clone(), g.clone()],
            nonmembers: vec![g.clone(), g],
        };
        let (mem, non) = cosine_scores(&[zero], &grads, 1).unwrap();
        assert!(mem.scores.iter().chain(non.scores.iter()).all(|&v| v == 0.0));
    }
}
