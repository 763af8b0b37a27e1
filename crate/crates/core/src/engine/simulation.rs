use rayon::prelude::*;

use super::aggregate::fedavg;
use super::client::{dp_noise, honest_local_round};
use crate::config::ExperimentConfig;
use crate::data::{partition, CanarySet, Dataset, SyntheticTask};
use crate::detect::{
    self, consistency_score, cosim_feature, diversity_score, global_distribution, pia_dai, pia_wainakh,
    CanaryGradients, DaiBasis, Detector, DetectorOutput, ImpactModel, LabelDistribution, PiaAttack, ScoreMatrix,
};
use crate::error::{Error, Result};
use crate::freerider::{FrStrategy, PublicSignals};
use crate::nn::{DenseNet, ParamVector};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientRole {
    Honest,
    FreeRider(FrStrategy),
    /// Skips its own data and trains only on the canaries.
    Selfish,
}

impl ClientRole {
    /// Counted as a positive by the metrics.
    pub fn is_positive(&self) -> bool {
        !matches!(self, ClientRole::Honest)
    }
}

/// What the server sees in round `t`.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    /// `M^{t-1}`, the model broadcast at the start of the round.
    pub global: DenseNet,
    /// `G_n^t = M_n^t - M^{t-1}` per client.
    pub updates: Vec<ParamVector>,
    /// Sample counts reported by the clients.
    pub sizes: Vec<usize>,
    /// Pool indices of the round's canary window (empty when canaries are off).
    pub canary_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub state: RoundState,
    pub outputs: Vec<DetectorOutput>,
    pub matrices: Vec<ScoreMatrix>,
    /// Inferred label distributions, when a label-inference detector ran.
    pub distributions: Option<Vec<LabelDistribution>>,
    /// Clients left out of aggregation by mitigation.
    pub excluded: Vec<usize>,
    /// Accuracy of `M^t` on the union of client shards.
    pub train_accuracy: f64,
    /// Accuracy of `M^t` on the held-out test set.
    pub test_accuracy: f64,
    /// Mean test loss of `M^t`.
    pub test_loss: f64,
}

impl RoundRecord {
    pub fn round(&self) -> usize {
        self.state.round
    }

    pub fn output(&self, d: Detector) -> Option<&DetectorOutput> {
        self.outputs.iter().find(|o| o.detector == d)
    }
}

/// A federated run, advanced one round at a time.
pub struct Simulation {
    config: ExperimentConfig,
    roles: Vec<ClientRole>,
    shards: Vec<Dataset>,
    train: Dataset,
    test: Dataset,
    canaries: Option<CanarySet>,
    aux: Dataset,
    global: DenseNet,
    initial: ParamVector,
    prev_gradient: Option<ParamVector>,
    prev_gradient2: Option<ParamVector>,
    prev_distributions: Option<Vec<LabelDistribution>>,
    round: usize,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let cfg = config.clone();
        let seed = cfg.seed;
        let d = &cfg.data;
        let task = SyntheticTask::new(
            d.labels,
            d.input_dim,
            d.separation,
            rng::derive_seed(seed, &[tag::TASK]),
        )?;
        let pool = task.sample(
            cfg.clients * d.samples_per_client,
            &mut rng::stream(seed, &[tag::TRAIN_DATA]),
        )?;
        let part = partition(
            &pool,
            cfg.clients,
            d.partition,
            &mut rng::stream(seed, &[tag::PARTITION]),
        )?;
        let shards: Vec<Dataset> = part.shards.iter().map(|ix| pool.subset(ix)).collect();
        let test = task.sample(d.test_samples, &mut rng::stream(seed, &[tag::TEST_DATA]))?;
        let canaries = if cfg.needs_canaries() {
            let pool = task.sample(cfg.canary.pool, &mut rng::stream(seed, &[tag::CANARY_POOL]))?;
            Some(CanarySet::new(pool, cfg.canary.size)?)
        } else {
            None
        };
        let aux = task.auxiliary(cfg.detect.aux_per_label, rng::derive_seed(seed, &[tag::AUXILIARY]))?;
        let global = DenseNet::new(&cfg.widths(), &mut rng::stream(seed, &[tag::INIT]))?;
        let mut roles = vec![ClientRole::Honest; cfg.clients];
        for f in &cfg.freeriders {
            roles[f.client] = ClientRole::FreeRider(f.strategy);
        }
        for &s in &cfg.selfish {
            roles[s] = ClientRole::Selfish;
        }
        let initial = global.params().clone();
        Ok(Simulation {
            config: cfg,
            roles,
            shards,
            train: pool,
            test,
            canaries,
            aux,
            global,
            initial,
            prev_gradient: None,
            prev_gradient2: None,
            prev_distributions: None,
            round: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn roles(&self) -> &[ClientRole] {
        &self.roles
    }

    /// Ground-truth positives per client.
    pub fn truth(&self) -> Vec<bool> {
        self.roles.iter().map(ClientRole::is_positive).collect()
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn global(&self) -> &DenseNet {
        &self.global
    }

    pub fn canaries(&self) -> Option<&CanarySet> {
        self.canaries.as_ref()
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    fn client_update(&self, n: usize, t: usize, canary: Option<&Dataset>) -> Result<ParamVector> {
        let cfg = &self.config;
        let protocol = &cfg.train;
        let mut rng = rng::stream(cfg.seed, &[tag::CLIENT, n as u64, t as u64]);
        let global = self.global.params();
        let canary_epochs = if canary.is_some() { protocol.canary_epochs } else { 0 };
        match self.roles[n] {
            ClientRole::Honest => {
                let local = honest_local_round(
                    &self.global,
                    &self.shards[n],
                    canary,
                    protocol,
                    protocol.local_epochs,
                    canary_epochs,
                    &mut rng,
                )?;
                let delta = local.sub(global)?;
                match &cfg.dp {
                    Some(dp) => dp_noise(&delta, dp, &mut rng::stream(cfg.seed, &[tag::DP, n as u64, t as u64])),
                    None => Ok(delta),
                }
            }
            ClientRole::Selfish => {
                let local = honest_local_round(
                    &self.global,
                    &self.shards[n],
                    canary,
                    protocol,
                    0,
                    canary_epochs,
                    &mut rng,
                )?;
                local.sub(global)
            }
            ClientRole::FreeRider(strategy) => {
                let signals = PublicSignals {
                    prev_model: global,
                    prev_gradient: self.prev_gradient.as_ref(),
                    prev_gradient2: self.prev_gradient2.as_ref(),
                    initial_model: &self.initial,
                    round: t,
                    cohort: cfg.clients,
                };
                strategy.fabricate(&signals, &mut rng).sub(global)
            }
        }
    }

    fn infer_distributions(&self, state: &RoundState) -> Result<Vec<LabelDistribution>> {
        let cfg = &self.config;
        match cfg.detect.pia_attack {
            PiaAttack::Wainakh => {
                let model = ImpactModel::estimate(&state.global, &self.aux, &cfg.train)?;
                Ok(state
                    .updates
                    .iter()
                    .zip(&state.sizes)
                    .map(|(u, &n)| pia_wainakh(u, n, &model))
                    .collect())
            }
            PiaAttack::Dai => {
                let basis = DaiBasis::estimate(&state.global, &self.aux)?;
                Ok(state.updates.iter().map(|u| pia_dai(u, &basis)).collect())
            }
        }
    }

    /// Runs the next round, or returns `None` after the last one.
    pub fn step(&mut self) -> Result<Option<RoundRecord>> {
        if self.round >= self.config.rounds {
            return Ok(None);
        }
        let t = self.round + 1;
        let cfg = self.config.clone();
        let window = match &self.canaries {
            Some(c) => Some(c.window(t)?),
            None => None,
        };
        let canary_batch = window.as_ref().map(|w| &w.batch);
        let train_on_canaries = if cfg.train.canary_epochs > 0 {
            canary_batch
        } else {
            None
        };
        let updates = (0..cfg.clients)
            .into_par_iter()
            .map(|n| self.client_update(n, t, train_on_canaries))
            .collect::<Result<Vec<_>>>()?;
        let state = RoundState {
            round: t,
            global: self.global.clone(),
            updates,
            sizes: self.shards.iter().map(Dataset::len).collect(),
            canary_indices: window.as_ref().map(|w| w.indices.clone()).unwrap_or_default(),
        };

        let mut server_rng = rng::stream(cfg.seed, &[tag::SERVER, t as u64]);
        let mut outputs = Vec::new();
        let mut matrices = Vec::new();
        let mut distributions = None;
        let dc = &cfg.detect;
        for &det in &dc.detectors {
            let output = match det {
                Detector::Loss => {
                    let batch = canary_batch.ok_or_else(|| Error::invalid("loss detector without canaries"))?;
                    let m = detect::loss_scores(&state.global, &state.updates, batch, t)?;
                    let verdicts = detect::loss_decide(&m, dc.tau_loss)?;
                    let scores = m.row_sums();
                    matrices.push(m);
                    DetectorOutput {
                        detector: det,
                        scores,
                        flags: verdicts.iter().map(|v| v.flag).collect(),
                    }
                }
                Detector::Cosine => {
                    let (canaries, window) = self
                        .canaries
                        .as_ref()
                        .zip(window.as_ref())
                        .ok_or_else(|| Error::invalid("cosine detector without canaries"))?;
                    let outside = canaries.complement(t, cfg.canary.size, &mut server_rng)?;
                    let nonmembers = canaries.pool().subset(&outside);
                    let grads = CanaryGradients::compute(&state.global, &window.batch, &nonmembers)?;
                    let (mem, non) = detect::cosine_scores(&state.updates, &grads, t)?;
                    let verdicts = detect::cosine_decide(&mem, &non, dc.alpha)?;
                    matrices.push(mem);
                    matrices.push(non);
                    DetectorOutput {
                        detector: det,
                        scores: verdicts.iter().map(|v| v.p).collect(),
                        flags: verdicts.iter().map(|v| v.flag).collect(),
                    }
                }
                Detector::Consistency | Detector::Diversity => {
                    if distributions.is_none() {
                        distributions = Some(self.infer_distributions(&state)?);
                    }
                    let dists = distributions.as_ref().unwrap();
                    let scores: Vec<f64> = if det == Detector::Consistency {
                        dists
                            .iter()
                            .enumerate()
                            .map(|(n, d)| consistency_score(d, self.prev_distributions.as_ref().map(|p| &p[n])))
                            .collect()
                    } else {
                        let global = global_distribution(dists)?;
                        dists.iter().map(|d| diversity_score(d, &global)).collect()
                    };
                    let verdicts = detect::pia_decide(&scores, dc.tau_pia)?;
                    DetectorOutput {
                        detector: det,
                        scores,
                        flags: verdicts.iter().map(|v| v.flag).collect(),
                    }
                }
                Detector::L2 | Detector::Std | Detector::Cosim => {
                    let scores = match det {
                        Detector::L2 => detect::l2_feature(&state.updates),
                        Detector::Std => detect::std_feature(&state.updates),
                        _ => {
                            let mut r = rng::stream(cfg.seed, &[tag::BASELINE, t as u64]);
                            cosim_feature(&state.updates, &mut r)?.0
                        }
                    };
                    let verdicts = detect::feature_decide(&scores, dc.tau_feature)?;
                    DetectorOutput {
                        detector: det,
                        scores,
                        flags: verdicts.iter().map(|v| v.flag).collect(),
                    }
                }
                Detector::Oracle => {
                    let flags = self.truth();
                    DetectorOutput {
                        detector: det,
                        scores: flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
                        flags,
                    }
                }
            };
            outputs.push(output);
        }

        let mut excluded: Vec<usize> = match cfg.mitigate {
            Some(m) => outputs
                .iter()
                .find(|o| o.detector == m)
                .map(|o| (0..cfg.clients).filter(|&n| o.flags[n]).collect())
                .unwrap_or_default(),
            None => Vec::new(),
        };
        if excluded.len() == cfg.clients {
            log::warn!("round {t}: every client flagged; aggregating all of them");
            excluded.clear();
        }
        let (models, sizes): (Vec<ParamVector>, Vec<usize>) = (0..cfg.clients)
            .filter(|n| !excluded.contains(n))
            .map(|n| Ok((state.global.params().add(&state.updates[n])?, state.sizes[n])))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let next = fedavg(&models, &sizes)?;
        let gradient = next.sub(self.global.params())?;
        self.global = self.global.with_params(next)?;
        self.prev_gradient2 = self.prev_gradient.take();
        self.prev_gradient = Some(gradient);
        if distributions.is_some() {
            self.prev_distributions = distributions.clone();
        }
        self.round = t;

        let train_accuracy = self.global.accuracy(self.train.features(), self.train.labels())?;
        let test_accuracy = self.global.accuracy(self.test.features(), self.test.labels())?;
        let test_loss = self.global.loss(self.test.features(), self.test.labels())?;
        log::debug!("round {t}: test accuracy {test_accuracy:.4}");
        Ok(Some(RoundRecord {
            state,
            outputs,
            matrices,
            distributions,
            excluded,
            train_accuracy,
            test_accuracy,
            test_loss,
        }))
    }

    /// Runs every remaining round.
    pub fn run(mut self) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.config.rounds);
        while let Some(r) = self.step()? {
            records.push(r);
        }
        Ok(records)
    }
}

impl Iterator for Simulation {
    type Item = Result<RoundRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.step().transpose()
    }
}

/// A complete run: the per-round records plus ground truth.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub truth: Vec<bool>,
    pub records: Vec<RoundRecord>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let sim = Simulation::new(config)?;
    let truth = sim.truth();
    let records = sim.run()?;
    Ok(RunOutput {
        config: config.clone(),
        truth,
        records,
    })
}
