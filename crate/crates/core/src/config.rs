//! Experiment configuration: a flat `key = value` file with dotted keys and `#`
//! comments. Every key is optional except `clients` and `rounds`; unknown keys are
//! rejected. [`ExperimentConfig::to_text`] writes every key in a fixed order, so
//! loading a saved config gives back the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::Scheme;
use crate::detect::{Detector, PiaAttack};
use crate::engine::{DpConfig, TrainingProtocol};
use crate::error::{Error, Result};
use crate::freerider::{FrStrategy, StrategyKind};

/// Raw `key -> value` pairs, before defaults and validation.
pub type RawConfig = BTreeMap<String, String>;

pub const REQUIRED_KEYS: [&str; 2] = ["clients", "rounds"];

/// Every recognised key, in the order [`ExperimentConfig::to_text`] writes them.
pub const KNOWN_KEYS: [&str; 41] = [
    "clients",
    "rounds",
    "seed",
    "skip_rounds",
    "repeats",
    "out",
    "mitigate",
    "data.labels",
    "data.input_dim",
    "data.samples_per_client",
    "data.test_samples",
    "data.separation",
    "data.partition",
    "data.dirichlet_alpha",
    "model.hidden",
    "train.local_epochs",
    "train.batch_size",
    "train.lr",
    "train.momentum",
    "train.weight_decay",
    "canary.size",
    "canary.epochs",
    "canary.pool",
    "fr.clients",
    "fr.strategy",
    "fr.alpha",
    "fr.gamma",
    "fr.fraction",
    "fr.lambda",
    "fr.fallback_sigma",
    "selfish.clients",
    "dp.clip",
    "dp.sigma",
    "dp.epsilon",
    "detect.list",
    "detect.tau_loss",
    "detect.tau_pia",
    "detect.tau_feature",
    "detect.alpha",
    "detect.pia_attack",
    "detect.aux_per_label",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub labels: usize,
    pub input_dim: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    pub separation: f64,
    pub partition: Scheme,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanaryConfig {
    /// Canaries per round.
    pub size: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeRider {
    pub client: usize,
    pub strategy: FrStrategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub detectors: Vec<Detector>,
    pub tau_loss: f64,
    pub tau_pia: f64,
    pub tau_feature: f64,
    pub alpha: f64,
    pub pia_attack: PiaAttack,
    pub aux_per_label: usize,
}

impl DetectConfig {
    pub fn enabled(&self, d: Detector) -> bool {
        self.detectors.contains(&d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub clients: usize,
    pub rounds: usize,
    pub seed: u64,
    /// Leading rounds left out of the metrics file.
    pub skip_rounds: usize,
    /// Independent repetitions per sweep point, seeded `seed, seed + 1, ...`.
    pub repeats: usize,
    pub out: Option<PathBuf>,
    /// Detector whose flags are excluded from aggregation.
    pub mitigate: Option<Detector>,
    pub data: DataConfig,
    pub hidden: Vec<usize>,
    pub train: TrainingProtocol,
    pub canary: CanaryConfig,
    pub freeriders: Vec<FreeRider>,
    pub selfish: Vec<usize>,
    pub dp: Option<DpConfig>,
    pub detect: DetectConfig,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Splits config text into raw pairs. `path` only labels error messages.
pub fn parse_raw(text: &str, path: &Path) -> Result<RawConfig> {
    let mut raw = RawConfig::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_error(path, i + 1, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(parse_error(path, i + 1, "empty key"));
        }
        let value = value.trim().trim_matches('"');
        if raw.insert(key.to_string(), value.to_string()).is_some() {
            return Err(parse_error(path, i + 1, format!("duplicate key `{key}`")));
        }
    }
    Ok(raw)
}

struct Reader<'a> {
    raw: &'a RawConfig,
}

impl Reader<'_> {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self
            .raw
            .get(key)
            .ok_or_else(|| Error::config(key, "missing required key"))?;
        v.parse()
            .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw.get(key) {
            None => Ok(None),
            Some(v) => split_list(v)
                .map(|item| {
                    item.parse()
                        .map_err(|e| Error::config(key, format!("cannot parse `{item}`: {e}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn scheme_from(raw: &Reader<'_>) -> Result<Scheme> {
    let name: String = raw.get("data.partition", "iid".to_string())?;
    let alpha: f64 = raw.get("data.dirichlet_alpha", 0.5)?;
    match name.as_str() {
        "iid" => Ok(Scheme::Iid),
        "dirichlet" => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::config("data.dirichlet_alpha", "must be positive"));
            }
            Ok(Scheme::Dirichlet(alpha))
        }
        "single_label" => Ok(Scheme::SingleLabel),
        other => Err(Error::config(
            "data.partition",
            format!("unknown scheme `{other}` (expected iid, dirichlet or single_label)"),
        )),
    }
}

impl ExperimentConfig {
    /// Applies defaults and validates.
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| !raw.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::config(missing.join(", "), "missing required key"));
        }
        if let Some(unknown) = raw.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::config(unknown.clone(), "unknown key"));
        }
        let r = Reader { raw };
        let clients: usize = r.required("clients")?;
        let rounds: usize = r.required("rounds")?;

        let data = DataConfig {
            labels: r.get("data.labels", 10)?,
            input_dim: r.get("data.input_dim", 32)?,
            samples_per_client: r.get("data.samples_per_client", 200)?,
            test_samples: r.get("data.test_samples", 1000)?,
            separation: r.get("data.separation", crate::data::DEFAULT_SEPARATION)?,
            partition: scheme_from(&r)?,
        };
        let hidden = match raw.get("model.hidden") {
            Some(v) if v.trim() == "none" => Vec::new(),
            _ => r.list("model.hidden")?.unwrap_or_else(|| vec![32]),
        };
        let train = TrainingProtocol {
            learning_rate: r.get("train.lr", 0.01)?,
            momentum: r.get("train.momentum", 0.9)?,
            weight_decay: r.get("train.weight_decay", 1e-5)?,
            batch_size: r.get("train.batch_size", 64)?,
            local_epochs: r.get("train.local_epochs", 1)?,
            canary_epochs: r.get("canary.epochs", 3)?,
        };
        let canary_size: usize = r.get("canary.size", 100)?;
        let canary = CanaryConfig {
            size: canary_size,
            pool: r.get("canary.pool", canary_size * (rounds + 1))?,
        };

        let default_kind: StrategyKind = r
            .get("fr.strategy", "fraboni".to_string())?
            .parse()
            .map_err(|e: Error| Error::config("fr.strategy", e.to_string()))?;
        let strategy_with = |kind| -> Result<FrStrategy> {
            Ok(FrStrategy {
                kind,
                alpha: r.get("fr.alpha", 1.0)?,
                gamma: r.get("fr.gamma", 1.0)?,
                fraction: r.get("fr.fraction", 0.6)?,
                lambda: r.get("fr.lambda", 0.01)?,
                fallback_sigma: r.get("fr.fallback_sigma", 0.01)?,
            })
        };
        let mut freeriders = Vec::new();
        if let Some(v) = raw.get("fr.clients") {
            for item in split_list(v) {
                let (idx, kind) = match item.split_once(':') {
                    Some((i, k)) => (
                        i.trim(),
                        k.parse()
                            .map_err(|e: Error| Error::config("fr.clients", e.to_string()))?,
                    ),
                    None => (item, default_kind),
                };
                let client = idx
                    .parse()
                    .map_err(|e| Error::config("fr.clients", format!("cannot parse `{idx}`: {e}")))?;
                freeriders.push(FreeRider {
                    client,
                    strategy: strategy_with(kind)?,
                });
            }
        } else {
            // still validate the hyperparameters
            strategy_with(default_kind)?;
        }
        let selfish: Vec<usize> = r.list("selfish.clients")?.unwrap_or_default();

        let dp = match (raw.get("dp.clip"), raw.get("dp.sigma")) {
            (None, None) => {
                if raw.contains_key("dp.epsilon") {
                    return Err(Error::config(
                        "dp.epsilon",
                        "set only together with dp.clip and dp.sigma",
                    ));
                }
                None
            }
            (Some(_), Some(_)) => Some(DpConfig {
                clip_norm: r.required("dp.clip")?,
                noise_sigma: r.required("dp.sigma")?,
                epsilon_label: match raw.get("dp.epsilon") {
                    Some(_) => Some(r.required("dp.epsilon")?),
                    None => None,
                },
            }),
            (None, Some(_)) => return Err(Error::config("dp.clip", "dp.sigma needs dp.clip")),
            (Some(_), None) => return Err(Error::config("dp.sigma", "dp.clip needs dp.sigma")),
        };

        let detectors: Vec<Detector> = match raw.get("detect.list") {
            Some(v) if v.trim() == "none" => Vec::new(),
            _ => r.list("detect.list")?.unwrap_or_else(|| {
                vec![
                    Detector::Loss,
                    Detector::Cosine,
                    Detector::Consistency,
                    Detector::Diversity,
                ]
            }),
        };
        let detect = DetectConfig {
            detectors,
            tau_loss: r.get("detect.tau_loss", 1.0)?,
            tau_pia: r.get("detect.tau_pia", 1.0)?,
            tau_feature: r.get("detect.tau_feature", 1.0)?,
            alpha: r.get("detect.alpha", 0.05)?,
            pia_attack: r.get("detect.pia_attack", PiaAttack::Wainakh)?,
            aux_per_label: r.get("detect.aux_per_label", 100)?,
        };
        let mitigate = match raw.get("mitigate").map(|s| s.trim()) {
            None | Some("none") => None,
            Some(_) => Some(r.required::<Detector>("mitigate")?),
        };

        let cfg = ExperimentConfig {
            clients,
            rounds,
            seed: r.get("seed", 0)?,
            skip_rounds: r.get("skip_rounds", 0)?,
            repeats: r.get("repeats", 1)?,
            out: raw.get("out").map(PathBuf::from),
            mitigate,
            data,
            hidden,
            train,
            canary,
            freeriders,
            selfish,
            dp,
            detect,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(&parse_raw(text, Path::new("<config>"))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raw(&load_raw(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(key, msg)) };
        check(self.clients >= 3, "clients", "need at least 3 clients")?;
        check(self.rounds >= 1, "rounds", "need at least 1 round")?;
        check(
            self.skip_rounds < self.rounds,
            "skip_rounds",
            "must be smaller than rounds",
        )?;
        check(self.repeats >= 1, "repeats", "must be at least 1")?;
        let d = &self.data;
        check(d.labels >= 2, "data.labels", "need at least 2 labels")?;
        check(d.input_dim >= 1, "data.input_dim", "must be positive")?;
        check(d.samples_per_client >= 1, "data.samples_per_client", "must be positive")?;
        check(d.test_samples >= 1, "data.test_samples", "must be positive")?;
        check(
            d.separation >= 0.0 && d.separation.is_finite(),
            "data.separation",
            "must be finite and >= 0",
        )?;
        if d.partition == Scheme::SingleLabel {
            // the balanced pool holds exactly clients / labels shards of each label
            check(
                self.clients.is_multiple_of(d.labels),
                "data.partition",
                "single_label needs clients to be a multiple of data.labels",
            )?;
        }
        check(
            self.hidden.iter().all(|&h| h > 0),
            "model.hidden",
            "widths must be positive",
        )?;
        let t = &self.train;
        check(
            t.learning_rate > 0.0 && t.learning_rate.is_finite(),
            "train.lr",
            "must be positive",
        )?;
        check((0.0..1.0).contains(&t.momentum), "train.momentum", "must lie in [0, 1)")?;
        check(
            t.weight_decay >= 0.0 && t.weight_decay.is_finite(),
            "train.weight_decay",
            "must be >= 0",
        )?;
        check(t.batch_size >= 1, "train.batch_size", "must be positive")?;
        check(self.canary.size >= 1, "canary.size", "must be positive")?;
        if self.needs_canaries() {
            let needed = self.canary.size * (self.rounds + usize::from(self.detect.enabled(Detector::Cosine)));
            check(
                self.canary.pool >= needed,
                "canary.pool",
                &format!("needs at least {needed} samples for {} rounds", self.rounds),
            )?;
        }
        let mut seen = vec![false; self.clients];
        for (key, idx) in self
            .freeriders
            .iter()
            .map(|f| ("fr.clients", f.client))
            .chain(self.selfish.iter().map(|&c| ("selfish.clients", c)))
        {
            check(idx < self.clients, key, &format!("client {idx} out of range"))?;
            check(!seen[idx], key, &format!("client {idx} listed twice"))?;
            seen[idx] = true;
        }
        check(
            seen.iter().any(|s| !s),
            "fr.clients",
            "at least one client must be honest",
        )?;
        if let Some(f) = self.freeriders.first() {
            let s = f.strategy;
            check(s.alpha >= 0.0 && s.alpha.is_finite(), "fr.alpha", "must be >= 0")?;
            check(s.gamma.is_finite(), "fr.gamma", "must be finite")?;
            check(
                s.fraction > 0.0 && s.fraction <= 1.0,
                "fr.fraction",
                "must lie in (0, 1]",
            )?;
            check(s.lambda.is_finite(), "fr.lambda", "must be finite")?;
            check(
                s.fallback_sigma >= 0.0 && s.fallback_sigma.is_finite(),
                "fr.fallback_sigma",
                "must be >= 0",
            )?;
        }
        if let Some(dp) = &self.dp {
            check(
                dp.clip_norm > 0.0 && dp.clip_norm.is_finite(),
                "dp.clip",
                "must be positive",
            )?;
            check(
                dp.noise_sigma >= 0.0 && dp.noise_sigma.is_finite(),
                "dp.sigma",
                "must be >= 0",
            )?;
        }
        let dc = &self.detect;
        for (key, v) in [
            ("detect.tau_loss", dc.tau_loss),
            ("detect.tau_pia", dc.tau_pia),
            ("detect.tau_feature", dc.tau_feature),
        ] {
            check(v > 0.0 && v.is_finite(), key, "must be positive")?;
        }
        check(dc.alpha > 0.0 && dc.alpha < 1.0, "detect.alpha", "must lie in (0, 1)")?;
        check(dc.aux_per_label >= 1, "detect.aux_per_label", "must be positive")?;
        let mut dedup = dc.detectors.clone();
        dedup.sort();
        dedup.dedup();
        check(
            dedup.len() == dc.detectors.len(),
            "detect.list",
            "detector listed twice",
        )?;
        if let Some(m) = self.mitigate {
            check(dc.enabled(m), "mitigate", "detector must also appear in detect.list")?;
        }
        Ok(())
    }

    /// Canary windows are drawn when clients train on them or a detector scores them.
    pub fn needs_canaries(&self) -> bool {
        self.train.canary_epochs > 0 || self.detect.detectors.iter().any(|d| d.uses_canaries())
    }

    /// Layer widths `[input, hidden.., labels]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.data.input_dim];
        w.extend(&self.hidden);
        w.push(self.data.labels);
        w
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let join = |items: Vec<String>, empty: &str| {
            if items.is_empty() {
                empty.to_string()
            } else {
                items.join(",")
            }
        };
        put("clients", self.clients.to_string());
        put("rounds", self.rounds.to_string());
        put("seed", self.seed.to_string());
        put("skip_rounds", self.skip_rounds.to_string());
        put("repeats", self.repeats.to_string());
        if let Some(out) = &self.out {
            put("out", out.display().to_string());
        }
        put("mitigate", self.mitigate.map_or("none".to_string(), |d| d.to_string()));
        let d = &self.data;
        put("data.labels", d.labels.to_string());
        put("data.input_dim", d.input_dim.to_string());
        put("data.samples_per_client", d.samples_per_client.to_string());
        put("data.test_samples", d.test_samples.to_string());
        put("data.separation", d.separation.to_string());
        let (scheme, alpha) = match d.partition {
            Scheme::Iid => ("iid", None),
            Scheme::Dirichlet(a) => ("dirichlet", Some(a)),
            Scheme::SingleLabel => ("single_label", None),
        };
        put("data.partition", scheme.to_string());
        if let Some(a) = alpha {
            put("data.dirichlet_alpha", a.to_string());
        }
        put(
            "model.hidden",
            join(self.hidden.iter().map(|h| h.to_string()).collect(), "none"),
        );
        let t = &self.train;
        put("train.local_epochs", t.local_epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.lr", t.learning_rate.to_string());
        put("train.momentum", t.momentum.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("canary.size", self.canary.size.to_string());
        put("canary.epochs", t.canary_epochs.to_string());
        put("canary.pool", self.canary.pool.to_string());
        if let Some(f) = self.freeriders.first() {
            put(
                "fr.clients",
                self.freeriders
                    .iter()
                    .map(|f| format!("{}:{}", f.client, f.strategy.kind))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            let s = f.strategy;
            put("fr.alpha", s.alpha.to_string());
            put("fr.gamma", s.gamma.to_string());
            put("fr.fraction", s.fraction.to_string());
            put("fr.lambda", s.lambda.to_string());
            put("fr.fallback_sigma", s.fallback_sigma.to_string());
        }
        if !self.selfish.is_empty() {
            put(
                "selfish.clients",
                join(self.selfish.iter().map(|c| c.to_string()).collect(), ""),
            );
        }
        if let Some(dp) = &self.dp {
            put("dp.clip", dp.clip_norm.to_string());
            put("dp.sigma", dp.noise_sigma.to_string());
            if let Some(e) = dp.epsilon_label {
                put("dp.epsilon", e.to_string());
            }
        }
        let dc = &self.detect;
        put(
            "detect.list",
            join(dc.detectors.iter().map(|d| d.to_string()).collect(), "none"),
        );
        put("detect.tau_loss", dc.tau_loss.to_string());
        put("detect.tau_pia", dc.tau_pia.to_string());
        put("detect.tau_feature", dc.tau_feature.to_string());
        put("detect.alpha", dc.alpha.to_string());
        put("detect.pia_attack", dc.pia_attack.to_string());
        put("detect.aux_per_label", dc.aux_per_label.to_string());
        s
    }
}

pub fn load_raw(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raw(&text, path)
}

/// Parses and re-emits a config in canonical form.
pub fn normalize(text: &str) -> Result<String> {
    Ok(ExperimentConfig::parse(text)?.to_text())
}
