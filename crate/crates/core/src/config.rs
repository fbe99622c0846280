//! Run configuration: flat `key = value` text with dotted section keys.
//!
//! ```text
//! # comments and blank lines are ignored
//! model.seed = 7
//! data.count = 200
//! data.seed = 11
//! data.weights.spiky_span = 0.2
//! train.seed = 3
//! train.steps = 2000
//! ```
//!
//! Seeds have no defaults: commands that need one fail when it is missing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Regime, SynthOptions};
use crate::dit::DitConfig;
use crate::flow::FlowConfig;
use crate::train::{Stage, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub count: usize,
    pub seed: Option<u64>,
    pub weights: Vec<(Regime, f64)>,
    pub synth: SynthOptions,
    /// Training corpus manifest, resolved against the config file.
    pub corpus: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 100,
            seed: None,
            weights: vec![
                (Regime::MultiStem, 0.5),
                (Regime::TargetPlusNoise, 0.3),
                (Regime::SpikySpan, 0.2),
            ],
            synth: SynthOptions::default(),
            corpus: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub ema_decay: f64,
    pub seed: Option<u64>,
    pub stage: Stage,
    /// Periodic checkpoint interval in steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup: t.warmup,
            ema_decay: t.ema_decay,
            seed: None,
            stage: t.stage,
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: DitConfig,
    pub model_seed: Option<u64>,
    pub flow: FlowConfig,
    pub data: DataConfig,
    pub train: TrainSection,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn require(seed: Option<u64>, key: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Config(format!("{key} is required")))
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if seen.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        let mut c = RunConfig::default();
        let mut weights: BTreeMap<Regime, f64> = BTreeMap::new();
        for (k, v) in &seen {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "model.layers" => c.model.layers = parse_value(k, v)?,
                "model.dim" => c.model.dim = parse_value(k, v)?,
                "model.ffn_dim" => c.model.ffn_dim = parse_value(k, v)?,
                "model.heads" => c.model.heads = parse_value(k, v)?,
                "model.aux_layer" => c.model.aux_layer = parse_value(k, v)?,
                "model.aux_hidden" => c.model.aux_hidden = parse_value(k, v)?,
                "model.time_hidden" => c.model.time_hidden = parse_value(k, v)?,
                "model.max_frames" => c.model.max_frames = parse_value(k, v)?,
                "model.seed" => c.model_seed = Some(parse_value(k, v)?),
                "flow.sigma_min" => c.flow.sigma_min = parse_value(k, v)?,
                "flow.ode_steps" => c.flow.ode_steps = parse_value(k, v)?,
                "flow.solver" => c.flow.solver = parse_value(k, v)?,
                "data.count" => c.data.count = parse_value(k, v)?,
                "data.seed" => c.data.seed = Some(parse_value(k, v)?),
                "data.duration" => c.data.synth.duration = parse_value(k, v)?,
                "data.sources_min" => c.data.synth.sources.0 = parse_value(k, v)?,
                "data.sources_max" => c.data.synth.sources.1 = parse_value(k, v)?,
                "data.visual_prob" => c.data.synth.visual_prob = parse_value(k, v)?,
                "data.distractor_prob" => c.data.synth.distractor_prob = parse_value(k, v)?,
                "data.corpus" => {
                    let p = base.join(v);
                    if !p.exists() {
                        return Err(Error::Config(format!("data.corpus {} does not exist", p.display())));
                    }
                    c.data.corpus = Some(p);
                }
                "train.steps" => c.train.steps = parse_value(k, v)?,
                "train.batch_size" => c.train.batch_size = parse_value(k, v)?,
                "train.lr" => c.train.lr = parse_value(k, v)?,
                "train.warmup" => c.train.warmup = parse_value(k, v)?,
                "train.ema_decay" => c.train.ema_decay = parse_value(k, v)?,
                "train.seed" => c.train.seed = Some(parse_value(k, v)?),
                "train.stage" => c.train.stage = parse_value(k, v)?,
                "train.checkpoint_every" => c.train.checkpoint_every = parse_value(k, v)?,
                _ => match k.strip_prefix("data.weights.") {
                    Some(r) => {
                        weights.insert(r.parse()?, parse_value(k, v)?);
                    }
                    None => return Err(Error::Config(format!("unknown key {k}"))),
                },
            }
        }
        if !weights.is_empty() {
            c.data.weights = Regime::ALL
                .iter()
                .map(|r| (*r, weights.get(r).copied().unwrap_or(0.0)))
                .collect();
        }
        c.model.validate()?;
        c.flow.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn data_seed(&self) -> Result<u64> {
        require(self.data.seed, "data.seed")
    }

    pub fn model_seed(&self) -> Result<u64> {
        require(self.model_seed, "model.seed")
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let c = TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup: t.warmup,
            ema_decay: t.ema_decay,
            seed: require(t.seed, "train.seed")?,
            stage: t.stage,
        };
        c.validate()?;
        Ok(c)
    }
}
