//! Training loop: flow-matching loss with the auxiliary alignment term,
//! AdamW with linear warmup, EMA weights and resumable state.
//!
//! Every step draws its batch, flow times, noise and dropout from an RNG
//! keyed on `(seed, step)`, so a run resumed from a checkpoint at step `k`
//! replays the uninterrupted run exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sepflow_tensor::{AdamW, AdamWConfig, Graph, Tensor};

use crate::checkpoint::Checkpoint;
use crate::codec::{self, LatentSeq};
use crate::data::MixTriplet;
use crate::dit::{self, Conditioning, DitConfig, Separator};
use crate::flow::{self, FlowConfig};
use crate::params::{Binder, ParamStore};
use crate::prompt::{self, PromptBundle};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Auxiliary loss on (λ = 1) and 0.3 conditioning dropout.
    Pretrain,
    /// λ = 0, no dropout.
    Finetune,
}

impl Stage {
    pub fn lambda_aux(self) -> f64 {
        match self {
            Stage::Pretrain => 1.0,
            Stage::Finetune => 0.0,
        }
    }

    pub fn dropout(self) -> f64 {
        match self {
            Stage::Pretrain => 0.3,
            Stage::Finetune => 0.0,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub ema_decay: f64,
    pub seed: u64,
    pub stage: Stage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 1e-3,
            warmup: 100,
            ema_decay: 0.999,
            seed: 0,
            stage: Stage::Pretrain,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0, 1)", self.ema_decay)));
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then constant.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }
}

/// One training clip in latent form.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Mixture latent, `T × C`.
    pub mix: Tensor<f32>,
    /// Clean joint latent `[target | residual]`, `T × 2C`.
    pub joint: Tensor<f32>,
    /// Per-frame embedding of the clean target, `T × C`.
    pub a_tgt: Tensor<f32>,
    pub bundle: PromptBundle,
}

impl Example {
    pub fn from_triplet(t: &MixTriplet) -> Result<Self> {
        let mix = codec::encode(&t.mix)?;
        let tgt = codec::encode(&t.tgt)?;
        let res = codec::encode(&t.res)?;
        t.bundle.validate(mix.len())?;
        Ok(Self {
            a_tgt: target_embedding(&tgt),
            joint: Tensor::concat_cols(&[&tgt.frames, &res.frames])?,
            mix: mix.frames,
            bundle: t.bundle.clone(),
        })
    }

    pub fn frames(&self) -> usize {
        self.mix.rows()
    }
}

/// Toy event-detector embedding of a clean target: per-frame channel magnitudes.
pub fn target_embedding(z: &LatentSeq) -> Tensor<f32> {
    codec::frame_features(z)
}

/// Loss values and parameter gradients (store order) for one example.
pub struct ExampleLoss {
    pub fm: f64,
    pub aux: f64,
    pub grads: Vec<Tensor<f32>>,
}

/// Forward and backward for one example at flow time `t` with noise `x0`.
pub fn example_loss(
    model: &Separator<f32>,
    ex: &Example,
    bundle: &PromptBundle,
    t: f64,
    x0: &Tensor<f32>,
    flow_cfg: &FlowConfig,
) -> Result<ExampleLoss> {
    let x1 = model.config.to_model_space(&ex.joint);
    let mix = model.config.to_model_space(&ex.mix);
    let (x_t, u) = flow::sample_path(x0, &x1, t, flow_cfg.sigma_min)?;
    let mut g = Graph::new();
    let mut binder = Binder::new(&model.params, true);
    let cond = Conditioning { mix: &mix, bundle };
    let out = dit::forward(&mut g, &mut binder, &model.config, &x_t, t, &cond)?;
    let fm = flow::fm_loss(&mut g, out.velocity, &u)?;
    let (total, aux) = if flow_cfg.lambda_aux > 0.0 {
        let proj = dit::aux_project(&mut g, &mut binder, out.aux_hidden)?;
        let aux = flow::aux_loss(&mut g, proj, &ex.a_tgt)?;
        (flow::total_loss(&mut g, fm, aux, flow_cfg.lambda_aux)?, Some(aux))
    } else {
        (fm, None)
    };
    let grads = g.backward(total)?;
    Ok(ExampleLoss {
        fm: g.value(fm).item() as f64,
        aux: aux.map_or(0.0, |a| g.value(a).item() as f64),
        grads: binder.collect_grads(&grads),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub fm_loss: f64,
    pub aux_loss: f64,
    pub lr: f64,
}

/// Model, optimizer and EMA state of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Separator<f32>,
    pub ema: ParamStore<f32>,
    pub opt: AdamW<f32>,
    pub config: TrainConfig,
    pub flow: FlowConfig,
}

impl Trainer {
    /// `flow.lambda_aux` is taken from the stage.
    pub fn new(model: Separator<f32>, config: TrainConfig, flow: FlowConfig) -> Result<Self> {
        config.validate()?;
        let flow = FlowConfig {
            lambda_aux: config.stage.lambda_aux(),
            ..flow
        };
        flow.validate()?;
        let opt = AdamW::new(AdamWConfig { lr: config.lr, ..AdamWConfig::default() }, model.params.tensors());
        Ok(Self {
            ema: model.params.clone(),
            model,
            opt,
            config,
            flow,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        rng
    }

    /// One optimizer step on a batch drawn from `data`.
    pub fn step(&mut self, data: &[Example]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        let step = self.opt.step;
        let mut rng = self.step_rng(step);
        let p = self.config.stage.dropout();
        let plan: Vec<(usize, f64, u64, PromptBundle)> = (0..self.config.batch_size)
            .map(|_| {
                let idx = rng.random_range(0..data.len());
                let t: f64 = rng.random();
                let noise_seed: u64 = rng.random();
                let bundle = prompt::apply_condition_dropout(&data[idx].bundle, p, p, p, &mut rng);
                (idx, t, noise_seed, bundle)
            })
            .collect();
        let model = &self.model;
        let flow_cfg = &self.flow;
        let losses = plan
            .par_iter()
            .map(|(idx, t, noise_seed, bundle)| {
                let ex = &data[*idx];
                let x0 = flow::initial_noise(ex.frames(), model.config.joint_channels(), *noise_seed);
                example_loss(model, ex, bundle, *t, &x0, flow_cfg)
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = 1.0 / losses.len() as f32;
        let mut grads: Vec<Tensor<f32>> = self
            .model
            .params
            .tensors()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let (mut fm, mut aux) = (0.0, 0.0);
        for l in &losses {
            fm += l.fm;
            aux += l.aux;
            for (acc, g) in grads.iter_mut().zip(&l.grads) {
                *acc = acc.axpy(scale, g)?;
            }
        }
        fm /= losses.len() as f64;
        aux /= losses.len() as f64;
        let finite = fm.is_finite() && aux.is_finite() && grads.iter().all(|g| g.all_finite());
        if !finite {
            let idx: Vec<usize> = plan.iter().map(|p| p.0).collect();
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step} (fm {fm}, aux {aux}); batch seed {}:{step}, examples {idx:?}",
                self.config.seed
            )));
        }
        let lr = self.config.lr_at(step);
        self.opt.update(&mut self.model.params.tensors_mut(), &grads, lr)?;
        let s = self.opt.step as f64;
        let decay = self.config.ema_decay.min((1.0 + s) / (10.0 + s)) as f32;
        for (e, w) in self.ema.tensors_mut().into_iter().zip(self.model.params.tensors()) {
            for (a, &b) in e.data_mut().iter_mut().zip(w.data()) {
                *a = decay * *a + (1.0 - decay) * b;
            }
        }
        Ok(StepLog {
            step,
            fm_loss: fm,
            aux_loss: aux,
            lr,
        })
    }

    /// Steps until `config.steps`, calling `on_step` after each one.
    pub fn run(
        &mut self,
        data: &[Example],
        mut on_step: impl FnMut(&StepLog, &Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.opt.step < self.config.steps {
            let log = self.step(data)?;
            on_step(&log, self)?;
        }
        Ok(())
    }

    pub fn ema_model(&self) -> Separator<f32> {
        Separator {
            config: self.model.config.clone(),
            params: self.ema.clone(),
        }
    }

    /// Full resumable state: parameters, Adam moments, EMA and step.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut store = self.model.params.clone();
        for (prefix, tensors) in [("adam.m.", &self.opt.m), ("adam.v.", &self.opt.v)] {
            for (name, t) in self.model.params.names().zip(tensors.iter()) {
                store.insert(format!("{prefix}{name}"), t.clone())?;
            }
        }
        for (name, t) in self.ema.iter() {
            store.insert(format!("ema.{name}"), t.clone())?;
        }
        let meta = serde_json::json!({
            "kind": "train_state",
            "config": self.model.config,
            "step": self.opt.step,
            "train": self.config,
            "flow": self.flow,
        });
        Ok(Checkpoint::new(meta, store))
    }

    /// Restores a run; `config` may extend `steps` but must otherwise match.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let saved: TrainConfig = serde_json::from_value(
            ckpt.meta
                .get("train")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint holds no training state".into()))?,
        )?;
        if (TrainConfig { steps: config.steps, ..saved.clone() }) != config {
            return Err(Error::Config(
                "resume config differs from the checkpointed run in more than `steps`".into(),
            ));
        }
        let flow: FlowConfig = serde_json::from_value(
            ckpt.meta.get("flow").cloned().ok_or_else(|| Error::Format("missing flow config".into()))?,
        )?;
        let step = ckpt
            .meta
            .get("step")
            .and_then(|s| s.as_u64())
            .ok_or_else(|| Error::Format("missing step".into()))?;
        let model = Separator::from_checkpoint(ckpt)?;
        let mut t = Trainer::new(model, config, flow)?;
        let names: Vec<String> = t.model.params.names().map(str::to_string).collect();
        let fetch = |n: String| {
            ckpt.tensors
                .get(&n)
                .cloned()
                .map_err(|_| Error::Format(format!("checkpoint is missing {n}")))
        };
        for (i, name) in names.iter().enumerate() {
            t.opt.m[i] = fetch(format!("adam.m.{name}"))?;
            t.opt.v[i] = fetch(format!("adam.v.{name}"))?;
            *t.ema.get_mut(name)? = fetch(format!("ema.{name}"))?;
        }
        t.opt.step = step;
        Ok(t)
    }
}

/// Fresh model plus trainer.
pub fn init_trainer(dit: DitConfig, model_seed: u64, config: TrainConfig, flow: FlowConfig) -> Result<Trainer> {
    Trainer::new(Separator::init(dit, model_seed)?, config, flow)
}
