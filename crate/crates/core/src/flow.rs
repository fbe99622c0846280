//! Conditional flow matching: the probability path, losses, ODE sampling,
//! and one-shot / multi-diffusion separation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sepflow_tensor::{Graph, Real, Tensor, Var};

use crate::codec::{self, LatentSeq, Waveform, FRAME_RATE};
use crate::dit::{self, Conditioning, Separator};
use crate::prompt::PromptBundle;
use crate::{Error, Result};

/// Longest clip (in frames) accepted by one-shot separation: 30 s.
pub const MAX_ONE_SHOT_FRAMES: usize = 750;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Midpoint,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "midpoint" => Ok(Solver::Midpoint),
            _ => Err(Error::Config(format!("unknown solver {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub sigma_min: f64,
    pub lambda_aux: f64,
    pub ode_steps: usize,
    pub solver: Solver,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            lambda_aux: 1.0,
            ode_steps: 16,
            solver: Solver::Midpoint,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(Error::Config(format!("sigma_min {} outside [0, 1)", self.sigma_min)));
        }
        if self.ode_steps < 1 {
            return Err(Error::Config("ode_steps must be at least 1".into()));
        }
        if !self.lambda_aux.is_finite() || self.lambda_aux < 0.0 {
            return Err(Error::Config(format!("lambda_aux {} is invalid", self.lambda_aux)));
        }
        Ok(())
    }
}

/// Point on the conditional OT path and its regression target:
/// `x_t = (1 - (1 - σ)t)·x0 + t·x1`, `u = x1 - (1 - σ)·x0`.
pub fn sample_path<F: Real>(
    x0: &Tensor<F>,
    x1: &Tensor<F>,
    t: f64,
    sigma_min: f64,
) -> Result<(Tensor<F>, Tensor<F>)> {
    if x0.shape() != x1.shape() {
        return Err(Error::Contract(format!(
            "noise {:?} and data {:?} shapes differ",
            x0.shape(),
            x1.shape()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("flow time {t} outside [0, 1]")));
    }
    let keep = F::of(1.0 - (1.0 - sigma_min) * t);
    let tf = F::of(t);
    let shrink = F::of(1.0 - sigma_min);
    let x_t = Tensor::new(
        x0.rows(),
        x0.cols(),
        x0.data().iter().zip(x1.data()).map(|(&a, &b)| keep * a + tf * b).collect(),
    )?;
    let u = Tensor::new(
        x0.rows(),
        x0.cols(),
        x0.data().iter().zip(x1.data()).map(|(&a, &b)| b - shrink * a).collect(),
    )?;
    Ok((x_t, u))
}

/// Mean squared error over every entry.
pub fn fm_loss<F: Real>(g: &mut Graph<F>, pred: Var, target: &Tensor<F>) -> Result<Var> {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `mean_t (1 - cos(proj_t, target_t))`; zero-norm rows count as similarity 0.
pub fn aux_loss<F: Real>(g: &mut Graph<F>, proj: Var, a_tgt: &Tensor<F>) -> Result<Var> {
    let t = g.constant(a_tgt.clone());
    let cos = g.cosine_rows(proj, t)?;
    let m = g.mean(cos);
    let neg = g.scale(m, -F::one());
    Ok(g.add_const(neg, F::one()))
}

/// `fm + λ·aux`; with λ = 0 the FM node itself is returned.
pub fn total_loss<F: Real>(g: &mut Graph<F>, fm: Var, aux: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(fm);
    }
    let weighted = g.scale(aux, F::of(lambda));
    Ok(g.add(fm, weighted)?)
}

/// One solver step from `t` to `t + dt`.
pub fn ode_step<F, V>(x: &Tensor<F>, t: f64, dt: f64, solver: Solver, field: &mut V) -> Result<Tensor<F>>
where
    F: Real,
    V: FnMut(&Tensor<F>, f64) -> Result<Tensor<F>>,
{
    let k1 = field(x, t)?;
    match solver {
        Solver::Euler => Ok(x.axpy(F::of(dt), &k1)?),
        Solver::Midpoint => {
            let mid = x.axpy(F::of(0.5 * dt), &k1)?;
            let k2 = field(&mid, t + 0.5 * dt)?;
            Ok(x.axpy(F::of(dt), &k2)?)
        }
    }
}

/// Integrates `dx/dt = field(x, t)` from 0 to 1 on the grid `t_i = i / steps`.
pub fn ode_solve<F, V>(x0: &Tensor<F>, steps: usize, solver: Solver, mut field: V) -> Result<Tensor<F>>
where
    F: Real,
    V: FnMut(&Tensor<F>, f64) -> Result<Tensor<F>>,
{
    if steps < 1 {
        return Err(Error::Config("ODE needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0.clone();
    for i in 0..steps {
        x = ode_step(&x, i as f64 * dt, dt, solver, &mut field)?;
    }
    Ok(x)
}

/// Standard normal `frames × channels` noise from `seed`.
pub fn initial_noise(frames: usize, channels: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(frames, channels, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    })
}

/// Separated stems plus the final joint latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub target: Waveform,
    pub residual: Waveform,
    pub latent: Tensor<f32>,
}

fn split_and_decode(x1: Tensor<f32>, channels: usize, len: usize) -> Result<Separation> {
    let tgt = LatentSeq::new(x1.slice_cols(0, channels));
    let res = LatentSeq::new(x1.slice_cols(channels, 2 * channels));
    Ok(Separation {
        target: codec::decode_len(&tgt, len)?,
        residual: codec::decode_len(&res, len)?,
        latent: x1,
    })
}

/// Encodes the mixture and integrates the learned flow from seeded noise.
pub fn separate(
    mix: &Waveform,
    bundle: &PromptBundle,
    config: &FlowConfig,
    model: &Separator<f32>,
    seed: u64,
) -> Result<Separation> {
    config.validate()?;
    let z = codec::encode(mix)?;
    if z.len() > MAX_ONE_SHOT_FRAMES {
        return Err(Error::Usage(format!(
            "clip of {:.2} s exceeds the 30 s one-shot limit; use long-form (multi-diffusion) separation",
            mix.duration()
        )));
    }
    bundle.validate(z.len())?;
    let c = model.config.channels;
    let x0 = initial_noise(z.len(), 2 * c, seed);
    let mix_model = model.config.to_model_space(&z.frames);
    let cond = Conditioning {
        mix: &mix_model,
        bundle,
    };
    let x1 = ode_solve(&x0, config.ode_steps, config.solver, |x, t| {
        dit::velocity(model, x, t, &cond)
    })?;
    split_and_decode(model.config.to_latent_space(&x1), c, mix.len())
}

/// Overlapping windows over `total` frames with triangular, renormalized masks.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPlan {
    pub window_len: usize,
    pub overlap: usize,
    pub total: usize,
    pub windows: Vec<(usize, usize)>,
    pub masks: Vec<Vec<f64>>,
}

impl WindowPlan {
    /// Defaults: 500-frame (20 s) windows with 125 frames (5 s) of overlap.
    pub fn default_for(total: usize) -> Result<Self> {
        Self::new(total, 500, 125)
    }

    pub fn single(total: usize) -> Result<Self> {
        Self::new(total, total.max(1), 0)
    }

    pub fn new(total: usize, window_len: usize, overlap: usize) -> Result<Self> {
        if total == 0 || window_len == 0 {
            return Err(Error::Config("window plan needs positive length and window".into()));
        }
        if overlap >= window_len {
            return Err(Error::Config(format!(
                "overlap {overlap} must be smaller than window {window_len}"
            )));
        }
        let stride = window_len - overlap;
        let mut windows = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + window_len).min(total);
            windows.push((start, end));
            if end == total {
                break;
            }
            start += stride;
        }
        let mut masks: Vec<Vec<f64>> = windows
            .iter()
            .enumerate()
            .map(|(j, &(s, e))| {
                let len = e - s;
                let pre = if j > 0 { windows[j - 1].1.saturating_sub(s) } else { 0 };
                let post = windows.get(j + 1).map_or(0, |&(ns, _)| e.saturating_sub(ns));
                (0..len)
                    .map(|i| {
                        let up = if i < pre { (i + 1) as f64 / (pre + 1) as f64 } else { 1.0 };
                        let from_end = len - 1 - i;
                        let down = if from_end < post {
                            (from_end + 1) as f64 / (post + 1) as f64
                        } else {
                            1.0
                        };
                        up.min(down)
                    })
                    .collect()
            })
            .collect();
        let mut sums = vec![0.0; total];
        for (&(s, _), m) in windows.iter().zip(&masks) {
            for (i, &w) in m.iter().enumerate() {
                sums[s + i] += w;
            }
        }
        for (&(s, _), m) in windows.iter().zip(masks.iter_mut()) {
            for (i, w) in m.iter_mut().enumerate() {
                *w /= sums[s + i];
            }
        }
        Ok(Self {
            window_len,
            overlap,
            total,
            windows,
            masks,
        })
    }

    /// `Σ_j pad(m_j)` at every global frame.
    pub fn partition_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.total];
        for (&(s, _), m) in self.windows.iter().zip(&self.masks) {
            for (i, &w) in m.iter().enumerate() {
                sums[s + i] += w;
            }
        }
        sums
    }

    /// Merges per-window states into one global state.
    pub fn merge<F: Real>(&self, parts: &[Tensor<F>]) -> Result<Tensor<F>> {
        if parts.len() != self.windows.len() {
            return Err(Error::Contract(format!(
                "{} window states for {} windows",
                parts.len(),
                self.windows.len()
            )));
        }
        let cols = parts[0].cols();
        let mut out = Tensor::<F>::zeros(self.total, cols);
        let mut touched = vec![false; self.total];
        for ((&(s, e), m), part) in self.windows.iter().zip(&self.masks).zip(parts) {
            if part.rows() != e - s || part.cols() != cols {
                return Err(Error::Contract("window state shape mismatch".into()));
            }
            for r in 0..e - s {
                let w = F::of(m[r]);
                let dst = &mut out.data_mut()[(s + r) * cols..(s + r + 1) * cols];
                let src = part.row_slice(r);
                if touched[s + r] {
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d = *d + w * x;
                    }
                } else {
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d = w * x;
                    }
                    touched[s + r] = true;
                }
            }
        }
        Ok(out)
    }
}

/// Long-form separation: at every shared flow step each window advances its
/// own slice of the global latent, then the windows are merged with the
/// plan's masks. Text is shared; mixture, span and visual streams are sliced.
pub fn multi_diffusion(
    mix: &Waveform,
    bundle: &PromptBundle,
    plan: &WindowPlan,
    config: &FlowConfig,
    model: &Separator<f32>,
    seed: u64,
) -> Result<Separation> {
    config.validate()?;
    let z = codec::encode(mix)?;
    if plan.total != z.len() {
        return Err(Error::Contract(format!(
            "plan covers {} frames, mixture has {}",
            plan.total,
            z.len()
        )));
    }
    if plan.windows.iter().any(|&(s, e)| e - s > model.config.max_frames) {
        return Err(Error::Config("window longer than the model's positional table".into()));
    }
    bundle.validate(z.len())?;
    let c = model.config.channels;
    let mix_model = model.config.to_model_space(&z.frames);
    let window_cond: Vec<(Tensor<f32>, PromptBundle)> = plan
        .windows
        .iter()
        .map(|&(s, e)| (mix_model.slice_rows(s, e), bundle.window(s, e)))
        .collect();
    let mut x = initial_noise(z.len(), 2 * c, seed);
    let dt = 1.0 / config.ode_steps as f64;
    for i in 0..config.ode_steps {
        let t = i as f64 * dt;
        let parts = plan
            .windows
            .par_iter()
            .zip(window_cond.par_iter())
            .map(|(&(s, e), (m, b))| {
                let cond = Conditioning { mix: m, bundle: b };
                let mut field = |x: &Tensor<f32>, t: f64| dit::velocity(model, x, t, &cond);
                ode_step(&x.slice_rows(s, e), t, dt, config.solver, &mut field)
            })
            .collect::<Result<Vec<_>>>()?;
        x = plan.merge(&parts)?;
    }
    split_and_decode(model.config.to_latent_space(&x), c, mix.len())
}

/// Long-form entry point with the default 20 s / 5 s plan.
pub fn separate_long(
    mix: &Waveform,
    bundle: &PromptBundle,
    config: &FlowConfig,
    model: &Separator<f32>,
    seed: u64,
) -> Result<Separation> {
    let frames = codec::frames_for(mix.len());
    let plan = WindowPlan::default_for(frames)?;
    multi_diffusion(mix, bundle, &plan, config, model, seed)
}

/// Seconds per latent frame.
pub fn frame_seconds() -> f64 {
    1.0 / FRAME_RATE as f64
}
