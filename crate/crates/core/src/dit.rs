//! The velocity network: a flow-time-modulated transformer over joint
//! target/residual latents.
//!
//! Block layout, per layer:
//!
//! ```text
//! h += g_attn ⊙ SelfAttn(LN(h) ⊙ (1 + s_attn) + b_attn)
//! h += CrossAttn(LN_affine(h), text)
//! h += g_ffn  ⊙ FFN(LN(h) ⊙ (1 + s_ffn) + b_ffn)
//! ```
//!
//! The six modulation channels are `[s_attn, b_attn, s_ffn, b_ffn, g_attn, g_ffn]`:
//! four multiplicative (two LN scales, two residual gates) and two additive.
//! Each is a scalar from the shared time MLP plus a per-layer bias vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sepflow_tensor::{Graph, Real, Tensor, Var};

use crate::codec::CHANNELS;
use crate::params::{Binder, ParamStore};
use crate::prompt::{self, PromptBundle, SPAN_DIM, TEXT_DIM, VISUAL_DIM, VOCAB_SIZE};
use crate::{Error, Result};

pub const MODULATIONS: usize = 6;
const SCALE_ATTN: usize = 0;
const SHIFT_ATTN: usize = 1;
const SCALE_FFN: usize = 2;
const SHIFT_FFN: usize = 3;
const GATE_ATTN: usize = 4;
const GATE_FFN: usize = 5;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DitConfig {
    pub layers: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub channels: usize,
    pub span_dim: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
    pub aux_layer: usize,
    pub aux_dim: usize,
    pub aux_hidden: usize,
    pub time_freqs: usize,
    pub time_hidden: usize,
    pub max_frames: usize,
    /// Codec latents are divided by this before entering the network, so
    /// the data and the unit-variance noise live on comparable scales.
    #[serde(default = "default_latent_scale")]
    pub latent_scale: f64,
}

fn default_latent_scale() -> f64 {
    0.1
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 64,
            ffn_dim: 256,
            heads: 4,
            channels: CHANNELS,
            span_dim: SPAN_DIM,
            visual_dim: VISUAL_DIM,
            text_dim: TEXT_DIM,
            aux_layer: 2,
            aux_dim: 16,
            aux_hidden: 64,
            time_freqs: 16,
            time_hidden: 64,
            max_frames: 750,
            latent_scale: default_latent_scale(),
        }
    }
}

impl DitConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return err("at least one layer is required".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return err(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if !(1..=self.layers).contains(&self.aux_layer) {
            return err(format!("aux_layer {} outside 1..={}", self.aux_layer, self.layers));
        }
        if self.span_dim != SPAN_DIM || self.visual_dim != VISUAL_DIM || self.text_dim != TEXT_DIM {
            return err("conditioning widths are fixed by the prompt encoders".into());
        }
        if !(self.latent_scale > 0.0 && self.latent_scale.is_finite()) {
            return err(format!("latent_scale {} must be positive", self.latent_scale));
        }
        if self.channels == 0 || self.max_frames == 0 || self.time_freqs == 0 {
            return err("channels, max_frames and time_freqs must be positive".into());
        }
        Ok(())
    }

    /// Codec latent to network space.
    pub fn to_model_space(&self, z: &Tensor<f32>) -> Tensor<f32> {
        z.scale((1.0 / self.latent_scale) as f32)
    }

    /// Network space back to codec latent.
    pub fn to_latent_space(&self, x: &Tensor<f32>) -> Tensor<f32> {
        x.scale(self.latent_scale as f32)
    }

    pub fn joint_channels(&self) -> usize {
        2 * self.channels
    }

    fn input_width(&self) -> usize {
        2 * self.channels + self.channels + self.span_dim + self.visual_dim
    }
}

/// Separator parameters with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Separator<F> {
    pub config: DitConfig,
    pub params: ParamStore<F>,
}

fn normal<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor<F> {
    let n = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(rows, cols, |_, _| F::of(n.sample(rng)))
}

fn fan_in<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    normal(rng, rows, cols, 1.0 / (rows as f64).sqrt())
}

impl<F: Real> Separator<F> {
    pub fn init(config: DitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = c.dim;
        p.insert("prompt.text_embedding", normal(&mut rng, VOCAB_SIZE, c.text_dim, 0.5))?;
        p.insert("prompt.span_embedding", normal(&mut rng, 3, c.span_dim, 0.5))?;
        p.insert("visual.w", fan_in(&mut rng, c.visual_dim, c.visual_dim))?;
        p.insert("visual.b", Tensor::zeros(1, c.visual_dim))?;
        p.insert("visual.gate", Tensor::zeros(1, 1))?;
        p.insert("input.w", fan_in(&mut rng, c.input_width(), d))?;
        p.insert("input.b", Tensor::zeros(1, d))?;
        p.insert("input.pos", normal(&mut rng, c.max_frames, d, 0.02))?;
        p.insert("time.w1", fan_in(&mut rng, 2 * c.time_freqs, c.time_hidden))?;
        p.insert("time.b1", Tensor::zeros(1, c.time_hidden))?;
        p.insert("time.w2", normal(&mut rng, c.time_hidden, MODULATIONS, 0.02))?;
        p.insert("time.b2", Tensor::zeros(1, MODULATIONS))?;
        for l in 0..c.layers {
            let k = |s: &str| format!("block{l}.{s}");
            let bias = Tensor::from_fn(MODULATIONS, d, |r, _| {
                if r == GATE_ATTN || r == GATE_FFN {
                    F::one()
                } else {
                    F::zero()
                }
            });
            p.insert(k("mod_bias"), bias)?;
            for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo", "cross.wq", "cross.wo"] {
                p.insert(k(name), fan_in(&mut rng, d, d))?;
            }
            p.insert(k("attn.bo"), Tensor::zeros(1, d))?;
            p.insert(k("cross.wk"), fan_in(&mut rng, c.text_dim, d))?;
            p.insert(k("cross.wv"), fan_in(&mut rng, c.text_dim, d))?;
            p.insert(k("cross.bo"), Tensor::zeros(1, d))?;
            p.insert(k("cross.ln.g"), Tensor::full(1, d, F::one()))?;
            p.insert(k("cross.ln.b"), Tensor::zeros(1, d))?;
            p.insert(k("ffn.w1"), fan_in(&mut rng, d, c.ffn_dim))?;
            p.insert(k("ffn.b1"), Tensor::zeros(1, c.ffn_dim))?;
            p.insert(k("ffn.w2"), fan_in(&mut rng, c.ffn_dim, d))?;
            p.insert(k("ffn.b2"), Tensor::zeros(1, d))?;
        }
        let h = c.aux_hidden;
        p.insert("aux.w1", fan_in(&mut rng, d, h))?;
        p.insert("aux.b1", Tensor::zeros(1, h))?;
        p.insert("aux.ln1.g", Tensor::full(1, h, F::one()))?;
        p.insert("aux.ln1.b", Tensor::zeros(1, h))?;
        p.insert("aux.w2", fan_in(&mut rng, h, h))?;
        p.insert("aux.b2", Tensor::zeros(1, h))?;
        p.insert("aux.ln2.g", Tensor::full(1, h, F::one()))?;
        p.insert("aux.ln2.b", Tensor::zeros(1, h))?;
        p.insert("aux.w3", fan_in(&mut rng, h, c.aux_dim))?;
        p.insert("aux.b3", Tensor::zeros(1, c.aux_dim))?;
        p.insert("out.ln.g", Tensor::full(1, d, F::one()))?;
        p.insert("out.ln.b", Tensor::zeros(1, d))?;
        p.insert("out.w", Tensor::zeros(d, c.joint_channels()))?;
        p.insert("out.b", Tensor::zeros(1, c.joint_channels()))?;
        Ok(Self { config, params: p })
    }

    pub fn cast<G: Real>(&self) -> Separator<G> {
        Separator {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

/// Conditioning shared by every flow step of one clip.
#[derive(Clone, Debug)]
pub struct Conditioning<'a> {
    /// Mixture latent, `T × C`.
    pub mix: &'a Tensor<f32>,
    pub bundle: &'a PromptBundle,
}

/// Per-layer modulation rows, each `1 × D`.
pub struct Modulation {
    pub layers: Vec<[Var; MODULATIONS]>,
    /// Shared MLP output, `1 × 6`.
    pub shared: Var,
}

/// Sinusoidal features of `t` at geometrically spaced angular frequencies 1..1000.
pub fn time_features(t: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for i in 0..freqs {
        let w = if freqs == 1 {
            1.0
        } else {
            1000f64.powf(i as f64 / (freqs - 1) as f64)
        };
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    out
}

pub fn time_embed<F: Real>(
    g: &mut Graph<F>,
    params: &mut Binder<'_, F>,
    config: &DitConfig,
    t: f64,
) -> Result<Modulation> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("flow time {t} outside [0, 1]")));
    }
    let feats = Tensor::row(time_features(t, config.time_freqs).into_iter().map(F::of).collect());
    let x = g.constant(feats);
    let (w1, b1) = (params.var(g, "time.w1")?, params.var(g, "time.b1")?);
    let (w2, b2) = (params.var(g, "time.w2")?, params.var(g, "time.b2")?);
    let h = g.linear(x, w1, Some(b1))?;
    let h = g.gelu(h);
    let shared = g.linear(h, w2, Some(b2))?;
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let bias = params.var(g, &format!("block{l}.mod_bias"))?;
        let mut mods = [shared; MODULATIONS];
        for (k, m) in mods.iter_mut().enumerate() {
            let row = g.gather(bias, &[k])?;
            let s = g.slice_cols(shared, k, k + 1)?;
            *m = g.add(row, s)?;
        }
        layers.push(mods);
    }
    Ok(Modulation { layers, shared })
}

/// Outputs of one forward pass.
pub struct ForwardOut {
    /// Predicted velocity, `T × 2C`.
    pub velocity: Var,
    /// Hidden state after block `aux_layer`, `T × D`.
    pub aux_hidden: Var,
}

fn modulated_norm<F: Real>(g: &mut Graph<F>, h: Var, scale: Var, shift: Var) -> Result<Var> {
    let n = g.layer_norm(h, None, None, F::of(LN_EPS))?;
    let s = g.add_const(scale, F::one());
    let n = g.mul(n, s)?;
    Ok(g.add(n, shift)?)
}

pub fn forward<F: Real>(
    g: &mut Graph<F>,
    params: &mut Binder<'_, F>,
    config: &DitConfig,
    x_t: &Tensor<F>,
    t: f64,
    cond: &Conditioning<'_>,
) -> Result<ForwardOut> {
    let frames = x_t.rows();
    if frames == 0 || frames > config.max_frames {
        return Err(Error::Contract(format!(
            "sequence of {frames} frames outside 1..={}",
            config.max_frames
        )));
    }
    if x_t.cols() != config.joint_channels() || cond.mix.cols() != config.channels {
        return Err(Error::Contract(format!(
            "expected {} joint and {} mixture channels, got {} and {}",
            config.joint_channels(),
            config.channels,
            x_t.cols(),
            cond.mix.cols()
        )));
    }
    if cond.mix.rows() != frames {
        return Err(Error::Contract(format!(
            "mixture has {} frames, noisy latent has {frames}",
            cond.mix.rows()
        )));
    }
    cond.bundle.validate(frames)?;

    let x = g.constant(x_t.clone());
    let mix = g.constant(cond.mix.cast());
    let span = prompt::embed_span(g, params, &cond.bundle.span)?;
    let vis = g.constant(cond.bundle.visual.feats.cast());
    let (vw, vb, vgate) = (
        params.var(g, "visual.w")?,
        params.var(g, "visual.b")?,
        params.var(g, "visual.gate")?,
    );
    let vis = g.linear(vis, vw, Some(vb))?;
    let vis = g.mul(vis, vgate)?;
    let inp = g.concat_cols(&[x, mix, span, vis])?;
    let (win, bin, pos) = (
        params.var(g, "input.w")?,
        params.var(g, "input.b")?,
        params.var(g, "input.pos")?,
    );
    let h = g.linear(inp, win, Some(bin))?;
    let rows: Vec<usize> = (0..frames).collect();
    let pos = g.gather(pos, &rows)?;
    let mut h = g.add(h, pos)?;

    let text = prompt::embed_text(g, params, &cond.bundle.text)?;
    let modulation = time_embed(g, params, config, t)?;
    let mut aux_hidden = None;
    for (l, mods) in modulation.layers.iter().enumerate() {
        let mut p = |s: &str| params.var(g, &format!("block{l}.{s}"));
        let (wq, wk, wv, wo, bo) = (p("attn.wq")?, p("attn.wk")?, p("attn.wv")?, p("attn.wo")?, p("attn.bo")?);
        let (cq, ck, cv, co, cbo) = (p("cross.wq")?, p("cross.wk")?, p("cross.wv")?, p("cross.wo")?, p("cross.bo")?);
        let (lng, lnb) = (p("cross.ln.g")?, p("cross.ln.b")?);
        let (w1, b1, w2, b2) = (p("ffn.w1")?, p("ffn.b1")?, p("ffn.w2")?, p("ffn.b2")?);

        let a = modulated_norm(g, h, mods[SCALE_ATTN], mods[SHIFT_ATTN])?;
        let (q, k, v) = (g.matmul(a, wq)?, g.matmul(a, wk)?, g.matmul(a, wv)?);
        let att = g.attention(q, k, v, config.heads)?;
        let att = g.linear(att, wo, Some(bo))?;
        let att = g.mul(att, mods[GATE_ATTN])?;
        h = g.add(h, att)?;

        let c = g.layer_norm(h, Some(lng), Some(lnb), F::of(LN_EPS))?;
        let q = g.matmul(c, cq)?;
        let (k, v) = (g.matmul(text, ck)?, g.matmul(text, cv)?);
        let cross = g.attention(q, k, v, config.heads)?;
        let cross = g.linear(cross, co, Some(cbo))?;
        h = g.add(h, cross)?;

        let f = modulated_norm(g, h, mods[SCALE_FFN], mods[SHIFT_FFN])?;
        let f = g.linear(f, w1, Some(b1))?;
        let f = g.gelu(f);
        let f = g.linear(f, w2, Some(b2))?;
        let f = g.mul(f, mods[GATE_FFN])?;
        h = g.add(h, f)?;

        if l + 1 == config.aux_layer {
            aux_hidden = Some(h);
        }
    }
    let (og, ob, ow, obias) = (
        params.var(g, "out.ln.g")?,
        params.var(g, "out.ln.b")?,
        params.var(g, "out.w")?,
        params.var(g, "out.b")?,
    );
    let o = g.layer_norm(h, Some(og), Some(ob), F::of(LN_EPS))?;
    let velocity = g.linear(o, ow, Some(obias))?;
    Ok(ForwardOut {
        velocity,
        aux_hidden: aux_hidden.expect("aux_layer validated against layer count"),
    })
}

/// Three-layer MLP from hidden states into the event-embedding space, `T × F`.
pub fn aux_project<F: Real>(g: &mut Graph<F>, params: &mut Binder<'_, F>, hidden: Var) -> Result<Var> {
    let mut p = |s: &str| params.var(g, s);
    let (w1, b1, g1, n1) = (p("aux.w1")?, p("aux.b1")?, p("aux.ln1.g")?, p("aux.ln1.b")?);
    let (w2, b2, g2, n2) = (p("aux.w2")?, p("aux.b2")?, p("aux.ln2.g")?, p("aux.ln2.b")?);
    let (w3, b3) = (p("aux.w3")?, p("aux.b3")?);
    let x = g.linear(hidden, w1, Some(b1))?;
    let x = g.layer_norm(x, Some(g1), Some(n1), F::of(LN_EPS))?;
    let x = g.gelu(x);
    let x = g.linear(x, w2, Some(b2))?;
    let x = g.layer_norm(x, Some(g2), Some(n2), F::of(LN_EPS))?;
    let x = g.gelu(x);
    Ok(g.linear(x, w3, Some(b3))?)
}

/// Untracked velocity evaluation.
pub fn velocity<F: Real>(
    model: &Separator<F>,
    x_t: &Tensor<F>,
    t: f64,
    cond: &Conditioning<'_>,
) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let mut binder = Binder::new(&model.params, false);
    let out = forward(&mut g, &mut binder, &model.config, x_t, t, cond)?;
    let mut v = g.value(out.velocity).clone();
    v.requires_grad = false;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = DitConfig::default();
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        let c = DitConfig {
            aux_layer: 5,
            ..DitConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn time_outside_unit_interval() {
        let model = Separator::<f64>::init(DitConfig::default(), 0).unwrap();
        let mut g = Graph::new();
        let mut b = Binder::new(&model.params, false);
        assert!(time_embed(&mut g, &mut b, &model.config, 1.5).is_err());
    }

    #[test]
    fn stream_length_mismatch() {
        let model = Separator::<f32>::init(DitConfig::default(), 0).unwrap();
        let mix = Tensor::zeros(5, CHANNELS);
        let bundle = PromptBundle::dummy(5);
        let x = Tensor::zeros(6, 2 * CHANNELS);
        let cond = Conditioning { mix: &mix, bundle: &bundle };
        assert!(velocity(&model, &x, 0.5, &cond).is_err());
    }
}
