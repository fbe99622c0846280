#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sepflow::dit::{DitConfig, Separator};
use sepflow_tensor::{Real, Tensor};

pub fn small_config() -> DitConfig {
    DitConfig {
        layers: 2,
        dim: 16,
        ffn_dim: 32,
        heads: 2,
        aux_layer: 1,
        aux_hidden: 16,
        time_hidden: 16,
        time_freqs: 4,
        max_frames: 750,
        ..DitConfig::default()
    }
}

/// Freshly initialized model with every parameter nudged by N(0, std²), so
/// that zero-initialized paths (output projection, visual gate) are live.
pub fn perturbed<F: Real>(config: DitConfig, seed: u64, std: f64) -> Separator<F> {
    let mut m = Separator::<F>::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = Normal::new(0.0, std).unwrap();
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v = *v + F::of(n.sample(&mut rng));
        }
    }
    m
}

pub fn random_tensor<F: Real>(rows: usize, cols: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    Tensor::from_fn(rows, cols, |_, _| F::of(n.sample(&mut rng)))
}

pub fn bits(t: &[f32]) -> Vec<u32> {
    t.iter().map(|v| v.to_bits()).collect()
}
