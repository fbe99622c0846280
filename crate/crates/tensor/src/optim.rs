use crate::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are kept in the parameter
/// element type so the whole state can be checkpointed exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// One update with learning rate `lr` (overrides `config.lr`, for schedules).
    pub fn update(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (lr_f, eps, decay) = (F::of(lr), F::of(c.eps), F::of(1.0 - lr * c.weight_decay));
        let (bc1, bc2) = (F::of(bc1), F::of(bc2));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TensorError::Shape {
                    op: "adamw",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (F::one() - b1) * gi;
                *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr_f * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = Tensor::<f64>::row(vec![3.0, -2.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, [&x]);
        for _ in 0..500 {
            let g = x.scale(2.0);
            opt.update(&mut [&mut x], &[g], cfg.lr).unwrap();
        }
        assert!(x.max_abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let mut x = Tensor::<f64>::row(vec![1.0]);
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(cfg, [&x]);
        opt.update(&mut [&mut x], &[Tensor::row(vec![0.0])], 0.5).unwrap();
        assert!((x.item() - (1.0 - 0.5 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut x = Tensor::<f32>::row(vec![1.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), [&x]);
        assert!(opt.update(&mut [&mut x], &[], 1e-3).is_err());
    }
}
