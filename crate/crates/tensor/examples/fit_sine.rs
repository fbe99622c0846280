//! A two-layer GELU network fitted to sin(x) with the tape and AdamW.
//!
//!     cargo run --release -p sepflow-tensor --example fit_sine

use sepflow_tensor::{AdamW, AdamWConfig, Graph, Tensor};

fn main() -> sepflow_tensor::Result<()> {
    let n = 64;
    let xs = Tensor::<f64>::from_fn(n, 1, |r, _| -3.0 + 6.0 * r as f64 / (n - 1) as f64);
    let ys = xs.map(f64::sin);

    // deterministic, roughly fan-in scaled starting weights
    let hidden = 32;
    let mut params = vec![
        Tensor::from_fn(1, hidden, |_, c| ((c * 37 % 17) as f64 / 8.0) - 1.0),
        Tensor::from_fn(1, hidden, |_, c| ((c * 11 % 13) as f64 / 6.0) - 1.0),
        Tensor::from_fn(hidden, 1, |r, _| (((r * 23 % 19) as f64 / 9.0) - 1.0) / (hidden as f64).sqrt()),
        Tensor::zeros(1, 1),
    ];
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, params.iter());

    for step in 0..=2000 {
        let mut g = Graph::new();
        let [w1, b1, w2, b2] = [0, 1, 2, 3].map(|i| g.param(params[i].clone()));
        let x = g.constant(xs.clone());
        let h = g.linear(x, w1, Some(b1))?;
        let h = g.gelu(h);
        let pred = g.linear(h, w2, Some(b2))?;
        let target = g.constant(ys.clone());
        let diff = g.sub(pred, target)?;
        let sq = g.square(diff);
        let loss = g.mean(sq);
        if step % 250 == 0 {
            println!("step {step:>4}  mse {:.3e}", g.value(loss).item());
        }
        let grads = g.backward(loss)?;
        let gs: Vec<Tensor<f64>> = [w1, b1, w2, b2].iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        opt.update(&mut params.iter_mut().collect::<Vec<_>>(), &gs, 1e-2)?;
    }
    Ok(())
}
