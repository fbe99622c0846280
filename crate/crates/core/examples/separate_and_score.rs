//! Separates held-out two-event mixtures with a text prompt and scores the
//! stems against ground truth. The mixture itself is scored as a baseline.
//!
//!     cargo run --release --example separate_and_score -- [checkpoint.samt]
//!
//! Without a checkpoint a small model is trained first, which takes a
//! minute or two and separates poorly. Pass the `ema.samt` of a real
//! training run for meaningful numbers.

use sepflow::data;
use sepflow::dit::{DitConfig, Separator};
use sepflow::eval;
use sepflow::flow::{self, FlowConfig};
use sepflow::train::{init_trainer, Example, TrainConfig};

fn quick_model() -> sepflow::Result<Separator<f32>> {
    let corpus: Vec<Example> = (0..32)
        .map(|s| Example::from_triplet(&data::two_event_mixture(s, 10.0)?))
        .collect::<sepflow::Result<_>>()?;
    let model = DitConfig { layers: 2, dim: 32, ffn_dim: 64, heads: 2, aux_layer: 1, ..DitConfig::default() };
    let config = TrainConfig { steps: 200, batch_size: 8, lr: 2e-3, warmup: 20, ..TrainConfig::default() };
    let mut trainer = init_trainer(model, 0, config, FlowConfig::default())?;
    trainer.run(&corpus, |_, _| Ok(()))?;
    Ok(trainer.ema_model())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> sepflow::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Separator::load(p.as_ref())?,
        None => quick_model()?,
    };
    let cfg = FlowConfig::default();
    let (mut tgt, mut res, mut base) = (vec![], vec![], vec![]);
    for s in 0..10 {
        let t = data::two_event_mixture(900_000 + s, 10.0)?;
        let sep = flow::separate(&t.mix, &t.bundle, &cfg, &model, s)?;
        let m = eval::score_separation(&t, &sep)?;
        println!(
            "{:<14} target {:>6.2} dB  residual {:>6.2} dB  mixture {:>6.2} dB",
            t.target_class().name(),
            m.si_sdr_target,
            m.si_sdr_residual,
            m.si_sdr_mixture
        );
        tgt.push(m.si_sdr_target);
        res.push(m.si_sdr_residual);
        base.push(m.si_sdr_mixture);
    }
    println!(
        "median  target {:.2}  residual {:.2}  mixture {:.2}",
        median(tgt),
        median(res),
        median(base)
    );
    Ok(())
}
