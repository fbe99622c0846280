//! Trains a small separator for a few hundred steps and shows the flow loss
//! falling. The trainer is deterministic: run it twice and the printed
//! losses match to the last digit.
//!
//!     cargo run --release --example train_small_model -- [steps]

use sepflow::data::{self, Regime, SynthOptions};
use sepflow::dit::DitConfig;
use sepflow::flow::FlowConfig;
use sepflow::train::{init_trainer, Example, Stage, TrainConfig};

fn main() -> sepflow::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(300, |s| s.parse().expect("steps"));
    let opts = SynthOptions { duration: 4.0, ..SynthOptions::default() };
    let corpus: Vec<Example> = (0..64)
        .map(|s| {
            let regime = if s % 3 == 0 { Regime::TargetPlusNoise } else { Regime::MultiStem };
            Example::from_triplet(&data::make_triplet(regime, s, &opts)?)
        })
        .collect::<sepflow::Result<_>>()?;

    let model = DitConfig { layers: 2, dim: 32, ffn_dim: 64, heads: 2, aux_layer: 1, ..DitConfig::default() };
    let config = TrainConfig { steps, batch_size: 8, lr: 2e-3, warmup: 20, stage: Stage::Pretrain, ..TrainConfig::default() };
    let mut trainer = init_trainer(model, 1, config, FlowConfig::default())?;

    let mut first = None;
    trainer.run(&corpus, |log, _| {
        first.get_or_insert(log.fm_loss);
        if log.step % 25 == 0 || log.step + 1 == steps {
            println!("step {:>4}  lr {:.2e}  fm {:.4}  aux {:.4}", log.step, log.lr, log.fm_loss, log.aux_loss);
        }
        Ok(())
    })?;

    let path = std::env::temp_dir().join("sepflow-small.samt");
    trainer.ema_model().to_checkpoint().save(&path)?;
    println!("first fm {:.4}, EMA weights saved to {}", first.unwrap_or(f64::NAN), path.display());
    Ok(())
}
