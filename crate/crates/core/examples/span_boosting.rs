//! Span prompts: ground-truth spans from VAD, spans predicted from the
//! mixture by the toy event detector, the per-frame tokens the model sees,
//! and SpanIoU between them.
//!
//!     cargo run --release --example span_boosting

use sepflow::codec::{self, FRAME_RATE};
use sepflow::data::{self, Regime, SynthOptions};
use sepflow::eval;
use sepflow::prompt::{encode_span, SpanToken};

fn main() -> sepflow::Result<()> {
    let opts = SynthOptions::default();
    let mut ious = vec![];
    for seed in 0..6 {
        let t = data::make_triplet(Regime::SpikySpan, seed, &opts)?;
        let truth = t.target_spans();
        let predicted = eval::predict_spans(&t.mix, &t.bundle.text, 0.5)?;
        let iou = eval::span_iou(&predicted, &truth);
        println!("{} \"{}\"", seed, t.target_class().name());
        println!("  truth     {:?}", truth.intervals());
        println!("  predicted {:?}  IoU {iou:.3}", predicted.intervals());
        ious.push(iou);

        if seed == 0 {
            let frames = codec::frames_for(t.mix.len());
            let tokens = encode_span(&truth, frames, FRAME_RATE as f64)?;
            let row: String = tokens
                .tokens()
                .iter()
                .map(|k| if *k == SpanToken::Act { '#' } else { '.' })
                .collect();
            println!("  tokens    {row}");
        }
    }
    println!("mean IoU {:.3}", ious.iter().sum::<f64>() / ious.len() as f64);
    Ok(())
}
