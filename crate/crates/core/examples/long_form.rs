//! Multi-diffusion over overlapping windows: the mask bookkeeping, and a
//! 45 s clip separated window by window with the stems merged at every
//! ODE step.
//!
//!     cargo run --release --example long_form

use sepflow::codec;
use sepflow::data;
use sepflow::dit::{DitConfig, Separator};
use sepflow::flow::{self, FlowConfig, WindowPlan};

fn main() -> sepflow::Result<()> {
    // 20 s windows, 5 s overlap, over 45 s of 25 Hz frames
    let plan = WindowPlan::default_for(1125)?;
    println!("windows {:?}", plan.windows);
    let sums = plan.partition_sums();
    let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    println!("masks sum to one within {worst:.1e}");

    // the network is untrained here; this shows the mechanics, not quality
    let model = Separator::<f32>::init(
        DitConfig { layers: 2, dim: 32, ffn_dim: 64, heads: 2, aux_layer: 1, ..DitConfig::default() },
        3,
    )?;
    let cfg = FlowConfig { ode_steps: 4, ..FlowConfig::default() };

    let t = data::two_event_mixture(11, 45.0)?;
    assert_eq!(codec::frames_for(t.mix.len()), plan.total);
    match flow::separate(&t.mix, &t.bundle, &cfg, &model, 0) {
        Err(e) => println!("one-shot refuses: {e}"),
        Ok(_) => unreachable!(),
    }
    let sep = flow::multi_diffusion(&t.mix, &t.bundle, &plan, &cfg, &model, 0)?;
    println!("long-form stems: {} + {} samples", sep.target.len(), sep.residual.len());

    // a plan with one window is the one-shot path, bit for bit
    let short = data::two_event_mixture(12, 8.0)?;
    let frames = codec::frames_for(short.mix.len());
    let one = flow::separate(&short.mix, &short.bundle, &cfg, &model, 5)?;
    let single = flow::multi_diffusion(&short.mix, &short.bundle, &WindowPlan::single(frames)?, &cfg, &model, 5)?;
    println!("single window identical to one-shot: {}", one == single);
    Ok(())
}
