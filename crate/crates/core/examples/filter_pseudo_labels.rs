//! Scores synthetic triplets with the toy stand-in scorers and runs them
//! through the pseudo-label gate. Swapping the stems shows what a bad
//! pseudo-label looks like to the gate.
//!
//!     cargo run --release --example filter_pseudo_labels

use sepflow::data::{self, Regime, SynthOptions, Verdict};

fn show(label: &str, v: &Verdict) {
    match v {
        Verdict::Keep => println!("  {label:<8} keep"),
        Verdict::Reject(why) => println!("  {label:<8} reject {why:?}"),
    }
}

fn main() -> sepflow::Result<()> {
    let opts = SynthOptions::default();
    let (mut kept, mut total) = (0, 0);
    for seed in 0..8 {
        let regime = Regime::ALL[seed as usize % 3];
        let t = data::make_triplet(regime, seed, &opts)?;
        let good = data::toy_scorers(&t.tgt, &t.res, &t.bundle.text, &t.bundle.visual)?;
        let swapped = data::toy_scorers(&t.res, &t.tgt, &t.bundle.text, &t.bundle.visual)?;
        println!(
            "{seed} {} / {}: clap_tgt {:.2} clap_res {:.2} silence {:.2} coverage {:.2}",
            regime.name(),
            t.target_class().name(),
            good.clap_tgt,
            good.clap_res,
            good.silence_ratio,
            good.mask_coverage
        );
        let v = data::filter_gate(&good);
        show("stems", &v);
        show("swapped", &data::filter_gate(&swapped));
        kept += v.is_keep() as usize;
        total += 1;
    }
    println!("kept {kept} of {total} ground-truth pairs");
    Ok(())
}
