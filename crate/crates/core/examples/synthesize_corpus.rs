//! Builds a small mixed-regime corpus on disk and prints what went into it.
//!
//!     cargo run --release --example synthesize_corpus -- [out_dir] [count]

use std::path::PathBuf;

use sepflow::cli;
use sepflow::config::RunConfig;
use sepflow::data::{self, Regime};

fn main() -> sepflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().map_or_else(|| std::env::temp_dir().join("sepflow-corpus"), PathBuf::from);
    let count: usize = args.next().map_or(12, |s| s.parse().expect("count"));

    let text = format!(
        "data.seed = 7\ndata.count = {count}\ndata.duration = 10\n\
         data.weights.multi_stem = 0.5\ndata.weights.target_plus_noise = 0.3\ndata.weights.spiky_span = 0.2\n"
    );
    let config = RunConfig::parse(&text, &out)?;
    let manifest = cli::cmd_synth(&config, &out)?;

    for r in Regime::ALL {
        let n = manifest.records.iter().filter(|m| m.regime == r).count();
        println!("{:<18} {n}", r.name());
    }
    println!();
    for rec in manifest.records.iter().take(6) {
        let t = manifest.load_triplet(rec)?;
        // mixture = target + residual, sample for sample
        let snr = data::measured_snr(&t.tgt, &t.res);
        println!(
            "{} {:<18} prompt {:<16} snr {snr:>6.2} dB  target spans {:?}",
            rec.id,
            rec.regime.name(),
            t.target_class().name(),
            t.target_spans().intervals()
        );
    }
    println!("\nmanifest at {}", out.join(cli::MANIFEST).display());
    Ok(())
}
