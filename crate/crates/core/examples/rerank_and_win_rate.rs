//! Candidate re-ranking by a weighted judge/CLAP score, and net win rate
//! with a bootstrap interval over pairwise verdicts.
//!
//!     cargo run --release --example rerank_and_win_rate

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepflow::eval::{self, PairwiseRecord, Preference};

fn main() -> sepflow::Result<()> {
    let judge = [0.61, 0.74, 0.70, 0.52];
    let clap = [0.40, 0.31, 0.36, 0.55];
    for (wj, wc) in [(1.0, 5.0), (1.0, 0.0), (0.0, 1.0)] {
        let i = eval::rerank(&judge, &clap, wj, wc)?;
        println!("weights ({wj}, {wc}) pick candidate {i}");
    }

    // six wins, three losses, one tie
    let mut records: Vec<PairwiseRecord> = Vec::new();
    for (k, v) in [(6, Preference::AWins), (3, Preference::BWins), (1, Preference::Tie)] {
        records.extend((0..k).map(|i| PairwiseRecord { id: format!("{v:?}{i}"), verdict: v, score_a: None, score_b: None }));
    }
    println!("NWR {:.2}", eval::net_win_rate(&records)?);
    let swapped: Vec<_> = records.iter().map(PairwiseRecord::swapped).collect();
    println!("NWR with A and B swapped {:.2}", eval::net_win_rate(&swapped)?);

    // verdicts from noisy scores of a system that is slightly better
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy: Vec<_> = (0..200)
        .map(|i| {
            let a = 0.55 + 0.2 * rng.random::<f64>();
            let b = 0.5 + 0.2 * rng.random::<f64>();
            eval::judge_pair(&format!("{i}"), a, b, 0.02)
        })
        .collect();
    let est = eval::net_win_rate_ci(&noisy, 1000, 9)?;
    println!("NWR {:.3}  95% CI [{:.3}, {:.3}]", est.value, est.ci_low, est.ci_high);
    Ok(())
}
