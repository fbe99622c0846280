//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so
//! every criterion reports even when an earlier one fails.
//!
//! The separation-quality and span-boosting criteria share one seed-pinned
//! training run whose checkpoint is cached under the cargo target tmpdir,
//! keyed by the recipe text. Delete that directory to force a retrain.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepflow::cli::{self, EvalPrompt, SeparateArgs};
use sepflow::codec::{Waveform, FRAME_RATE, SAMPLE_RATE};
use sepflow::config::RunConfig;
use sepflow::data::{self, filter_gate, vad_spans, FilterScores, RejectReason, Regime, SynthOptions, Verdict};
use sepflow::dit::{self, Conditioning, Separator};
use sepflow::eval::{self, PairwiseRecord, Preference};
use sepflow::flow::{self, FlowConfig, Solver, WindowPlan};
use sepflow::params::Binder;
use sepflow::prompt::{encode_span, PromptBundle, SpanToken, TextPrompt, VisualFeats};
use sepflow::span::SpanSet;
use sepflow_tensor::{Graph, Tensor};

use common::{bits, perturbed, random_tensor, small_config};

/// The seed-pinned training run behind criteria 5 and 7.
const RECIPE: &str = "\
model.seed = 0
data.seed = 2024
data.count = 2000
data.duration = 10
data.sources_max = 2
data.weights.multi_stem = 0.8
data.weights.spiky_span = 0.2
train.seed = 1
train.steps = 2000
train.batch_size = 16
train.lr = 0.001
train.warmup = 100
train.stage = pretrain
train.checkpoint_every = 0
";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn tmp_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn fresh_dir(name: &str) -> PathBuf {
    let d = tmp_root().join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

// ---------------------------------------------------------------- 1

struct GradCase {
    x_t: Tensor<f64>,
    mix: Tensor<f32>,
    bundle: PromptBundle,
    target: Tensor<f64>,
    a_tgt: Tensor<f64>,
}

fn grad_loss(model: &Separator<f64>, c: &GradCase) -> (f64, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let mut b = Binder::new(&model.params, true);
    let cond = Conditioning { mix: &c.mix, bundle: &c.bundle };
    let out = dit::forward(&mut g, &mut b, &model.config, &c.x_t, 0.37, &cond).unwrap();
    let proj = dit::aux_project(&mut g, &mut b, out.aux_hidden).unwrap();
    let aux = flow::aux_loss(&mut g, proj, &c.a_tgt).unwrap();
    let fm = flow::fm_loss(&mut g, out.velocity, &c.target).unwrap();
    let total = flow::total_loss(&mut g, fm, aux, 1.0).unwrap();
    let grads = g.backward(total).unwrap();
    (g.value(total).item(), b.collect_grads(&grads))
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let frames = 6;
    let model: Separator<f64> = perturbed(small_config(), 11, 0.1);
    let spans = SpanSet::new(vec![(0.04, 0.12)]).unwrap();
    let c = GradCase {
        x_t: random_tensor(frames, 32, 1),
        mix: random_tensor(frames, 16, 2),
        bundle: PromptBundle {
            text: TextPrompt::parse("loud chirp-up").unwrap(),
            span: encode_span(&spans, frames, FRAME_RATE as f64).unwrap(),
            visual: VisualFeats { feats: random_tensor(frames, 8, 3), present: true },
        },
        target: random_tensor(frames, 32, 4),
        a_tgt: random_tensor::<f64>(frames, 16, 5).map(f64::abs),
    };
    let (_, grads) = grad_loss(&model, &c);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-4;
    let (mut worst, mut short) = (0.0f64, Vec::new());
    for (k, name) in names.iter().enumerate() {
        let p = model.params.get(name).unwrap();
        let rows = if name == "input.pos" { frames } else { p.rows() };
        let mut checked = 0;
        for _ in 0..400 {
            if checked == 20 {
                break;
            }
            let idx = rng.random_range(0..rows) * p.cols() + rng.random_range(0..p.cols());
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data_mut()[idx] += h;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data_mut()[idx] -= h;
            let numeric = (grad_loss(&plus, &c).0 - grad_loss(&minus, &c).0) / (2.0 * h);
            let analytic = grads[k].data()[idx];
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            worst = worst.max((analytic - numeric).abs() / scale);
            checked += 1;
        }
        if checked < 20 {
            short.push(name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-3 && short.is_empty() && secs < 120.0,
        format!(
            "{} tensors x 20 coords, max rel err {worst:.2e}, {secs:.1} s{}",
            names.len(),
            if short.is_empty() { String::new() } else { format!(", too few live coords in {short:?}") }
        ),
    )
}

// ---------------------------------------------------------------- 2

fn path_derivative() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let x0 = random_tensor::<f64>(4, 8, 100 + i);
        let x1 = random_tensor::<f64>(4, 8, 200 + i);
        let sigma = rng.random_range(0.0..0.1);
        let t = rng.random_range(0.0..1.0);
        let (_, u) = flow::sample_path(&x0, &x1, t, sigma).unwrap();
        // d/dt [(1 - (1 - σ)t) x0 + t x1] = x1 - (1 - σ) x0
        let symbolic: Vec<f64> = x0.data().iter().zip(x1.data()).map(|(a, b)| b - (1.0 - sigma) * a).collect();
        // the path is affine in t, so any secant is the derivative
        let t2 = if t < 0.5 { t + 0.5 } else { t - 0.5 };
        let (xa, _) = flow::sample_path(&x0, &x1, t, sigma).unwrap();
        let (xb, _) = flow::sample_path(&x0, &x1, t2, sigma).unwrap();
        for k in 0..symbolic.len() {
            let secant = (xb.data()[k] - xa.data()[k]) / (t2 - t);
            worst = worst.max((u.data()[k] - symbolic[k]).abs()).max((secant - symbolic[k]).abs());
        }
    }
    outcome(worst <= 1e-12, format!("100 draws, max |du| {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn solver_order() -> Outcome {
    let x0 = Tensor::<f64>::row(vec![1.0, -0.5, 2.0]);
    let exact = (-1f64).exp();
    let err = |steps| {
        let x = flow::ode_solve(&x0, steps, Solver::Midpoint, |x: &Tensor<f64>, _| Ok(x.scale(-1.0))).unwrap();
        x.data().iter().zip(x0.data()).map(|(v, a)| (v - a * exact).abs()).fold(0.0, f64::max)
    };
    let (e8, e16, e32) = (err(8), err(16), err(32));
    let (r1, r2) = (e8 / e16, e16 / e32);
    let ok = |r: f64| (3.5..=4.5).contains(&r);
    outcome(ok(r1) && ok(r2), format!("errors {e8:.2e} {e16:.2e} {e32:.2e}, ratios {r1:.3} {r2:.3}"))
}

// ---------------------------------------------------------------- 4

fn multi_diffusion_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let total = rng.random_range(1..3000);
        let window = rng.random_range(1..=800);
        let overlap = rng.random_range(0..window);
        let plan = WindowPlan::new(total, window, overlap).unwrap();
        worst = plan.partition_sums().iter().map(|s| (s - 1.0).abs()).fold(worst, f64::max);
    }
    let model: Separator<f32> = perturbed(small_config(), 3, 0.05);
    let cfg = FlowConfig { ode_steps: 4, ..FlowConfig::default() };
    let mut identical = 0;
    for s in 0..10u64 {
        let t = data::two_event_mixture(s, 2.0 + s as f64 * 0.7).unwrap();
        let frames = t.bundle.frames();
        let one = flow::separate(&t.mix, &t.bundle, &cfg, &model, s).unwrap();
        let md = flow::multi_diffusion(&t.mix, &t.bundle, &WindowPlan::single(frames).unwrap(), &cfg, &model, s)
            .unwrap();
        identical += (bits(one.latent.data()) == bits(md.latent.data())
            && bits(&one.target.samples) == bits(&md.target.samples)
            && bits(&one.residual.samples) == bits(&md.residual.samples)) as usize;
    }
    outcome(
        worst <= 1e-9 && identical == 10,
        format!("200 plans, max |sum - 1| {worst:.1e}; single window bit-equal {identical}/10"),
    )
}

// ---------------------------------------------------------------- 5, 7

fn fingerprint(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// EMA weights of the recipe run, trained once and cached.
fn trained_model() -> Separator<f32> {
    let dir = tmp_root().join(format!("run-{:016x}", fingerprint(RECIPE)));
    let ckpt = dir.join("train").join(cli::EMA_CKPT);
    if !ckpt.exists() {
        let start = Instant::now();
        let config = RunConfig::parse(RECIPE, &dir).unwrap();
        cli::cmd_synth(&config, &dir.join("corpus")).unwrap();
        let tmp = dir.join("train.partial");
        let _ = std::fs::remove_dir_all(&tmp);
        cli::cmd_train(&config, &dir.join("corpus").join(cli::MANIFEST), &tmp, None).unwrap();
        std::fs::rename(&tmp, dir.join("train")).unwrap();
        println!("(recipe run trained in {:.0} s)", start.elapsed().as_secs_f64());
    }
    Separator::load(&ckpt).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn separation_quality(model: &Separator<f32>) -> Outcome {
    let cfg = FlowConfig::default();
    let (mut tgt, mut res, mut base) = (vec![], vec![], vec![]);
    for i in 0..50u64 {
        let t = data::two_event_mixture(7_000_000 + i, 10.0).unwrap();
        let sep = flow::separate(&t.mix, &t.bundle, &cfg, model, i).unwrap();
        tgt.push(eval::si_sdr(&sep.target, &t.tgt).unwrap());
        res.push(eval::si_sdr(&sep.residual, &t.res).unwrap());
        base.push(eval::si_sdr(&t.mix, &t.tgt).unwrap());
    }
    let (mt, mr, mb) = (median(tgt), median(res), median(base));
    outcome(
        mt >= 5.0 && mr >= 5.0 && mb.abs() < 3.0,
        format!("median SI-SDR target {mt:.2} dB, residual {mr:.2} dB, mixture baseline {mb:.2} dB (50 clips)"),
    )
}

fn span_boosting(model: &Separator<f32>) -> Outcome {
    let cfg = FlowConfig::default();
    let opts = SynthOptions::default();
    let mut sums = [0.0f64; 3];
    // outputs the VAD hears over the whole clip; these score the target's duration fraction whatever the prompt
    let mut saturated = 0;
    let n = 100;
    for i in 0..n {
        let t = data::make_triplet(Regime::SpikySpan, 8_000_000 + i, &opts).unwrap();
        let truth = t.target_spans();
        for (k, mode) in [EvalPrompt::TextOnly, EvalPrompt::TextPredictedSpan, EvalPrompt::TextOracleSpan]
            .into_iter()
            .enumerate()
        {
            let bundle = cli::eval_bundle(&t, mode).unwrap();
            let sep = flow::separate(&t.mix, &bundle, &cfg, model, i).unwrap();
            let heard = vad_spans(&sep.target);
            saturated += (heard.total_length() >= 0.95 * t.mix.duration()) as usize;
            sums[k] += eval::span_iou(&heard, &truth);
        }
    }
    let [text, predicted, oracle] = sums.map(|s| s / n as f64);
    outcome(
        predicted >= text - 0.02 && oracle >= text,
        format!(
            "mean SpanIoU over {n} spiky clips: text {text:.3}, +predicted span {predicted:.3}, +true span {oracle:.3}; \
             {saturated}/{} outputs active over the whole clip",
            3 * n
        ),
    )
}

// ---------------------------------------------------------------- 6

fn tone(duration: f64, on: f64, off: f64, amp: f32) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    Waveform::new(
        (0..(duration * sr).round() as usize)
            .map(|i| {
                let t = i as f64 / sr;
                if t >= on && t < off {
                    amp * (2.0 * std::f64::consts::PI * 300.0 * t).sin() as f32
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Sorted, disjoint intervals on a 1 ms grid.
fn random_ms_spans(rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut at = 0u32;
    for _ in 0..rng.random_range(0..6) {
        let start = at + rng.random_range(0..2000);
        let end = start + rng.random_range(1..1500);
        if end > 10_000 {
            break;
        }
        out.push((start, end));
        at = end + rng.random_range(1..500);
    }
    out
}

fn ms_set(ms: &[(u32, u32)]) -> SpanSet {
    SpanSet::new(ms.iter().map(|&(a, b)| (a as f64 / 1000.0, b as f64 / 1000.0)).collect()).unwrap()
}

fn span_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut encode_bad = 0;
    let mut iou_worst = 0.0f64;
    for _ in 0..1000 {
        let a = random_ms_spans(&mut rng);
        let b = random_ms_spans(&mut rng);
        let tokens = encode_span(&ms_set(&a), 250, FRAME_RATE as f64).unwrap();
        for (t, tok) in tokens.tokens().iter().enumerate() {
            let centre = 40 * t as u32 + 20;
            let inside = a.iter().any(|&(x, y)| x <= centre && centre < y);
            encode_bad += ((*tok == SpanToken::Act) != inside) as usize;
        }
        let on = |s: &[(u32, u32)], t: u32| s.iter().any(|&(x, y)| x <= t && t < y);
        let (mut inter, mut union) = (0u32, 0u32);
        for t in 0..10_000 {
            inter += (on(&a, t) && on(&b, t)) as u32;
            union += (on(&a, t) || on(&b, t)) as u32;
        }
        let brute = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        iou_worst = iou_worst.max((eval::span_iou(&ms_set(&a), &ms_set(&b)) - brute).abs());
    }
    let frame = 1.0 / FRAME_RATE as f64;
    let (mut boundary_bad, mut short_spans, mut tones) = (0, 0, 0);
    for _ in 0..200 {
        let on = rng.random_range(0.0..4.0);
        let len = rng.random_range(0.05..2.0);
        let off = f64::min(on + len, 5.0);
        let amp = rng.random_range(0.05f32..0.9);
        let s = vad_spans(&tone(5.0, on, off, amp));
        tones += 1;
        short_spans += s.intervals().iter().filter(|&&(a, b)| b - a < 0.25 - 1e-9).count();
        if off - on >= 0.25 + 2.0 * frame {
            let ok = s.len() == 1 && {
                let (a, b) = s.intervals()[0];
                (a - on).abs() <= frame + 1e-9 && (b - off).abs() <= frame + 1e-9
            };
            boundary_bad += !ok as usize;
        }
    }
    outcome(
        encode_bad == 0 && iou_worst <= 1e-9 && boundary_bad == 0 && short_spans == 0,
        format!(
            "1000 sets: {encode_bad} token mismatches, IoU err {iou_worst:.1e}; {tones} tones: {boundary_bad} boundary misses, {short_spans} spans < 250 ms"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn filter_gate_fidelity() -> Outcome {
    let keep = FilterScores {
        clap_tgt: 0.5,
        clap_res: -0.1,
        aes_pc: 2.0,
        silence_ratio: 0.5,
        mask_coverage: 0.1,
        imagebind: 0.5,
        has_visual: true,
    };
    let mut failures = Vec::new();
    if filter_gate(&keep) != Verdict::Keep {
        failures.push("all-pass sample rejected".to_string());
    }
    type Setter = fn(&mut FilterScores, f64);
    let cases: [(RejectReason, f64, f64, Setter); 6] = [
        (RejectReason::ClapTarget, 0.35, 1.0, |s, v| s.clap_tgt = v),
        (RejectReason::ClapResidual, 0.0, -1.0, |s, v| s.clap_res = v),
        (RejectReason::AestheticsPc, 2.5, -1.0, |s, v| s.aes_pc = v),
        (RejectReason::SilenceRatio, 0.95, -1.0, |s, v| s.silence_ratio = v),
        (RejectReason::MaskCoverage, 0.02, 1.0, |s, v| s.mask_coverage = v),
        (RejectReason::Imagebind, 0.2, 1.0, |s, v| s.imagebind = v),
    ];
    for (reason, bound, pass_dir, set) in cases {
        // at the bound, one ulp on the passing side, one ulp on the failing side
        let inside = if pass_dir > 0.0 { bound.next_up() } else { bound.next_down() };
        let outside = if pass_dir > 0.0 { bound.next_down() } else { bound.next_up() };
        for (v, want_keep) in [(bound, false), (inside, true), (outside, false)] {
            let mut s = keep;
            set(&mut s, v);
            let got = filter_gate(&s);
            let expected = if want_keep { Verdict::Keep } else { Verdict::Reject(vec![reason]) };
            if got != expected {
                failures.push(format!("{reason:?} at {v}: {got:?}"));
            }
        }
    }
    let all_bad = FilterScores {
        clap_tgt: 0.35,
        clap_res: 0.0,
        aes_pc: 2.5,
        silence_ratio: 0.95,
        mask_coverage: 0.02,
        imagebind: 0.2,
        has_visual: true,
    };
    let every = Verdict::Reject(cases.iter().map(|c| c.0).collect());
    if filter_gate(&all_bad) != every {
        failures.push("all-fail sample misses reasons".into());
    }
    outcome(failures.is_empty(), if failures.is_empty() {
        "6 thresholds x (at, inside, outside) plus all-pass and all-fail".to_string()
    } else {
        failures.join("; ")
    })
}

// ---------------------------------------------------------------- 9

fn rerank_and_nwr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..1000 {
        // coarse grid so exact ties are common
        let judge: Vec<f64> = (0..8).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let clap: Vec<f64> = (0..8).map(|_| rng.random_range(-8..8) as f64 / 8.0).collect();
        let mut best = 0;
        for i in 1..8 {
            if judge[i] + 5.0 * clap[i] > judge[best] + 5.0 * clap[best] {
                best = i;
            }
        }
        mismatches += (eval::rerank(&judge, &clap, 1.0, 5.0).unwrap() != best) as usize;
    }
    let mut anti_bad = 0;
    for n in 1..200 {
        let records: Vec<PairwiseRecord> = (0..n)
            .map(|i| PairwiseRecord {
                id: format!("{i}"),
                verdict: [Preference::AWins, Preference::BWins, Preference::Tie][rng.random_range(0..3)],
                score_a: None,
                score_b: None,
            })
            .collect();
        let swapped: Vec<_> = records.iter().map(PairwiseRecord::swapped).collect();
        anti_bad += (eval::net_win_rate(&records).unwrap() != -eval::net_win_rate(&swapped).unwrap()) as usize;
    }
    let mut worked = Vec::new();
    for (k, v) in [(6, Preference::AWins), (3, Preference::BWins), (1, Preference::Tie)] {
        worked.extend((0..k).map(|i| PairwiseRecord { id: format!("{i}"), verdict: v, score_a: None, score_b: None }));
    }
    let nwr = eval::net_win_rate(&worked).unwrap();
    outcome(
        mismatches == 0 && anti_bad == 0 && nwr == 0.30,
        format!("1000 beams: {mismatches} argmax mismatches; 199 record sets: {anti_bad} antisymmetry breaks; (6,3,1) -> {nwr}"),
    )
}

// ---------------------------------------------------------------- 10

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SMALL_RUN: &str = "\
model.layers = 2
model.dim = 16
model.ffn_dim = 32
model.heads = 2
model.aux_layer = 1
model.seed = 5
data.seed = 9
data.count = 8
data.duration = 10
train.seed = 3
train.batch_size = 2
train.warmup = 2
train.checkpoint_every = 3
";

fn determinism() -> Outcome {
    let root = fresh_dir("determinism");
    let config = |steps: u64| RunConfig::parse(&format!("{SMALL_RUN}train.steps = {steps}\n"), &root).unwrap();
    let mut checks = Vec::new();

    let (ca, cb) = (root.join("corpus_a"), root.join("corpus_b"));
    cli::cmd_synth(&config(6), &ca).unwrap();
    cli::cmd_synth(&config(6), &cb).unwrap();
    checks.push(("synth", snapshot(&ca) == snapshot(&cb)));

    let manifest = ca.join(cli::MANIFEST);
    let (ta, tb) = (root.join("train_a"), root.join("train_b"));
    cli::cmd_train(&config(6), &manifest, &ta, None).unwrap();
    cli::cmd_train(&config(6), &manifest, &tb, None).unwrap();
    checks.push(("train", snapshot(&ta) == snapshot(&tb)));

    let split = root.join("train_split");
    cli::cmd_train(&config(3), &manifest, &split, None).unwrap();
    cli::cmd_train(&config(6), &manifest, &split, Some(&split.join(cli::FINAL_CKPT))).unwrap();
    let same = |f: &str| std::fs::read(ta.join(f)).unwrap() == std::fs::read(split.join(f)).unwrap();
    checks.push(("resume", same(cli::FINAL_CKPT) && same(cli::EMA_CKPT) && same(cli::LOSS_LOG)));

    let args = |out: PathBuf| SeparateArgs {
        ckpt: ta.join(cli::EMA_CKPT),
        input: ca.join("audio").join("000000.mix.f32"),
        out_dir: out,
        text: Some("chirp-up".into()),
        beam: 3,
        seed: 17,
        ode_steps: Some(4),
        ..SeparateArgs::default()
    };
    let (sa, sb) = (root.join("sep_a"), root.join("sep_b"));
    cli::cmd_separate(&args(sa.clone())).unwrap();
    cli::cmd_separate(&args(sb.clone())).unwrap();
    checks.push(("separate", snapshot(&sa) == snapshot(&sb) && !snapshot(&sa).is_empty()));

    let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            "synth, train, resume and separate artifacts byte-identical".to_string()
        } else {
            format!("differing artifacts: {failed:?}")
        },
    )
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {n:>2} {name:<28} {}  {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() {
    // `cargo test -- --list` and filters come through here too
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut pass = vec![
        run(1, "gradient integrity", gradient_integrity),
        run(2, "path derivative", path_derivative),
        run(3, "solver order", solver_order),
        run(4, "multi-diffusion exactness", multi_diffusion_exactness),
    ];
    let model = catch_unwind(trained_model).ok();
    pass.push(run(5, "toy separation quality", || separation_quality(model.as_ref().expect("training run failed"))));
    pass.push(run(6, "span machinery", span_machinery));
    pass.push(run(7, "span boosting direction", || span_boosting(model.as_ref().expect("training run failed"))));
    pass.push(run(8, "filter gate fidelity", filter_gate_fidelity));
    pass.push(run(9, "rerank and net win rate", rerank_and_nwr));
    pass.push(run(10, "determinism", determinism));
    let failed = pass.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", pass.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
