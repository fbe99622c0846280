mod common;

use proptest::prelude::*;
use sepflow::codec::{self, EventClass, EventSpec, Waveform, FRAME_RATE};
use sepflow::dit::Separator;
use sepflow::eval::{self, net_win_rate, rerank, span_iou, PairwiseRecord, Preference};
use sepflow::flow::{self, FlowConfig, Separation};
use sepflow::prompt::{encode_span, PromptBundle, SpanToken, TextPrompt};
use sepflow::span::SpanSet;
use sepflow::{data, Error};
use sepflow_tensor::Tensor;

use common::{perturbed, small_config};

fn set(iv: &[(f64, f64)]) -> SpanSet {
    SpanSet::new(iv.to_vec()).unwrap()
}

#[test]
fn span_iou_examples() {
    let a = set(&[(0.5, 1.0), (2.0, 3.5)]);
    assert_eq!(span_iou(&a, &a), 1.0);
    let third = span_iou(&set(&[(0.0, 2.0)]), &set(&[(1.0, 3.0)]));
    assert!((third - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(span_iou(&set(&[(0.0, 1.0)]), &set(&[(1.0, 2.0)])), 0.0);
    assert_eq!(span_iou(&SpanSet::empty(), &SpanSet::empty()), 1.0);
    assert_eq!(span_iou(&SpanSet::empty(), &a), 0.0);
    assert!(matches!(SpanSet::new(vec![(1.0, 0.5)]), Err(Error::Validation(_))));
    assert!(matches!(SpanSet::new(vec![(0.0, 2.0), (1.0, 3.0)]), Err(Error::Validation(_))));
}

/// Random sorted disjoint intervals with millisecond endpoints.
fn ms_spans() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec(1u32..400, 0..12).prop_map(|cuts| {
        let mut at = 0;
        let mut out = Vec::new();
        for (i, c) in cuts.into_iter().enumerate() {
            let next = at + c;
            if i % 2 == 1 {
                out.push((at, next));
            }
            at = next;
        }
        out
    })
}

fn to_set(ms: &[(u32, u32)]) -> SpanSet {
    set(&ms.iter().map(|&(a, b)| (a as f64 / 1000.0, b as f64 / 1000.0)).collect::<Vec<_>>())
}

fn brute_iou(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    let end = a.iter().chain(b).map(|x| x.1).max().unwrap_or(0);
    let on = |s: &[(u32, u32)], t: u32| s.iter().any(|&(x, y)| x <= t && t < y);
    let (mut inter, mut union) = (0u32, 0u32);
    for t in 0..end {
        let (p, q) = (on(a, t), on(b, t));
        inter += (p && q) as u32;
        union += (p || q) as u32;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

proptest! {
    #[test]
    fn span_iou_matches_millisecond_brute_force(a in ms_spans(), b in ms_spans()) {
        let (sa, sb) = (to_set(&a), to_set(&b));
        let fast = span_iou(&sa, &sb);
        prop_assert!((fast - brute_iou(&a, &b)).abs() < 1e-9);
        prop_assert_eq!(fast, span_iou(&sb, &sa));
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn encode_span_uses_frame_centres(a in ms_spans()) {
        let s = to_set(&a);
        let frames = 250usize;
        let fr = FRAME_RATE as f64;
        let tokens = encode_span(&s, frames, fr).unwrap();
        for (t, tok) in tokens.tokens().iter().enumerate() {
            // integer oracle: centre of frame t is at (40t + 20) ms
            let centre = 40 * t as u32 + 20;
            let inside = a.iter().any(|&(x, y)| x <= centre && centre < y);
            prop_assert_eq!(*tok == SpanToken::Act, inside);
        }
    }
}

fn alternating(n: usize, period: usize) -> Vec<f32> {
    (0..n).map(|i| if (i / period) % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

#[test]
fn si_sdr_examples() {
    let r = Waveform::new(alternating(800, 2));
    assert_eq!(eval::si_sdr(&r, &r).unwrap(), eval::SI_SDR_CAP);
    assert_eq!(eval::si_sdr(&r.scaled(2.0), &r).unwrap(), eval::SI_SDR_CAP);
    // [1,1,-1,-1] and [1,-1,1,-1] are orthogonal with equal energy
    let n = Waveform::new(alternating(800, 1));
    let est = r.plus(&n).unwrap();
    assert!(eval::si_sdr(&est, &r).unwrap().abs() < 1e-12);
    let quieter = r.plus(&n.scaled(0.1)).unwrap();
    assert!((eval::si_sdr(&quieter, &r).unwrap() - 20.0).abs() < 1e-4);
    assert!(matches!(eval::si_sdr(&r, &Waveform::silence(800)), Err(Error::Contract(_))));
    assert!(matches!(eval::si_sdr(&r, &Waveform::silence(10)), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn si_sdr_ignores_positive_scale(seed in 0u64..1000, g in 0.01f64..100.0) {
        let r = Waveform::new(common::random_tensor::<f32>(1, 512, seed).into_data());
        let e = Waveform::new(common::random_tensor::<f32>(1, 512, seed + 1).into_data()).plus(&r).unwrap();
        let a = eval::si_sdr(&e, &r).unwrap();
        let b = eval::si_sdr(&e.scaled(g), &r).unwrap();
        prop_assert!((a - b).abs() < 1e-4);
    }
}

fn clip(class: EventClass, onset: f64, duration: f64, total: f64, seed: u64) -> Waveform {
    let spec = EventSpec { class, onset, duration, amplitude: 0.8, seed };
    codec::synth_event(&spec, total).unwrap()
}

#[test]
fn predicted_spans_examples() {
    let prompt = TextPrompt::for_class(EventClass::ChirpUp);
    let other = clip(EventClass::NoiseBurst, 1.0, 2.0, 4.0, 1);
    assert!(eval::predict_spans(&other, &prompt, 0.3).unwrap().is_empty());
    for class in EventClass::ALL {
        let w = clip(class, 1.0, 2.0, 4.0, 2);
        let p = TextPrompt::for_class(class);
        let got = eval::predict_spans(&w, &p, eval::SPAN_THRESHOLD).unwrap();
        let iou = span_iou(&got, &data::vad_spans(&w));
        assert!(iou >= 0.8, "{class:?}: {iou}");
        assert!(eval::predict_spans(&w, &p, 1.0 - 1e-12).unwrap().is_empty());
    }
    assert!(eval::predict_spans(&other, &prompt, 1.0).is_err());
    assert!(eval::predict_spans(&other, &prompt, 0.0).is_err());
    assert!(eval::predict_spans(&other, &TextPrompt::empty(), 0.3).is_err());
}

#[test]
fn boosted_separation_equals_explicit_span_bundle() {
    let model: Separator<f32> = perturbed(small_config(), 2, 0.05);
    let cfg = FlowConfig { ode_steps: 2, ..FlowConfig::default() };
    // a sustained tone fills the clip, so the predicted span is full-clip
    let w = clip(EventClass::SustainedTone, 0.0, 3.0, 3.0, 5);
    let prompt = TextPrompt::for_class(EventClass::SustainedTone);
    let boosted = eval::separate_text_boosted(&w, &prompt, &cfg, &model, 9).unwrap();
    assert_eq!(boosted.spans.intervals(), &[(0.0, 3.0)]);
    let frames = codec::frames_for(w.len());
    let bundle = PromptBundle {
        span: encode_span(&boosted.spans, frames, FRAME_RATE as f64).unwrap(),
        ..PromptBundle::text_only(prompt.clone(), frames)
    };
    let plain = flow::separate(&w, &bundle, &cfg, &model, 9).unwrap();
    assert_eq!(boosted.separation, plain);
    let again = eval::separate_text_boosted(&w, &prompt, &cfg, &model, 9).unwrap();
    assert_eq!(boosted, again);
    assert!(eval::separate_text_boosted(&w, &TextPrompt::empty(), &cfg, &model, 9).is_err());
}

#[test]
fn rerank_examples() {
    assert_eq!(rerank(&[0.3], &[-1.0], 1.0, 5.0).unwrap(), 0);
    assert_eq!(rerank(&[0.0, 0.0], &[0.1, 0.2], 1.0, 5.0).unwrap(), 1);
    assert_eq!(rerank(&[1.0, 1.0], &[0.5, 0.5], 1.0, 5.0).unwrap(), 0);
    assert!(matches!(rerank(&[1.0], &[1.0, 2.0], 1.0, 5.0), Err(Error::Contract(_))));
    assert!(rerank(&[], &[], 1.0, 5.0).is_err());
}

proptest! {
    #[test]
    fn rerank_is_the_exhaustive_argmax(
        judge in prop::collection::vec(-8i32..8, 8),
        clap in prop::collection::vec(-8i32..8, 8),
        shift in -4i32..4,
    ) {
        // eighths keep every combined score exact, so ties are real ties
        let j: Vec<f64> = judge.iter().map(|&v| v as f64 / 8.0).collect();
        let c: Vec<f64> = clap.iter().map(|&v| v as f64 / 8.0).collect();
        let combined: Vec<f64> = j.iter().zip(&c).map(|(a, b)| a + 5.0 * b).collect();
        let best = combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let brute = combined.iter().position(|&v| v == best).unwrap();
        prop_assert_eq!(rerank(&j, &c, 1.0, 5.0).unwrap(), brute);
        let shifted: Vec<f64> = j.iter().map(|v| v + shift as f64).collect();
        prop_assert_eq!(rerank(&shifted, &c, 1.0, 5.0).unwrap(), brute);
    }
}

fn fake_separation(target_gain: f32, leak: f32) -> Separation {
    let tgt = clip(EventClass::ChirpDown, 0.5, 1.5, 3.0, 3);
    let res = clip(EventClass::ClickTrain, 0.5, 2.0, 3.0, 4);
    Separation {
        target: tgt.scaled(target_gain as f64).plus(&res.scaled(leak as f64)).unwrap(),
        residual: res.plus(&tgt.scaled(leak as f64)).unwrap(),
        latent: Tensor::zeros(1, 1),
    }
}

#[test]
fn beam_picks_the_cleanest_candidate() {
    let frames = 75;
    let bundle = PromptBundle::text_only(TextPrompt::for_class(EventClass::ChirpDown), frames);
    // candidate seed 100 + i leaks less as i approaches 5
    let sep = |seed: u64| {
        let i = seed - 100;
        Ok(fake_separation(1.0, (i as f32 - 5.0).abs() * 0.3))
    };
    let r = eval::separate_beam(&bundle, 8, 100, sep).unwrap();
    assert_eq!(r.chosen, 5);
    let set = r.set.unwrap();
    assert_eq!(set.candidates.len(), 8);
    assert_eq!(r.chosen, rerank(&set.judge, &set.clap, 1.0, 5.0).unwrap());
    let one = eval::separate_beam(&bundle, 1, 100, sep).unwrap();
    assert_eq!(one.chosen, 0);
    assert!(one.set.is_none());
    assert_eq!(one.separation, fake_separation(1.0, 1.5));
    assert!(eval::separate_beam(&bundle, 0, 100, sep).is_err());
    assert!(eval::separate_beam(&PromptBundle::dummy(frames), 4, 100, sep).is_err());
}

fn records(a: usize, b: usize, tie: usize) -> Vec<PairwiseRecord> {
    let mut out = Vec::new();
    for (n, v) in [(a, Preference::AWins), (b, Preference::BWins), (tie, Preference::Tie)] {
        for _ in 0..n {
            out.push(PairwiseRecord { id: format!("{}", out.len()), verdict: v, score_a: None, score_b: None });
        }
    }
    out
}

#[test]
fn net_win_rate_examples() {
    assert_eq!(net_win_rate(&records(6, 3, 1)).unwrap(), 0.30);
    assert_eq!(net_win_rate(&records(0, 0, 5)).unwrap(), 0.0);
    assert!(matches!(net_win_rate(&[]), Err(Error::Contract(_))));
    let r = eval::judge_pair("x", 4.0, 3.0, 0.25);
    assert_eq!(r.verdict, Preference::AWins);
    assert_eq!(r.swapped().verdict, Preference::BWins);
    assert_eq!(eval::judge_pair("x", 3.1, 3.0, 0.25).verdict, Preference::Tie);
}

proptest! {
    #[test]
    fn net_win_rate_is_antisymmetric(a in 0usize..30, b in 0usize..30, tie in 0usize..30, seed in 0u64..100) {
        prop_assume!(a + b + tie > 0);
        let r = records(a, b, tie);
        let swapped: Vec<PairwiseRecord> = r.iter().map(PairwiseRecord::swapped).collect();
        let (x, y) = (net_win_rate(&r).unwrap(), net_win_rate(&swapped).unwrap());
        prop_assert_eq!(x, -y);
        prop_assert!((-1.0..=1.0).contains(&x));
        let ci = eval::net_win_rate_ci(&r, 200, seed).unwrap();
        prop_assert_eq!(ci.value, x);
        prop_assert!(ci.ci_low <= x && x <= ci.ci_high);
    }
}

#[test]
fn summary_is_order_independent() {
    let item = |id: &str, v: f64| eval::ItemReport {
        id: id.into(),
        seed: 0,
        skipped: None,
        metrics: Some(eval::ItemMetrics {
            si_sdr_target: v,
            si_sdr_residual: -v,
            si_sdr_mixture: 0.0,
            span_iou: 0.5,
            clap_target: v / 10.0,
            clap_residual: 0.0,
        }),
    };
    let mut items = vec![item("a", 1.0), item("b", 2.0), item("c", 6.0)];
    items.push(eval::ItemReport { id: "d".into(), seed: 0, skipped: Some("unreadable".into()), metrics: None });
    let s = eval::summarize(&items, 7);
    items.reverse();
    let t = eval::summarize(&items, 7);
    assert_eq!(s, t);
    assert_eq!((s.items, s.skipped), (4, 1));
    let (name, est) = &s.metrics[0];
    assert_eq!(name, "si_sdr_target");
    assert!((est.value - 3.0).abs() < 1e-12);
    assert!(est.ci_low <= est.value && est.value <= est.ci_high);
    let empty = eval::summarize(&[], 7);
    assert_eq!((empty.items, empty.skipped), (0, 0));
    assert!(empty.metrics.is_empty());
    let text = eval::report_lines(&items, &s).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().last().unwrap().starts_with("{\"summary\""));
}
