//! Metrics, span-boosted prompting, candidate re-ranking and pairwise
//! preference aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, class_signature, cosine, EventClass, LatentSeq, Waveform, FRAME_RATE};
use crate::data::{self, clap_score, MixTriplet};
use crate::dit::Separator;
use crate::flow::{self, FlowConfig, Separation};
use crate::prompt::{encode_span, PromptBundle, TextPrompt};
use crate::span::SpanSet;
use crate::{Error, Result};

/// SI-SDR values are clipped to ±60 dB.
pub const SI_SDR_CAP: f64 = 60.0;
/// Frame-probability threshold for predicted spans.
pub const SPAN_THRESHOLD: f64 = 0.3;
pub const DEFAULT_BEAM: usize = 8;
pub const JUDGE_WEIGHT: f64 = 1.0;
pub const CLAP_WEIGHT: f64 = 5.0;
pub const BOOTSTRAP_SAMPLES: usize = 1000;

/// Detector logistic slope and centre on the cosine scale.
const DETECT_SLOPE: f64 = 10.0;
const DETECT_CENTER: f64 = 0.5;

/// Intersection over union of total covered time; two empty sets agree (1.0).
pub fn span_iou(pred: &SpanSet, reference: &SpanSet) -> f64 {
    let (a, b) = (pred.intervals(), reference.intervals());
    let mut inter = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            inter += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let union = pred.total_length() + reference.total_length() - inter;
    if union <= 0.0 {
        1.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Scale-invariant SDR in dB, clipped to ±60.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Contract(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let rr: f64 = reference.samples.iter().map(|&r| (r as f64).powi(2)).sum();
    if rr == 0.0 {
        return Err(Error::Contract("SI-SDR reference is silent".into()));
    }
    let dot: f64 = est
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(&e, &r)| e as f64 * r as f64)
        .sum();
    let alpha = dot / rr;
    let target = alpha * alpha * rr;
    let noise: f64 = est
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(&e, &r)| (e as f64 - alpha * r as f64).powi(2))
        .sum();
    let db = if noise == 0.0 {
        SI_SDR_CAP
    } else if target == 0.0 {
        -SI_SDR_CAP
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

/// Per-frame probability that the prompted class is active.
pub fn frame_probabilities(z: &LatentSeq, class: EventClass) -> Vec<f64> {
    let sig = class_signature(class);
    (0..z.len())
        .map(|r| {
            let mag: Vec<f64> = z.frames.row_slice(r).iter().map(|v| v.abs() as f64).collect();
            let c = cosine(&mag, sig);
            1.0 / (1.0 + (-DETECT_SLOPE * (c - DETECT_CENTER)).exp())
        })
        .collect()
}

/// Frames whose probability exceeds `threshold`, as intervals.
pub fn predict_spans(mix: &Waveform, prompt: &TextPrompt, threshold: f64) -> Result<SpanSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!("span threshold {threshold} outside (0, 1)")));
    }
    let class = prompt
        .class()
        .ok_or_else(|| Error::Usage("span prediction needs a class in the text prompt".into()))?;
    let z = codec::encode(mix)?;
    let active: Vec<bool> = frame_probabilities(&z, class).into_iter().map(|p| p > threshold).collect();
    let spans = SpanSet::from_frames(&active, FRAME_RATE as f64);
    Ok(spans.window(0.0, mix.duration()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Boosted {
    pub separation: Separation,
    pub spans: SpanSet,
}

/// Text prompt plus spans predicted from the mixture.
pub fn separate_text_boosted(
    mix: &Waveform,
    prompt: &TextPrompt,
    config: &FlowConfig,
    model: &Separator<f32>,
    seed: u64,
) -> Result<Boosted> {
    if prompt.is_empty() {
        return Err(Error::Usage("span boosting needs a text prompt".into()));
    }
    let spans = predict_spans(mix, prompt, SPAN_THRESHOLD)?;
    let frames = codec::frames_for(mix.len());
    let bundle = PromptBundle {
        span: encode_span(&spans, frames, FRAME_RATE as f64)?,
        ..PromptBundle::text_only(prompt.clone(), frames)
    };
    Ok(Boosted {
        separation: flow::separate(mix, &bundle, config, model, seed)?,
        spans,
    })
}

/// Index maximizing `w_judge·judge + w_clap·clap`; ties go to the lowest index.
pub fn rerank(judge: &[f64], clap: &[f64], w_judge: f64, w_clap: f64) -> Result<usize> {
    if judge.is_empty() || judge.len() != clap.len() {
        return Err(Error::Contract(format!(
            "rerank needs equal non-empty score lists, got {} and {}",
            judge.len(),
            clap.len()
        )));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (j, c)) in judge.iter().zip(clap).enumerate() {
        let s = w_judge * j + w_clap * c;
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

/// Stand-in judge: mean of target match and residual mismatch.
pub fn toy_judge(target: &Waveform, residual: &Waveform, class: EventClass) -> Result<f64> {
    let t = clap_score(&codec::encode(target)?, class);
    let r = clap_score(&codec::encode(residual)?, class);
    Ok(0.5 * (t + (1.0 - r)))
}

/// Scored separation candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Separation>,
    pub judge: Vec<f64>,
    pub clap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    pub chosen: usize,
    pub separation: Separation,
    pub set: Option<CandidateSet>,
}

/// Seed of beam candidate `i`.
pub fn candidate_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Runs `beam` seeded candidates through `sep` and keeps the best by the
/// (1, 5) judge/CLAP combination. `beam == 1` skips scoring.
pub fn separate_beam(
    bundle: &PromptBundle,
    beam: usize,
    seed: u64,
    sep: impl Fn(u64) -> Result<Separation>,
) -> Result<BeamResult> {
    if beam == 0 {
        return Err(Error::Usage("beam must be at least 1".into()));
    }
    if beam == 1 {
        return Ok(BeamResult {
            chosen: 0,
            separation: sep(seed)?,
            set: None,
        });
    }
    let class = bundle
        .text
        .class()
        .ok_or_else(|| Error::Usage("re-ranking needs a class in the text prompt".into()))?;
    let mut set = CandidateSet {
        candidates: Vec::with_capacity(beam),
        judge: Vec::with_capacity(beam),
        clap: Vec::with_capacity(beam),
    };
    for i in 0..beam {
        let s = sep(candidate_seed(seed, i))?;
        set.judge.push(toy_judge(&s.target, &s.residual, class)?);
        set.clap.push(clap_score(&codec::encode(&s.target)?, class));
        set.candidates.push(s);
    }
    let chosen = rerank(&set.judge, &set.clap, JUDGE_WEIGHT, CLAP_WEIGHT)?;
    Ok(BeamResult {
        chosen,
        separation: set.candidates[chosen].clone(),
        set: Some(set),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    AWins,
    BWins,
    Tie,
}

impl Preference {
    pub fn swapped(self) -> Self {
        match self {
            Preference::AWins => Preference::BWins,
            Preference::BWins => Preference::AWins,
            Preference::Tie => Preference::Tie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    pub id: String,
    pub verdict: Preference,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_b: Option<f64>,
}

impl PairwiseRecord {
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            verdict: self.verdict.swapped(),
            score_a: self.score_b,
            score_b: self.score_a,
        }
    }
}

fn nwr_of(verdicts: impl Iterator<Item = Preference>) -> f64 {
    let (mut a, mut b, mut n) = (0i64, 0i64, 0i64);
    for v in verdicts {
        match v {
            Preference::AWins => a += 1,
            Preference::BWins => b += 1,
            Preference::Tie => {}
        }
        n += 1;
    }
    (a - b) as f64 / n as f64
}

/// `(wins_A − wins_B) / N`, ties counted in `N`.
pub fn net_win_rate(records: &[PairwiseRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("net win rate of no records".into()));
    }
    Ok(nwr_of(records.iter().map(|r| r.verdict)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn percentile_ci(mut stats: Vec<f64>) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let at = |q: f64| stats[((q * (stats.len() - 1) as f64).round() as usize).min(stats.len() - 1)];
    (at(0.025), at(0.975))
}

/// Net win rate with a 95% percentile bootstrap interval.
pub fn net_win_rate_ci(records: &[PairwiseRecord], resamples: usize, seed: u64) -> Result<Estimate> {
    let value = net_win_rate(records)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..resamples.max(1))
        .map(|_| nwr_of((0..records.len()).map(|_| records[rng.random_range(0..records.len())].verdict)))
        .collect();
    let (ci_low, ci_high) = percentile_ci(stats);
    Ok(Estimate { value, ci_low, ci_high })
}

/// Mean with a 95% percentile bootstrap interval.
pub fn mean_ci(values: &[f64], resamples: usize, seed: u64) -> Option<Estimate> {
    if values.is_empty() {
        return None;
    }
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        s / n as f64
    };
    let value = mean(&mut values.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..resamples.max(1))
        .map(|_| mean(&mut (0..values.len()).map(|_| values[rng.random_range(0..values.len())])))
        .collect();
    let (ci_low, ci_high) = percentile_ci(stats);
    Some(Estimate { value, ci_low, ci_high })
}

/// Pairwise verdict from two scalar quality scores.
pub fn judge_pair(id: &str, score_a: f64, score_b: f64, tie_margin: f64) -> PairwiseRecord {
    let verdict = if (score_a - score_b).abs() <= tie_margin {
        Preference::Tie
    } else if score_a > score_b {
        Preference::AWins
    } else {
        Preference::BWins
    };
    PairwiseRecord {
        id: id.to_string(),
        verdict,
        score_a: Some(score_a),
        score_b: Some(score_b),
    }
}

/// Metrics of one evaluated item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub id: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<ItemMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub si_sdr_target: f64,
    pub si_sdr_residual: f64,
    pub si_sdr_mixture: f64,
    pub span_iou: f64,
    pub clap_target: f64,
    pub clap_residual: f64,
}

impl ItemMetrics {
    pub const FIELDS: [&'static str; 6] = [
        "si_sdr_target",
        "si_sdr_residual",
        "si_sdr_mixture",
        "span_iou",
        "clap_target",
        "clap_residual",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.si_sdr_target,
            self.si_sdr_residual,
            self.si_sdr_mixture,
            self.span_iou,
            self.clap_target,
            self.clap_residual,
        ]
    }
}

/// Metrics of a separation against the triplet's ground truth.
pub fn score_separation(t: &MixTriplet, sep: &Separation) -> Result<ItemMetrics> {
    let class = t
        .bundle
        .text
        .class()
        .unwrap_or_else(|| t.target_class());
    Ok(ItemMetrics {
        si_sdr_target: si_sdr(&sep.target, &t.tgt)?,
        si_sdr_residual: si_sdr(&sep.residual, &t.res)?,
        si_sdr_mixture: si_sdr(&t.mix, &t.tgt)?,
        span_iou: span_iou(&data::vad_spans(&sep.target), &t.target_spans()),
        clap_target: clap_score(&codec::encode(&sep.target)?, class),
        clap_residual: clap_score(&codec::encode(&sep.residual)?, class),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub items: usize,
    pub skipped: usize,
    pub metrics: Vec<(String, Estimate)>,
}

/// Aggregates over items in id order, so input order does not matter.
pub fn summarize(items: &[ItemReport], seed: u64) -> Summary {
    let mut sorted: Vec<&ItemReport> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let scored: Vec<ItemMetrics> = sorted.iter().filter_map(|i| i.metrics).collect();
    let metrics = ItemMetrics::FIELDS
        .iter()
        .enumerate()
        .filter_map(|(k, name)| {
            let vals: Vec<f64> = scored.iter().map(|m| m.values()[k]).collect();
            mean_ci(&vals, BOOTSTRAP_SAMPLES, seed).map(|e| (name.to_string(), e))
        })
        .collect();
    Summary {
        items: items.len(),
        skipped: items.len() - scored.len(),
        metrics,
    }
}

/// JSON lines: one record per item (in the given order), then `{"summary": …}`.
pub fn report_lines(items: &[ItemReport], summary: &Summary) -> Result<String> {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&serde_json::json!({ "summary": summary }))?);
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_nwr_is_error() {
        assert!(net_win_rate(&[]).is_err());
    }

    #[test]
    fn rerank_length_mismatch() {
        assert!(rerank(&[0.0], &[0.0, 1.0], 1.0, 5.0).is_err());
        assert!(rerank(&[], &[], 1.0, 5.0).is_err());
    }

    #[test]
    fn si_sdr_silent_reference() {
        let w = Waveform::new(vec![0.0; 8]);
        assert!(si_sdr(&w, &w).is_err());
    }
}
