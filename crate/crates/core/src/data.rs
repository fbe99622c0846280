//! Mixture synthesis, energy VAD spans and the pseudo-label filter.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    self, class_signature, class_signatures, cosine, EventClass, EventSpec, LatentSeq, Waveform, CHANNELS,
    FRAME_RATE, HOP, NUM_CLASSES, SAMPLE_RATE,
};
use crate::prompt::{self, encode_span, PromptBundle, SpanTokens, TextPrompt, VisualFeats, VISUAL_DIM};
use crate::span::SpanSet;
use crate::{Error, Result};

/// Mixtures are peak-normalized to this amplitude.
pub const PEAK: f32 = 0.9;
/// Frames below this RMS level (dBFS, full scale 1.0) are silent.
pub const VAD_THRESHOLD_DB: f64 = -40.0;
/// 250 ms at 25 Hz, rounded up.
pub const MIN_SPAN_FRAMES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    MultiStem,
    TargetPlusNoise,
    SpikySpan,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::MultiStem, Regime::TargetPlusNoise, Regime::SpikySpan];

    pub fn name(self) -> &'static str {
        match self {
            Regime::MultiStem => "multi_stem",
            Regime::TargetPlusNoise => "target_plus_noise",
            Regime::SpikySpan => "spiky_span",
        }
    }

    /// Half-width of the uniform SNR draw in dB.
    pub fn snr_range(self) -> f64 {
        match self {
            Regime::MultiStem => 5.0,
            Regime::TargetPlusNoise | Regime::SpikySpan => 15.0,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Clip length in seconds; the spiky regime needs at least 10 s.
    pub duration: f64,
    /// Inclusive source-count range for the multi-stem regime.
    pub sources: (usize, usize),
    /// Probability that the target is flagged visible.
    pub visual_prob: f64,
    /// Probability of a same-class distractor burst in the spiky regime.
    pub distractor_prob: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            duration: 10.0,
            sources: (2, 4),
            visual_prob: 0.25,
            distractor_prob: 0.5,
        }
    }
}

impl SynthOptions {
    pub fn validate(&self, regime: Regime) -> Result<()> {
        if !(self.duration >= 1.0 && self.duration <= 60.0) {
            return Err(Error::Config(format!("clip duration {} outside [1, 60] s", self.duration)));
        }
        if regime == Regime::SpikySpan && self.duration < 10.0 {
            return Err(Error::Config("spiky_span clips need at least 10 s of ambience".into()));
        }
        if self.sources.0 < 2 || self.sources.1 < self.sources.0 || self.sources.1 > NUM_CLASSES {
            return Err(Error::Config(format!("source range {:?} is invalid", self.sources)));
        }
        for p in [self.visual_prob, self.distractor_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Where a triplet came from; enough to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub target: Vec<EventSpec>,
    pub residual: Vec<EventSpec>,
    /// One draw per rescaled residual stem (a single joint draw for the
    /// noise regimes).
    pub snr_db: Vec<f64>,
    pub visible: bool,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixTriplet {
    pub mix: Waveform,
    pub tgt: Waveform,
    pub res: Waveform,
    pub bundle: PromptBundle,
    pub regime: Regime,
    pub provenance: Provenance,
}

impl MixTriplet {
    pub fn target_class(&self) -> EventClass {
        self.provenance.target[0].class
    }

    /// Ground-truth activity of the target.
    pub fn target_spans(&self) -> SpanSet {
        vad_spans(&self.tgt)
    }
}

/// `g·res` with `g` chosen so that `10·log10(E_tgt / E_{g·res}) = snr_db`.
pub fn rescale_to_snr(tgt: &Waveform, res: &Waveform, snr_db: f64) -> Result<Waveform> {
    Ok(res.scaled(snr_gain(tgt, res, snr_db)?))
}

pub fn snr_gain(tgt: &Waveform, res: &Waveform, snr_db: f64) -> Result<f64> {
    let (et, er) = (tgt.energy(), res.energy());
    if et <= 0.0 || er <= 0.0 {
        return Err(Error::Contract("SNR rescaling needs non-silent target and residual".into()));
    }
    Ok((et / er).sqrt() * 10f64.powf(-snr_db / 20.0))
}

/// `10·log10(E_tgt / E_res)`.
pub fn measured_snr(tgt: &Waveform, res: &Waveform) -> f64 {
    10.0 * (tgt.energy() / res.energy()).log10()
}

fn draw_event(rng: &mut ChaCha8Rng, class: EventClass, total: f64, min_len: f64, max_len: f64) -> EventSpec {
    let fr = FRAME_RATE as f64;
    let frames = (total * fr).floor() as usize;
    let lo = (min_len * fr).ceil() as usize;
    let hi = ((max_len * fr).floor() as usize).clamp(lo, frames);
    let len = rng.random_range(lo..=hi);
    let onset = rng.random_range(0..=frames - len);
    EventSpec {
        class,
        onset: onset as f64 / fr,
        duration: len as f64 / fr,
        amplitude: rng.random_range(0.4..=1.0),
        seed: rng.random(),
    }
}

fn ambience(rng: &mut ChaCha8Rng, total: f64) -> EventSpec {
    let class = EventClass::AMBIENT[rng.random_range(0..EventClass::AMBIENT.len())];
    EventSpec {
        class,
        onset: 0.0,
        duration: total,
        amplitude: rng.random_range(0.4..=1.0),
        seed: rng.random(),
    }
}

fn render(specs: &[EventSpec], total: f64) -> Result<Waveform> {
    let len = (total * SAMPLE_RATE as f64).round() as usize;
    let mut acc = Waveform::silence(len);
    for s in specs {
        acc = acc.plus(&codec::synth_event(s, total)?)?;
    }
    Ok(acc)
}

/// Synthesizes one triplet; a pure function of `(regime, seed, opts)`.
pub fn make_triplet(regime: Regime, seed: u64, opts: &SynthOptions) -> Result<MixTriplet> {
    opts.validate(regime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = opts.duration;
    let range = regime.snr_range();
    let (target, residual, tgt, res, snr_db) = match regime {
        Regime::MultiStem => {
            let n = rng.random_range(opts.sources.0..=opts.sources.1);
            let mut classes = EventClass::ALL.to_vec();
            classes.shuffle(&mut rng);
            let specs: Vec<EventSpec> = classes[..n]
                .iter()
                .map(|&c| draw_event(&mut rng, c, d, 1.0, d))
                .collect();
            let tgt = render(&specs[..1], d)?;
            let mut res = Waveform::silence(tgt.len());
            let mut draws = Vec::new();
            for s in &specs[1..] {
                let stem = render(std::slice::from_ref(s), d)?;
                let snr = rng.random_range(-range..=range);
                res = res.plus(&rescale_to_snr(&tgt, &stem, snr)?)?;
                draws.push(snr);
            }
            (specs[..1].to_vec(), specs[1..].to_vec(), tgt, res, draws)
        }
        Regime::TargetPlusNoise => {
            let class = EventClass::ALL[rng.random_range(0..NUM_CLASSES)];
            let class = if EventClass::AMBIENT.contains(&class) {
                EventClass::SPIKY[rng.random_range(0..EventClass::SPIKY.len())]
            } else {
                class
            };
            let t = draw_event(&mut rng, class, d, 1.0, d);
            let mut amb = ambience(&mut rng, d);
            if amb.class == class {
                amb.class = EventClass::AMBIENT[0];
            }
            let tgt = render(std::slice::from_ref(&t), d)?;
            let snr = rng.random_range(-range..=range);
            let res = rescale_to_snr(&tgt, &render(std::slice::from_ref(&amb), d)?, snr)?;
            (vec![t], vec![amb], tgt, res, vec![snr])
        }
        Regime::SpikySpan => {
            let class = EventClass::SPIKY[rng.random_range(0..EventClass::SPIKY.len())];
            let t = draw_event(&mut rng, class, d, 0.4, 1.5);
            let mut others = vec![ambience(&mut rng, d)];
            if rng.random::<f64>() < opts.distractor_prob {
                // Same-class burst elsewhere: only the span tells it apart.
                for _ in 0..16 {
                    let cand = draw_event(&mut rng, class, d, 0.4, 1.5);
                    let gap = 0.5;
                    if cand.onset >= t.onset + t.duration + gap || cand.onset + cand.duration + gap <= t.onset {
                        others.push(cand);
                        break;
                    }
                }
            }
            let tgt = render(std::slice::from_ref(&t), d)?;
            let snr = rng.random_range(-range..=range);
            let res = rescale_to_snr(&tgt, &render(&others, d)?, snr)?;
            (vec![t], others, tgt, res, vec![snr])
        }
    };
    let visible = rng.random::<f64>() < opts.visual_prob;
    let vis_seed: u64 = rng.random();
    let raw_mix = tgt.plus(&res)?;
    let gain = PEAK as f64 / raw_mix.peak().max(f32::MIN_POSITIVE) as f64;
    let tgt = tgt.scaled(gain);
    let res = res.scaled(gain);
    let mix = tgt.plus(&res)?;

    let frames = codec::frames_for(mix.len());
    let text = TextPrompt::for_class(target[0].class);
    let span = if regime == Regime::SpikySpan {
        encode_span(&vad_spans(&tgt), frames, FRAME_RATE as f64)?
    } else {
        SpanTokens::null(frames)
    };
    let visual = if visible {
        let events: Vec<(EventSpec, bool)> = target
            .iter()
            .map(|s| (s.clone(), true))
            .chain(residual.iter().map(|s| (s.clone(), false)))
            .collect();
        prompt::make_visual_feats(&events, frames, FRAME_RATE as f64, vis_seed)?
    } else {
        VisualFeats::absent(frames)
    };
    Ok(MixTriplet {
        mix,
        tgt,
        res,
        bundle: PromptBundle { text, span, visual },
        regime,
        provenance: Provenance {
            seed,
            target,
            residual,
            snr_db,
            visible,
            gain,
        },
    })
}

/// Two-source multi-stem mixture (a target and one interferer).
pub fn two_event_mixture(seed: u64, duration: f64) -> Result<MixTriplet> {
    let opts = SynthOptions {
        duration,
        sources: (2, 2),
        visual_prob: 0.0,
        ..SynthOptions::default()
    };
    make_triplet(Regime::MultiStem, seed, &opts)
}

/// Per-frame RMS level in dBFS on the latent frame grid.
pub fn frame_levels(w: &Waveform) -> Vec<f64> {
    w.samples
        .chunks(HOP)
        .map(|c| {
            let ms = c.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / c.len() as f64;
            if ms > 0.0 {
                10.0 * ms.log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Energy VAD: frames above −40 dBFS RMS, runs shorter than 7 frames dropped.
pub fn vad_spans(w: &Waveform) -> SpanSet {
    let fr = FRAME_RATE as f64;
    let active: Vec<bool> = frame_levels(w).into_iter().map(|db| db > VAD_THRESHOLD_DB).collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &a) in active.iter().chain(std::iter::once(&false)).enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                match runs.last_mut() {
                    // Runs separated by less than a frame cannot occur on the
                    // frame grid; kept for clarity of the merge rule.
                    Some(last) if s - last.1 < 1 => last.1 = i,
                    _ => runs.push((s, i)),
                }
                start = None;
            }
            _ => {}
        }
    }
    let dur = w.duration();
    let intervals = runs
        .into_iter()
        .filter(|(s, e)| e - s >= MIN_SPAN_FRAMES)
        .map(|(s, e)| (s as f64 / fr, (e as f64 / fr).min(dur)))
        .filter(|(s, e)| e > s)
        .collect();
    SpanSet::new(intervals).expect("VAD runs are disjoint and ordered")
}

/// Scores consumed by the filter gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterScores {
    pub clap_tgt: f64,
    pub clap_res: f64,
    pub aes_pc: f64,
    pub silence_ratio: f64,
    pub mask_coverage: f64,
    pub imagebind: f64,
    pub has_visual: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ClapTarget,
    ClapResidual,
    AestheticsPc,
    SilenceRatio,
    MaskCoverage,
    Imagebind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reasons")]
pub enum Verdict {
    Keep,
    Reject(Vec<RejectReason>),
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

pub const CLAP_TGT_MIN: f64 = 0.35;
pub const CLAP_RES_MAX: f64 = 0.0;
pub const AES_PC_MAX: f64 = 2.5;
pub const SILENCE_RATIO_MAX: f64 = 0.95;
pub const MASK_COVERAGE_MIN: f64 = 0.02;
pub const IMAGEBIND_MIN: f64 = 0.2;

/// Keeps a candidate only if every applicable criterion passes strictly.
pub fn filter_gate(s: &FilterScores) -> Verdict {
    let mut reasons = Vec::new();
    if !(s.clap_tgt > CLAP_TGT_MIN) {
        reasons.push(RejectReason::ClapTarget);
    }
    if !(s.clap_res < CLAP_RES_MAX) {
        reasons.push(RejectReason::ClapResidual);
    }
    if !(s.aes_pc < AES_PC_MAX) {
        reasons.push(RejectReason::AestheticsPc);
    }
    if !(s.silence_ratio < SILENCE_RATIO_MAX) {
        reasons.push(RejectReason::SilenceRatio);
    }
    if s.has_visual {
        if !(s.mask_coverage > MASK_COVERAGE_MIN) {
            reasons.push(RejectReason::MaskCoverage);
        }
        if !(s.imagebind > IMAGEBIND_MIN) {
            reasons.push(RejectReason::Imagebind);
        }
    }
    if reasons.is_empty() {
        Verdict::Keep
    } else {
        Verdict::Reject(reasons)
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Centered cosine between a clip's mean magnitude and a class signature.
/// Centering on the mean signature lets unrelated content score below 0.
pub fn clap_score(z: &LatentSeq, class: EventClass) -> f64 {
    let sigs = class_signatures();
    let mut mean = [0.0; CHANNELS];
    for s in sigs.iter() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / NUM_CLASSES as f64;
        }
    }
    let clip = unit(&codec::mean_magnitude(z));
    let a: Vec<f64> = clip.iter().zip(&mean).map(|(x, m)| x - m).collect();
    let b: Vec<f64> = class_signature(class).iter().zip(&mean).map(|(x, m)| x - m).collect();
    cosine(&a, &b)
}

/// Channel-energy share above which a class counts as present.
pub const CLASS_PRESENCE: f64 = 0.1;

/// Number of classes with a meaningful share of energy, on a 1..=5 scale.
pub fn complexity(z: &LatentSeq) -> f64 {
    let total: f64 = z.frames.data().iter().map(|&v| (v as f64).powi(2)).sum();
    if total == 0.0 {
        return 1.0;
    }
    let count = EventClass::ALL
        .iter()
        .filter(|c| {
            let e: f64 = (0..z.len())
                .flat_map(|r| c.channels().map(|ch| (z.frames.at(r, ch) as f64).powi(2)))
                .sum();
            e / total >= CLASS_PRESENCE
        })
        .count();
    count.clamp(1, 5) as f64
}

/// Visual class evidence above this level marks a frame as covered.
pub const MASK_LEVEL: f64 = 0.5;

/// Deterministic stand-ins for the text-audio, aesthetics, VAD and
/// audio-visual scorers.
pub fn toy_scorers(tgt: &Waveform, res: &Waveform, prompt: &TextPrompt, visual: &VisualFeats) -> Result<FilterScores> {
    let class = prompt
        .class()
        .ok_or_else(|| Error::Validation("filter scoring needs a class token in the prompt".into()))?;
    let zt = codec::encode(tgt)?;
    let zr = codec::encode(res)?;
    let dur = tgt.duration();
    let silence_ratio = if dur > 0.0 {
        (1.0 - vad_spans(tgt).total_length() / dur).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let (mask_coverage, imagebind) = if visual.present && !visual.is_empty() {
        let rows = visual.len();
        let covered = (0..rows)
            .filter(|&r| visual.feats.row_slice(r).iter().any(|&v| v as f64 > MASK_LEVEL))
            .count();
        let mut mean_vis = [0.0; VISUAL_DIM];
        for r in 0..rows {
            for (m, &v) in mean_vis.iter_mut().zip(visual.feats.row_slice(r)) {
                *m += v as f64 / rows as f64;
            }
        }
        // Pairing: audio is mapped into class space by its signature cosines.
        let mag = codec::mean_magnitude(&zt);
        let audio: Vec<f64> = EventClass::ALL.iter().map(|&c| cosine(&mag, class_signature(c))).collect();
        (covered as f64 / rows as f64, cosine(&mean_vis, &audio))
    } else {
        (0.0, 0.0)
    };
    Ok(FilterScores {
        clap_tgt: clap_score(&zt, class),
        clap_res: clap_score(&zr, class),
        aes_pc: complexity(&zt),
        silence_ratio,
        mask_coverage,
        imagebind,
        has_visual: visual.present,
    })
}

/// One corpus record. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub regime: Regime,
    pub seed: u64,
    pub mix: String,
    pub tgt: String,
    pub res: String,
    pub text: String,
    pub target_class: usize,
    pub residual_classes: Vec<usize>,
    pub snr_db: Vec<f64>,
    /// Ground-truth target activity.
    pub spans: SpanSet,
    /// Whether the span prompt is given (spiky regime).
    pub span_prompt: bool,
    /// Visual feature file (`T × 8` f32 LE), when the target is visible.
    pub visual: Option<String>,
    pub verdict: Verdict,
}

/// Writes `<dir>/<id>.{mix,tgt,res}.f32` (+ `.vis.f32`) and returns the record.
pub fn write_triplet(dir: &Path, id: &str, t: &MixTriplet) -> Result<ManifestRecord> {
    let rel = |kind: &str| format!("audio/{id}.{kind}.f32");
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    t.mix.write_raw(&dir.join(rel("mix")))?;
    t.tgt.write_raw(&dir.join(rel("tgt")))?;
    t.res.write_raw(&dir.join(rel("res")))?;
    let visual = if t.bundle.visual.present {
        let p = rel("vis");
        write_f32(&dir.join(&p), t.bundle.visual.feats.data())?;
        Some(p)
    } else {
        None
    };
    let scores = toy_scorers(&t.tgt, &t.res, &t.bundle.text, &t.bundle.visual)?;
    Ok(ManifestRecord {
        id: id.to_string(),
        regime: t.regime,
        seed: t.provenance.seed,
        mix: rel("mix"),
        tgt: rel("tgt"),
        res: rel("res"),
        text: t.bundle.text.to_string(),
        target_class: t.target_class().index(),
        residual_classes: t.provenance.residual.iter().map(|s| s.class.index()).collect(),
        snr_db: t.provenance.snr_db.clone(),
        spans: t.target_spans(),
        span_prompt: t.bundle.has_span(),
        visual,
        verdict: filter_gate(&scores),
    })
}

fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// A manifest file with its directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        Ok(Self {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Reassembles a record's triplet from disk.
    pub fn load_triplet(&self, r: &ManifestRecord) -> Result<MixTriplet> {
        let mix = Waveform::read_raw(&self.dir.join(&r.mix))?;
        let tgt = Waveform::read_raw(&self.dir.join(&r.tgt))?;
        let res = Waveform::read_raw(&self.dir.join(&r.res))?;
        if mix.len() != tgt.len() || mix.len() != res.len() {
            return Err(Error::Validation(format!("record {} has stems of different lengths", r.id)));
        }
        let frames = codec::frames_for(mix.len());
        let text = TextPrompt::parse(&r.text)?;
        let span = if r.span_prompt {
            encode_span(&r.spans, frames, FRAME_RATE as f64)?
        } else {
            SpanTokens::null(frames)
        };
        let visual = match &r.visual {
            Some(p) => {
                let data = read_f32(&self.dir.join(p))?;
                VisualFeats {
                    feats: sepflow_tensor::Tensor::new(frames, VISUAL_DIM, data)?,
                    present: true,
                }
            }
            None => VisualFeats::absent(frames),
        };
        let class = |i: usize| {
            EventClass::from_index(i).ok_or_else(|| Error::Validation(format!("class id {i} out of range")))
        };
        let dur = mix.duration();
        let spec = |c: EventClass| EventSpec {
            class: c,
            onset: 0.0,
            duration: dur,
            amplitude: 0.0,
            seed: 0,
        };
        Ok(MixTriplet {
            mix,
            tgt,
            res,
            bundle: PromptBundle { text, span, visual },
            regime: r.regime,
            provenance: Provenance {
                seed: r.seed,
                target: vec![spec(class(r.target_class)?)],
                residual: r.residual_classes.iter().map(|&i| class(i).map(spec)).collect::<Result<_>>()?,
                snr_db: r.snr_db.clone(),
                visible: r.visual.is_some(),
                gain: 1.0,
            },
        })
    }
}

/// Draws a regime for each of `n` items from normalized weights.
pub fn draw_regimes(weights: &[(Regime, f64)], n: usize, seed: u64) -> Result<Vec<Regime>> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if weights.is_empty() || weights.iter().any(|w| !(w.1 >= 0.0) || !w.1.is_finite()) || total <= 0.0 {
        return Err(Error::Config("regime weights must be non-negative with a positive sum".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            for &(r, w) in weights {
                if u < w {
                    return r;
                }
                u -= w;
            }
            weights.iter().rev().find(|w| w.1 > 0.0).expect("positive weight").0
        })
        .collect())
}

/// Seed of the `i`-th triplet of a corpus.
pub fn item_seed(corpus_seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    rng.set_stream(i as u64 + 1);
    rng.random()
}
