//! Exactly invertible frame codec and the parametric event generator.
//!
//! Each 320-sample frame (40 ms at 8 kHz) is projected onto 16 rows of an
//! orthonormal DCT-II basis. The generator only ever produces frames inside
//! that 16-dimensional subspace, so `decode(encode(x)) == x` for every
//! generated source and every mixture of them.
//!
//! Codec bin `j` is DCT bin `8 + 16j`, i.e. a cosine at `100 + 200j` Hz. Event
//! class `c` owns channels `2c` and `2c + 1`:
//!
//! | class            | Hz        | per-frame pattern                        |
//! |------------------|-----------|------------------------------------------|
//! | sine-burst       | 100, 300  | steady, 1.0 : 0.3                        |
//! | chirp-up         | 500, 700  | energy moves low → high bin              |
//! | chirp-down       | 900, 1100 | energy moves high → low bin              |
//! | am-tone          | 1300,1500 | 4 Hz amplitude modulation                |
//! | noise-burst      | 1700,1900 | Gaussian coefficients                    |
//! | click-train      | 2100,2300 | alternating loud / quiet frames          |
//! | sustained-tone   | 2500,2700 | steady, equal weight                     |
//! | sustained-noise  | 2900,3100 | low-level Gaussian coefficients          |

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sepflow_tensor::Tensor;

use crate::error::contract;
use crate::span::SpanSet;
use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 8000;
pub const FRAME_RATE: u32 = 25;
pub const HOP: usize = (SAMPLE_RATE / FRAME_RATE) as usize;
pub const CHANNELS: usize = 16;
pub const NUM_CLASSES: usize = 8;

const FIRST_BIN: usize = 8;
const BIN_STRIDE: usize = 16;
/// A latent value of 1 on one channel gives a unit-amplitude cosine.
const GAIN: f64 = 12.649_110_640_673_518; // sqrt(HOP / 2)

fn basis() -> &'static [[f64; HOP]; CHANNELS] {
    static BASIS: OnceLock<Box<[[f64; HOP]; CHANNELS]>> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = Box::new([[0.0; HOP]; CHANNELS]);
        let norm = (2.0 / HOP as f64).sqrt();
        for (j, row) in b.iter_mut().enumerate() {
            let k = (FIRST_BIN + BIN_STRIDE * j) as f64;
            for (n, v) in row.iter_mut().enumerate() {
                *v = norm * (PI * (n as f64 + 0.5) * k / HOP as f64).cos();
            }
        }
        b
    })
}

/// Centre frequency in Hz of codec channel `j`.
pub fn channel_frequency(j: usize) -> f64 {
    (FIRST_BIN + BIN_STRIDE * j) as f64 * SAMPLE_RATE as f64 / (2.0 * HOP as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn silence(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, g: f64) -> Self {
        Self::new(self.samples.iter().map(|&x| (x as f64 * g) as f32).collect())
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        contract!(
            self.len() == other.len(),
            "cannot add waveforms of {} and {} samples",
            self.len(),
            other.len()
        );
        Ok(Self::new(
            self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self::new(self.samples[start..end].to_vec())
    }

    /// Writes samples as raw little-endian f32.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 4);
        for s in &self.samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format(format!(
                "{} holds {} bytes, not a whole number of f32 samples",
                path.display(),
                bytes.len()
            )));
        }
        Ok(Self::new(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    }
}

/// `T × C` latent frames at 25 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeq {
    pub frames: Tensor<f32>,
}

impl LatentSeq {
    pub fn new(frames: Tensor<f32>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.cols()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / FRAME_RATE as f64
    }
}

/// Number of latent frames for `samples` samples (partial frames are padded).
pub fn frames_for(samples: usize) -> usize {
    samples.div_ceil(HOP)
}

pub fn encode(w: &Waveform) -> Result<LatentSeq> {
    contract!(!w.is_empty(), "cannot encode an empty waveform");
    contract!(
        w.sample_rate == SAMPLE_RATE,
        "codec expects {SAMPLE_RATE} Hz audio, got {}",
        w.sample_rate
    );
    let t = frames_for(w.len());
    let b = basis();
    let mut data = Vec::with_capacity(t * CHANNELS);
    let mut frame = [0.0f64; HOP];
    for f in 0..t {
        let start = f * HOP;
        for (n, v) in frame.iter_mut().enumerate() {
            *v = w.samples.get(start + n).map_or(0.0, |&x| x as f64);
        }
        for row in b.iter() {
            let dot: f64 = row.iter().zip(&frame).map(|(a, x)| a * x).sum();
            data.push((dot / GAIN) as f32);
        }
    }
    Ok(LatentSeq::new(Tensor::new(t, CHANNELS, data)?))
}

fn synthesize(latent: &[f64], frames: usize) -> Vec<f64> {
    let b = basis();
    let mut out = vec![0.0f64; frames * HOP];
    for f in 0..frames {
        let dst = &mut out[f * HOP..(f + 1) * HOP];
        for (j, row) in b.iter().enumerate() {
            let z = latent[f * CHANNELS + j] * GAIN;
            if z != 0.0 {
                for (d, &v) in dst.iter_mut().zip(row.iter()) {
                    *d += z * v;
                }
            }
        }
    }
    out
}

pub fn decode(z: &LatentSeq) -> Result<Waveform> {
    contract!(
        z.channels() == CHANNELS,
        "decoder expects {CHANNELS} channels, got {}",
        z.channels()
    );
    let latent: Vec<f64> = z.frames.data().iter().map(|&v| v as f64).collect();
    Ok(Waveform::new(
        synthesize(&latent, z.len()).into_iter().map(|x| x as f32).collect(),
    ))
}

/// Decodes and trims to `len` samples.
pub fn decode_len(z: &LatentSeq, len: usize) -> Result<Waveform> {
    let mut w = decode(z)?;
    contract!(w.len() >= len, "latent covers {} samples, need {len}", w.len());
    w.samples.truncate(len);
    Ok(w)
}

/// Per-frame magnitude features `|z|`, the toy event-detector embedding.
pub fn frame_features(z: &LatentSeq) -> Tensor<f32> {
    z.frames.map(f32::abs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventClass {
    SineBurst,
    ChirpUp,
    ChirpDown,
    AmTone,
    NoiseBurst,
    ClickTrain,
    SustainedTone,
    SustainedNoise,
}

impl EventClass {
    pub const ALL: [EventClass; NUM_CLASSES] = [
        EventClass::SineBurst,
        EventClass::ChirpUp,
        EventClass::ChirpDown,
        EventClass::AmTone,
        EventClass::NoiseBurst,
        EventClass::ClickTrain,
        EventClass::SustainedTone,
        EventClass::SustainedNoise,
    ];

    /// Classes that make short, discrete events.
    pub const SPIKY: [EventClass; 5] = [
        EventClass::SineBurst,
        EventClass::ChirpUp,
        EventClass::ChirpDown,
        EventClass::NoiseBurst,
        EventClass::ClickTrain,
    ];

    /// Continuous background classes.
    pub const AMBIENT: [EventClass; 2] = [EventClass::SustainedTone, EventClass::SustainedNoise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::SineBurst => "sine-burst",
            EventClass::ChirpUp => "chirp-up",
            EventClass::ChirpDown => "chirp-down",
            EventClass::AmTone => "am-tone",
            EventClass::NoiseBurst => "noise-burst",
            EventClass::ClickTrain => "click-train",
            EventClass::SustainedTone => "sustained-tone",
            EventClass::SustainedNoise => "sustained-noise",
        }
    }

    /// The two codec channels this class occupies.
    pub fn channels(self) -> [usize; 2] {
        [2 * self.index(), 2 * self.index() + 1]
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown event class {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub class: EventClass,
    pub onset: f64,
    pub duration: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl EventSpec {
    /// Frames fully inside `[onset, onset + duration)`; the event sounds only there.
    pub fn active_frames(&self) -> std::ops::Range<usize> {
        let fr = FRAME_RATE as f64;
        let start = (self.onset * fr - 1e-9).ceil().max(0.0) as usize;
        let end = ((self.onset + self.duration) * fr + 1e-9).floor().max(0.0) as usize;
        start..end.max(start)
    }

    pub fn active_span(&self) -> SpanSet {
        let r = self.active_frames();
        if r.is_empty() {
            return SpanSet::empty();
        }
        let fr = FRAME_RATE as f64;
        SpanSet::new(vec![(r.start as f64 / fr, r.end as f64 / fr)]).unwrap_or_default()
    }

    fn validate(&self, total_duration: f64) -> Result<()> {
        contract!(self.onset >= 0.0, "event onset {} is negative", self.onset);
        contract!(self.duration > 0.0, "event duration {} is not positive", self.duration);
        contract!(
            (0.0..=1.0).contains(&self.amplitude),
            "event amplitude {} outside [0, 1]",
            self.amplitude
        );
        contract!(
            self.onset + self.duration <= total_duration + 1e-9,
            "event [{}, {}) overruns a {total_duration} s clip",
            self.onset,
            self.onset + self.duration
        );
        Ok(())
    }
}

fn total_frames(total_duration: f64) -> usize {
    frames_for((total_duration * SAMPLE_RATE as f64).round() as usize)
}

/// Latent frames of a single event (`T × C`, f64), before decoding.
pub fn event_latent(spec: &EventSpec, total_duration: f64) -> Result<Tensor<f64>> {
    spec.validate(total_duration)?;
    let t = total_frames(total_duration);
    let mut z = Tensor::<f64>::zeros(t, CHANNELS);
    let active = spec.active_frames();
    let n = active.len();
    if n == 0 || spec.amplitude == 0.0 {
        return Ok(z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signs: [f64; 2] = [
        if rng.random::<bool>() { 1.0 } else { -1.0 },
        if rng.random::<bool>() { 1.0 } else { -1.0 },
    ];
    let [lo, hi] = spec.class.channels();
    let denom = (n.max(2) - 1) as f64;
    for (i, f) in active.enumerate() {
        let u = i as f64 / denom;
        let secs = f as f64 / FRAME_RATE as f64;
        let pair = match spec.class {
            EventClass::SineBurst => [1.0, 0.3],
            EventClass::ChirpUp => [(0.5 * PI * u).cos(), (0.5 * PI * u).sin()],
            EventClass::ChirpDown => [(0.5 * PI * u).sin(), (0.5 * PI * u).cos()],
            EventClass::AmTone => {
                let m = (1.0 + 0.8 * (2.0 * PI * 4.0 * secs).sin()) / 1.8;
                [m, 0.5 * m]
            }
            EventClass::NoiseBurst => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [0.6 * a, 0.6 * b]
            }
            EventClass::ClickTrain => {
                if i % 2 == 0 {
                    [1.0, 0.5]
                } else {
                    [0.15, 0.1]
                }
            }
            EventClass::SustainedTone => [0.8, 0.8],
            EventClass::SustainedNoise => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [0.4 * a, 0.4 * b]
            }
        };
        let row = &mut z.data_mut()[f * CHANNELS..(f + 1) * CHANNELS];
        row[lo] = spec.amplitude * signs[0] * pair[0];
        row[hi] = spec.amplitude * signs[1] * pair[1];
    }
    Ok(z)
}

/// Renders one event into a clip of `total_duration` seconds.
pub fn synth_event(spec: &EventSpec, total_duration: f64) -> Result<Waveform> {
    let z = event_latent(spec, total_duration)?;
    let len = (total_duration * SAMPLE_RATE as f64).round() as usize;
    let mut samples: Vec<f32> = synthesize(z.data(), z.rows()).into_iter().map(|x| x as f32).collect();
    samples.truncate(len);
    Ok(Waveform::new(samples))
}

/// Unit-norm mean magnitude of clean reference events, one per class.
pub fn class_signatures() -> &'static [[f64; CHANNELS]; NUM_CLASSES] {
    static SIGS: OnceLock<[[f64; CHANNELS]; NUM_CLASSES]> = OnceLock::new();
    SIGS.get_or_init(|| {
        let mut sigs = [[0.0; CHANNELS]; NUM_CLASSES];
        for class in EventClass::ALL {
            let spec = EventSpec {
                class,
                onset: 0.0,
                duration: 2.0,
                amplitude: 1.0,
                seed: 0,
            };
            let z = event_latent(&spec, 2.0).expect("reference event is valid");
            let sig = &mut sigs[class.index()];
            for r in 0..z.rows() {
                for (c, s) in sig.iter_mut().enumerate() {
                    *s += z.at(r, c).abs();
                }
            }
            let norm = sig.iter().map(|v| v * v).sum::<f64>().sqrt();
            sig.iter_mut().for_each(|v| *v /= norm);
        }
        sigs
    })
}

pub fn class_signature(class: EventClass) -> &'static [f64; CHANNELS] {
    &class_signatures()[class.index()]
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean per-channel magnitude over the frames of a clip.
pub fn mean_magnitude(z: &LatentSeq) -> [f64; CHANNELS] {
    let mut m = [0.0; CHANNELS];
    let t = z.len().max(1) as f64;
    for r in 0..z.len() {
        for (c, v) in m.iter_mut().enumerate() {
            *v += z.frames.at(r, c).abs() as f64 / t;
        }
    }
    m
}

/// Nearest class signature (cosine) to a clip's mean magnitude.
pub fn classify(z: &LatentSeq) -> EventClass {
    let m = mean_magnitude(z);
    let mut best = (EventClass::SineBurst, f64::NEG_INFINITY);
    for class in EventClass::ALL {
        let s = cosine(&m, class_signature(class));
        if s > best.1 {
            best = (class, s);
        }
    }
    best.0
}
