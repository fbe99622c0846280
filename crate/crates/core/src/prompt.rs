//! Text, span and visual prompts, their dummy forms, and conditioning dropout.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sepflow_tensor::{Graph, Real, Tensor, Var};

use crate::codec::{EventClass, EventSpec, NUM_CLASSES};
use crate::params::Binder;
use crate::span::SpanSet;
use crate::{Error, Result};

pub const MODIFIERS: [&str; 4] = ["loud", "soft", "brief", "long"];
pub const EMPTY_TOKEN: u32 = (NUM_CLASSES + MODIFIERS.len()) as u32;
pub const VOCAB_SIZE: usize = NUM_CLASSES + MODIFIERS.len() + 1;
pub const TEXT_DIM: usize = 32;
pub const SPAN_DIM: usize = 8;
pub const VISUAL_DIM: usize = 8;
pub const VISUAL_NOISE_STD: f64 = 0.05;

/// Token ids over the class labels, a few modifiers and `EMPTY`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextPrompt {
    tokens: Vec<u32>,
}

impl TextPrompt {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Validation("text prompt has no tokens".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::Contract(format!("token id {bad} is outside the vocabulary")));
        }
        if tokens.len() > 1 && tokens.contains(&EMPTY_TOKEN) {
            return Err(Error::Validation("EMPTY must appear alone".into()));
        }
        Ok(Self { tokens })
    }

    pub fn empty() -> Self {
        Self {
            tokens: vec![EMPTY_TOKEN],
        }
    }

    pub fn for_class(class: EventClass) -> Self {
        Self {
            tokens: vec![class.index() as u32],
        }
    }

    /// Parses whitespace-separated words; an empty string is the dummy prompt.
    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Ok(Self::empty());
        }
        let tokens = words
            .iter()
            .map(|w| {
                if let Ok(c) = w.parse::<EventClass>() {
                    Ok(c.index() as u32)
                } else if let Some(i) = MODIFIERS.iter().position(|m| m == w) {
                    Ok((NUM_CLASSES + i) as u32)
                } else {
                    Err(Error::Validation(format!("word {w:?} is not in the prompt vocabulary")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens == [EMPTY_TOKEN]
    }

    /// The first class label in the prompt.
    pub fn class(&self) -> Option<EventClass> {
        self.tokens
            .iter()
            .find_map(|&t| EventClass::from_index(t as usize))
    }
}

impl fmt::Display for TextPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return Ok(());
        }
        let words: Vec<&str> = self
            .tokens
            .iter()
            .map(|&t| match EventClass::from_index(t as usize) {
                Some(c) => c.name(),
                None => MODIFIERS[t as usize - NUM_CLASSES],
            })
            .collect();
        f.write_str(&words.join(" "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpanToken {
    Sil = 0,
    Act = 1,
    Null = 2,
}

/// Frame-synchronous span tokens; `Null` only ever fills the whole sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanTokens {
    seq: Vec<SpanToken>,
}

impl SpanTokens {
    pub fn null(frames: usize) -> Self {
        Self {
            seq: vec![SpanToken::Null; frames],
        }
    }

    pub fn new(seq: Vec<SpanToken>) -> Result<Self> {
        let nulls = seq.iter().filter(|&&t| t == SpanToken::Null).count();
        if nulls != 0 && nulls != seq.len() {
            return Err(Error::Validation("NULL span tokens cannot mix with SIL/ACT".into()));
        }
        Ok(Self { seq })
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn is_null(&self) -> bool {
        self.seq.first() == Some(&SpanToken::Null)
    }

    pub fn tokens(&self) -> &[SpanToken] {
        &self.seq
    }

    pub fn ids(&self) -> Vec<usize> {
        self.seq.iter().map(|&t| t as usize).collect()
    }

    /// Maximal ACT runs as intervals.
    pub fn to_spans(&self, frame_rate: f64) -> SpanSet {
        let active: Vec<bool> = self.seq.iter().map(|&t| t == SpanToken::Act).collect();
        SpanSet::from_frames(&active, frame_rate)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            seq: self.seq[start..end].to_vec(),
        }
    }
}

/// Frame `t` is ACT iff its centre `(t + 0.5) / frame_rate` lies in some interval.
pub fn encode_span(spans: &SpanSet, frames: usize, frame_rate: f64) -> Result<SpanTokens> {
    let limit = frames as f64 / frame_rate;
    if let Some(&(s, e)) = spans.intervals().iter().find(|&&(_, e)| e > limit + 1e-9) {
        return Err(Error::Validation(format!(
            "interval [{s}, {e}) extends past the clip end {limit}"
        )));
    }
    let seq = (0..frames)
        .map(|t| {
            if spans.contains((t as f64 + 0.5) / frame_rate) {
                SpanToken::Act
            } else {
                SpanToken::Sil
            }
        })
        .collect();
    Ok(SpanTokens { seq })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeats {
    pub feats: Tensor<f32>,
    pub present: bool,
}

impl VisualFeats {
    pub fn absent(frames: usize) -> Self {
        Self {
            feats: Tensor::zeros(frames, VISUAL_DIM),
            present: false,
        }
    }

    pub fn len(&self) -> usize {
        self.feats.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.feats.rows() == 0
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            feats: self.feats.slice_rows(start, end),
            present: self.present,
        }
    }
}

/// Oracle visual features: the class one-hot of every visible event on the
/// frames where it is active, plus N(0, 0.05²) noise on every frame.
pub fn make_visual_feats(
    events: &[(EventSpec, bool)],
    frames: usize,
    frame_rate: f64,
    seed: u64,
) -> Result<VisualFeats> {
    let mut feats = Tensor::<f32>::zeros(frames, VISUAL_DIM);
    for (spec, visible) in events {
        if !visible {
            continue;
        }
        let end = (spec.onset + spec.duration).min(frames as f64 / frame_rate);
        if end <= spec.onset {
            continue;
        }
        let span = SpanSet::new(vec![(spec.onset, end)])?;
        let tokens = encode_span(&span, frames, frame_rate)?;
        for (t, &tok) in tokens.tokens().iter().enumerate() {
            if tok == SpanToken::Act {
                feats.data_mut()[t * VISUAL_DIM + spec.class.index()] = 1.0;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, VISUAL_NOISE_STD).expect("valid std");
    for v in feats.data_mut() {
        *v += noise.sample(&mut rng) as f32;
    }
    Ok(VisualFeats {
        feats,
        present: true,
    })
}

/// All conditioning for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBundle {
    pub text: TextPrompt,
    pub span: SpanTokens,
    pub visual: VisualFeats,
}

impl PromptBundle {
    /// Every modality replaced by its dummy.
    pub fn dummy(frames: usize) -> Self {
        Self {
            text: TextPrompt::empty(),
            span: SpanTokens::null(frames),
            visual: VisualFeats::absent(frames),
        }
    }

    pub fn text_only(text: TextPrompt, frames: usize) -> Self {
        Self {
            text,
            ..Self::dummy(frames)
        }
    }

    pub fn frames(&self) -> usize {
        self.span.len()
    }

    pub fn has_text(&self) -> bool {
        !self.text.is_empty()
    }

    pub fn has_span(&self) -> bool {
        !self.span.is_null()
    }

    pub fn has_visual(&self) -> bool {
        self.visual.present
    }

    pub fn any_present(&self) -> bool {
        self.has_text() || self.has_span() || self.has_visual()
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.span.len() != frames || self.visual.len() != frames {
            return Err(Error::Contract(format!(
                "prompt streams have {} span and {} visual frames, expected {frames}",
                self.span.len(),
                self.visual.len()
            )));
        }
        if !self.visual.present && self.visual.feats.max_abs() != 0.0 {
            return Err(Error::Contract("absent visual stream must be all zero".into()));
        }
        Ok(())
    }

    /// Frame window `[start, end)`; text is shared.
    pub fn window(&self, start: usize, end: usize) -> Self {
        Self {
            text: self.text.clone(),
            span: self.span.slice(start, end),
            visual: self.visual.slice(start, end),
        }
    }
}

/// Independently replaces each present modality by its dummy with the given
/// probability. Three uniforms are always drawn so the stream stays aligned.
pub fn apply_condition_dropout(
    bundle: &PromptBundle,
    p_text: f64,
    p_span: f64,
    p_visual: f64,
    rng: &mut impl Rng,
) -> PromptBundle {
    let frames = bundle.frames();
    let (u_text, u_span, u_visual): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let mut out = bundle.clone();
    if bundle.has_text() && u_text < p_text {
        out.text = TextPrompt::empty();
    }
    if bundle.has_span() && u_span < p_span {
        out.span = SpanTokens::null(frames);
    }
    if bundle.has_visual() && u_visual < p_visual {
        out.visual = VisualFeats::absent(frames);
    }
    out
}

/// Learned lookup of each text token, `N × TEXT_DIM`.
pub fn embed_text<F: Real>(g: &mut Graph<F>, params: &mut Binder<'_, F>, prompt: &TextPrompt) -> Result<Var> {
    let table = params.var(g, "prompt.text_embedding")?;
    let ids: Vec<usize> = prompt.tokens().iter().map(|&t| t as usize).collect();
    Ok(g.gather(table, &ids)?)
}

/// Per-frame lookup of span tokens, `T × SPAN_DIM`.
pub fn embed_span<F: Real>(g: &mut Graph<F>, params: &mut Binder<'_, F>, tokens: &SpanTokens) -> Result<Var> {
    let table = params.var(g, "prompt.span_embedding")?;
    Ok(g.gather(table, &tokens.ids())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let p = TextPrompt::parse("loud chirp-up").unwrap();
        assert_eq!(p.to_string(), "loud chirp-up");
        assert_eq!(p.class(), Some(EventClass::ChirpUp));
        assert!(TextPrompt::parse("").unwrap().is_empty());
        assert!(TextPrompt::parse("barking dog").is_err());
    }

    #[test]
    fn empty_token_must_be_alone() {
        assert!(TextPrompt::new(vec![0, EMPTY_TOKEN]).is_err());
        assert!(TextPrompt::new(vec![]).is_err());
        assert!(matches!(TextPrompt::new(vec![99]), Err(Error::Contract(_))));
    }

    #[test]
    fn null_cannot_mix() {
        assert!(SpanTokens::new(vec![SpanToken::Null, SpanToken::Act]).is_err());
        assert!(SpanTokens::new(vec![SpanToken::Null; 3]).unwrap().is_null());
    }

    #[test]
    fn span_past_clip_end_is_rejected() {
        let s = SpanSet::new(vec![(0.0, 0.5)]).unwrap();
        assert!(encode_span(&s, 10, 25.0).is_err());
    }
}
