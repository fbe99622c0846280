//! Time interval sets used for span prompts, VAD output and SpanIoU.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Sorted, pairwise-disjoint half-open `[start, end)` intervals in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpanSet {
    intervals: Vec<(f64, f64)>,
}

impl SpanSet {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(s, e)) in intervals.iter().enumerate() {
            if !(s.is_finite() && e.is_finite()) || s < 0.0 {
                return Err(Error::Validation(format!("interval {i} [{s}, {e}) is malformed")));
            }
            if e <= s {
                return Err(Error::Validation(format!("interval {i} [{s}, {e}) is inverted or empty")));
            }
            if i > 0 && s < intervals[i - 1].1 {
                return Err(Error::Validation(format!(
                    "interval {i} [{s}, {e}) overlaps or precedes its predecessor"
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(s, e)| e - s).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(s, e)| s <= t && t < e)
    }

    /// Maximal runs of `true` frames as intervals on the frame grid.
    pub fn from_frames(active: &[bool], frame_rate: f64) -> Self {
        let mut intervals = Vec::new();
        let mut run_start = None;
        for (t, &a) in active.iter().chain(std::iter::once(&false)).enumerate() {
            match (a, run_start) {
                (true, None) => run_start = Some(t),
                (false, Some(s)) => {
                    intervals.push((s as f64 / frame_rate, t as f64 / frame_rate));
                    run_start = None;
                }
                _ => {}
            }
        }
        Self { intervals }
    }

    /// The part of the set inside `[start, end)`, shifted so `start` maps to 0.
    pub fn window(&self, start: f64, end: f64) -> Self {
        let intervals = self
            .intervals
            .iter()
            .filter_map(|&(s, e)| {
                let (a, b) = (s.max(start), e.min(end));
                (b > a).then_some((a - start, b - start))
            })
            .collect();
        Self { intervals }
    }
}

impl Serialize for SpanSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.intervals.iter().map(|&(s, e)| [s, e]).collect();
        pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpanSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(deserializer)?;
        SpanSet::new(pairs.into_iter().map(|[s, e]| (s, e)).collect()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_overlap_and_inversion() {
        assert!(SpanSet::new(vec![(0.0, 1.0), (0.5, 2.0)]).is_err());
        assert!(SpanSet::new(vec![(1.0, 0.5)]).is_err());
        assert!(SpanSet::new(vec![(-0.1, 0.5)]).is_err());
        assert!(SpanSet::new(vec![(0.0, 1.0), (1.0, 2.0)]).is_ok());
    }

    #[test]
    fn runs_from_frames() {
        let s = SpanSet::from_frames(&[false, true, true, false, true], 25.0);
        assert_eq!(s.intervals(), &[(0.04, 0.12), (0.16, 0.2)]);
    }

    #[test]
    fn json_is_array_of_pairs() {
        let s = SpanSet::new(vec![(0.5, 1.25)]).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, "[[0.5,1.25]]");
        let back: SpanSet = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SpanSet>("[[2.0,1.0]]").is_err());
    }

    #[test]
    fn window_clips_and_shifts() {
        let s = SpanSet::new(vec![(0.5, 1.5), (3.0, 4.0)]).unwrap();
        assert_eq!(s.window(1.0, 3.5).intervals(), &[(0.0, 0.5), (2.0, 2.5)]);
    }
}
