//! Local surrogate explanations for narrative classifiers.
//!
//! A narrative is cut into segments (code descriptions by default). Random
//! subsets of segments are removed, the model is scored on each perturbed
//! text, and a kernel-weighted ridge regression on the keep/drop masks gives
//! one importance per segment.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::NarrativeView;
use crate::error::{Error, Result};
use crate::models::transformer::Transformer;
use crate::scalar::{sigmoid, Scalar};
use crate::subword::SubwordVocab;

pub const MIN_SAMPLES: usize = 50;

/// Anything that maps text to a probability-like score.
pub trait TextScorer {
    fn score_text(&self, text: &str) -> Result<f64>;
}

impl<F: Fn(&str) -> f64> TextScorer for F {
    fn score_text(&self, text: &str) -> Result<f64> {
        Ok(self(text))
    }
}

/// A transformer together with the vocabulary it was trained on.
pub struct NarrativeScorer<'a, T: Scalar> {
    pub model: &'a Transformer<T>,
    pub vocab: &'a SubwordVocab,
}

impl<T: Scalar> TextScorer for NarrativeScorer<'_, T> {
    fn score_text(&self, text: &str) -> Result<f64> {
        let ids = self.vocab.tokenize(text);
        Ok(sigmoid(self.model.logit_ids(&ids)?).f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationUnit {
    /// Pieces between ',' and ';'.
    Segment,
    /// Whitespace-separated words.
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    /// Ridge penalty on the segment coefficients; the intercept is unpenalized.
    pub alpha: f64,
    pub unit: PerturbationUnit,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: 0.25,
            alpha: 1e-6,
            unit: PerturbationUnit::Segment,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    /// Delimiter before this segment in the original text; None for the first.
    pub delimiter: Option<char>,
}

pub fn segment_text(text: &str, unit: PerturbationUnit) -> Vec<Segment> {
    match unit {
        PerturbationUnit::Word => text
            .split_whitespace()
            .enumerate()
            .map(|(i, w)| Segment {
                text: w.to_string(),
                delimiter: (i > 0).then_some(' '),
            })
            .collect(),
        PerturbationUnit::Segment => {
            let mut out = Vec::new();
            let mut pending: Option<char> = None;
            let mut first = true;
            for piece in text.split_inclusive([',', ';']) {
                let (body, delim) = match piece.chars().last() {
                    Some(c @ (',' | ';')) => (&piece[..piece.len() - 1], Some(c)),
                    _ => (piece, None),
                };
                let body = body.trim();
                if !body.is_empty() {
                    out.push(Segment {
                        text: body.to_string(),
                        delimiter: if first { None } else { pending.or(Some(',')) },
                    });
                    first = false;
                    pending = None;
                }
                // a ';' dominates a ',' when empty pieces are skipped
                if let Some(d) = delim {
                    pending = match (pending, d) {
                        (Some(';'), _) => Some(';'),
                        _ => Some(d),
                    };
                }
            }
            out
        }
    }
}

/// Text with only the segments where `keep` is true. A dropped section
/// boundary is carried over to the next kept segment.
pub fn render_masked(segments: &[Segment], keep: &[bool]) -> String {
    let mut out = String::new();
    let mut carried: Option<char> = None;
    let mut any = false;
    for (s, &k) in segments.iter().zip(keep) {
        let d = match (carried, s.delimiter) {
            (Some(';'), _) | (_, Some(';')) => Some(';'),
            (c, d) => d.or(c),
        };
        if !k {
            carried = d;
            continue;
        }
        if any {
            match d {
                Some(';') => out.push_str(" ; "),
                Some(' ') => out.push(' '),
                _ => out.push_str(", "),
            }
        }
        out.push_str(&s.text);
        any = true;
        carried = None;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentWeight {
    pub text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub patient_id: String,
    pub segments: Vec<SegmentWeight>,
    pub intercept: f64,
    /// Model score of the unperturbed text.
    pub score: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Explanation {
    /// Segment indices by decreasing |weight|, earlier segments first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.segments.len()).collect();
        idx.sort_by(|&a, &b| {
            self.segments[b]
                .weight
                .abs()
                .total_cmp(&self.segments[a].weight.abs())
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn top(&self, k: usize) -> Vec<&SegmentWeight> {
        self.ranking().into_iter().take(k).map(|i| &self.segments[i]).collect()
    }

    /// Each segment in brackets with one to three `+` or `-` marks for the
    /// size and sign of its weight relative to the largest.
    pub fn to_text(&self) -> String {
        let max = self.segments.iter().map(|s| s.weight.abs()).fold(0.0, f64::max);
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| {
                let level = if max > 0.0 {
                    ((3.0 * s.weight.abs() / max).ceil() as usize).min(3)
                } else {
                    0
                };
                if level == 0 {
                    format!("[{}]", s.text)
                } else {
                    let mark = if s.weight > 0.0 { "+" } else { "-" };
                    format!("[{} {}]", mark.repeat(level), s.text)
                }
            })
            .collect();
        format!("score {:.4}: {}", self.score, parts.join(" "))
    }
}

fn cosine_distance_to_ones(mask: &[bool]) -> f64 {
    let kept = mask.iter().filter(|&&k| k).count();
    if kept == 0 {
        return 1.0;
    }
    1.0 - (kept as f64 / mask.len() as f64).sqrt()
}

/// Masks: all ones, all zeros, then random masks that drop a uniformly
/// chosen number of segments.
fn sample_masks(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let mut masks = vec![vec![true; d], vec![false; d]];
    while masks.len() < n {
        let drop = rng.random_range(1..=d);
        let mut m = vec![true; d];
        for i in sample(rng, d, drop) {
            m[i] = false;
        }
        masks.push(m);
    }
    masks
}

/// Solves the weighted ridge problem with an unpenalized intercept. Returns
/// (intercept, coefficients).
pub fn weighted_ridge(x: &[Vec<bool>], y: &[f64], w: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    let d = x.first().map_or(0, Vec::len);
    let p = d + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for ((m, &yi), &wi) in x.iter().zip(y).zip(w) {
        row[0] = 1.0;
        for j in 0..d {
            row[j + 1] = f64::from(u8::from(m[j]));
        }
        for r in 0..p {
            if row[r] == 0.0 {
                continue;
            }
            b[r] += wi * row[r] * yi;
            for c in 0..p {
                a[(r, c)] += wi * row[r] * row[c];
            }
        }
    }
    for j in 1..p {
        a[(j, j)] += alpha;
    }
    let sol = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&b))
        .or_else(|| a.lu().solve(&b))
        .ok_or_else(|| Error::Data("surrogate normal equations are singular".into()))?;
    Ok((sol[0], sol.iter().skip(1).copied().collect()))
}

pub fn lime_explain(scorer: &impl TextScorer, narrative: &NarrativeView, cfg: &LimeConfig) -> Result<Explanation> {
    if cfg.n_samples < MIN_SAMPLES {
        return Err(Error::Usage(format!(
            "n_samples must be >= {MIN_SAMPLES}, got {}",
            cfg.n_samples
        )));
    }
    if !(cfg.kernel_width > 0.0) || !(cfg.alpha >= 0.0) {
        return Err(Error::Config("kernel_width must be > 0 and alpha >= 0".into()));
    }
    let segments = segment_text(&narrative.text, cfg.unit);
    if segments.len() < 2 {
        return Err(Error::Data(format!(
            "narrative of patient {} has {} segment(s); need at least 2",
            narrative.patient_id,
            segments.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let masks = sample_masks(segments.len(), cfg.n_samples, &mut rng);
    let mut y = Vec::with_capacity(masks.len());
    let mut w = Vec::with_capacity(masks.len());
    for m in &masks {
        y.push(scorer.score_text(&render_masked(&segments, m))?);
        let dist = cosine_distance_to_ones(m);
        w.push((-dist * dist / (cfg.kernel_width * cfg.kernel_width)).exp());
    }
    let (intercept, coef) = weighted_ridge(&masks, &y, &w, cfg.alpha)?;
    Ok(Explanation {
        patient_id: narrative.patient_id.clone(),
        segments: segments
            .into_iter()
            .zip(coef)
            .map(|(s, weight)| SegmentWeight { text: s.text, weight })
            .collect(),
        intercept,
        score: y[0],
        n_samples: cfg.n_samples,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narrative(text: &str) -> NarrativeView {
        NarrativeView {
            patient_id: "p".into(),
            label: 1,
            text: text.into(),
        }
    }

    #[test]
    fn segments_and_masks_round_trip() {
        let text = "the patient is old. ; a, b ; c, d";
        let s = segment_text(text, PerturbationUnit::Segment);
        let texts: Vec<&str> = s.iter().map(|x| x.text.as_str()).collect();
        assert_eq!(texts, ["the patient is old.", "a", "b", "c", "d"]);
        assert_eq!(render_masked(&s, &[true; 5]), text);
        assert_eq!(render_masked(&s, &[true, false, false, true, true]), "the patient is old. ; c, d");
        assert_eq!(render_masked(&s, &[false, true, false, false, true]), "a ; d");
        assert_eq!(render_masked(&s, &[false; 5]), "");
    }

    #[test]
    fn additive_model_is_recovered_exactly() {
        let weights = [("a", 0.5), ("b", -0.2), ("c", 0.0), ("d", 0.9)];
        let scorer = |t: &str| -> f64 {
            segment_text(t, PerturbationUnit::Segment)
                .iter()
                .map(|s| weights.iter().find(|w| w.0 == s.text).unwrap().1)
                .sum::<f64>()
                + 0.1
        };
        let e = lime_explain(&scorer, &narrative("a, b ; c, d"), &LimeConfig { n_samples: 60, ..Default::default() }).unwrap();
        for (s, (_, w)) in e.segments.iter().zip(weights) {
            assert!((s.weight - w).abs() < 1e-5, "{} {}", s.weight, w);
        }
        assert!(e.segments[2].weight.abs() < 1e-6 * 0.9);
        assert_eq!(e.ranking()[..3], [3, 0, 1]);
        assert!((e.score - 1.3).abs() < 1e-12);
    }

    #[test]
    fn contract_errors() {
        let s = |_: &str| 0.0;
        assert!(matches!(
            lime_explain(&s, &narrative("a, b"), &LimeConfig { n_samples: 49, ..Default::default() }),
            Err(Error::Usage(_))
        ));
        assert!(lime_explain(&s, &narrative("just one"), &LimeConfig::default()).is_err());
    }

    #[test]
    fn text_rendering() {
        let e = Explanation {
            patient_id: "p".into(),
            segments: vec![
                SegmentWeight { text: "x".into(), weight: 0.9 },
                SegmentWeight { text: "y".into(), weight: -0.1 },
                SegmentWeight { text: "z".into(), weight: 0.0 },
            ],
            intercept: 0.0,
            score: 0.5,
            n_samples: 50,
            seed: 0,
        };
        assert_eq!(e.to_text(), "score 0.5000: [+++ x] [- y] [z]");
    }
}
