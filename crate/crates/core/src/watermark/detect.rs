use serde::{Deserialize, Serialize};

use super::generate::{check_sizes, check_tokens};
use super::WatermarkParams;
use crate::error::Result;
use crate::lm::MeasurementModel;
use crate::semantics::{PrefixEmbedder, SemanticKey};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionStatus {
    Ok,
    /// No potential watermarked token, so no score.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub status: DetectionStatus,
    /// `sum(delta * vhat) / |W|`, absent when inconclusive.
    pub score: Option<f64>,
    pub text_len: usize,
    /// The text is no longer than `M`, so every token was keyed by the opening sentence.
    pub short_text: bool,
    /// Zero-based indices of the potential watermarked tokens `W`.
    pub positions: Vec<usize>,
    /// `delta * vhat` for each entry of `positions`.
    pub contributions: Vec<f64>,
    pub green_count: usize,
    pub alpha: f64,
    pub delta: f64,
    pub measure_threshold: usize,
}

impl DetectionReport {
    pub fn watermarked_count(&self) -> usize {
        self.positions.len()
    }

    /// Fraction of `W` that is green.
    pub fn green_fraction(&self) -> Option<f64> {
        (!self.positions.is_empty()).then(|| self.green_count as f64 / self.positions.len() as f64)
    }
}

/// Green-token percentages of a text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenFractions {
    /// Among the potential watermarked tokens `W`.
    pub among_watermarked: Option<f64>,
    /// Among all tokens, each judged against the green list of its own prefix.
    pub all_tokens: Option<f64>,
}

struct Scan {
    report: DetectionReport,
    all_green: usize,
}

fn scan(
    text: &[TokenId],
    mm: &dyn MeasurementModel,
    key: &SemanticKey,
    wp: &WatermarkParams,
    all_positions: bool,
) -> Result<Scan> {
    let v = key.vocab_size();
    check_sizes(&[("mapper", v), ("measurement model", mm.vocab_size())])?;
    wp.validate(v)?;
    check_tokens(text, v)?;

    let opening = key.green_list(&wp.opening);
    let mut prefix = PrefixEmbedder::new(&key.embedder);
    let mut positions = Vec::new();
    let mut contributions = Vec::new();
    let mut green_count = 0;
    let mut all_green = 0;

    for (i, &tok) in text.iter().enumerate() {
        let t = i + 1;
        let in_w = t <= wp.measure_threshold || mm.entropy(&text[..i]) >= wp.alpha;
        if in_w || all_positions {
            let green = if t <= wp.measure_threshold {
                opening.contains(tok)
            } else {
                key.green_list_for_embedding(&prefix.embedding()).contains(tok)
            };
            all_green += green as usize;
            if in_w {
                positions.push(i);
                contributions.push(if green { wp.delta } else { 0.0 });
                green_count += green as usize;
            }
        }
        prefix.push(tok);
    }

    let (status, score) = if positions.is_empty() {
        (DetectionStatus::Inconclusive, None)
    } else {
        let sum: f64 = contributions.iter().sum();
        (DetectionStatus::Ok, Some(sum / positions.len() as f64))
    };
    Ok(Scan {
        report: DetectionReport {
            status,
            score,
            text_len: text.len(),
            short_text: text.len() <= wp.measure_threshold,
            positions,
            contributions,
            green_count,
            alpha: wp.alpha,
            delta: wp.delta,
            measure_threshold: wp.measure_threshold,
        },
        all_green,
    })
}

/// Model- and prompt-agnostic detection: replays the entropy gate over
/// `text` and averages `delta * vhat` of the tokens it selects.
pub fn detect(
    text: &[TokenId],
    mm: &dyn MeasurementModel,
    key: &SemanticKey,
    wp: &WatermarkParams,
) -> Result<DetectionReport> {
    Ok(scan(text, mm, key, wp, false)?.report)
}

pub fn green_fractions(
    text: &[TokenId],
    mm: &dyn MeasurementModel,
    key: &SemanticKey,
    wp: &WatermarkParams,
) -> Result<GreenFractions> {
    let s = scan(text, mm, key, wp, true)?;
    Ok(GreenFractions {
        among_watermarked: s.report.green_fraction(),
        all_tokens: (!text.is_empty()).then(|| s.all_green as f64 / text.len() as f64),
    })
}
