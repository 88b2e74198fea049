//! Language, quality and speaking-rate gates applied to transcribed segments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("quartiles of an empty list")]
    EmptyInput,
    #[error("transcript has no non-whitespace characters")]
    EmptyTranscript,
    #[error("invalid filter policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrResult {
    pub transcript: String,
    pub language: String,
    pub language_confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityScore(pub f64);

impl QualityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuartileSummary {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub allowed_languages: BTreeSet<String>,
    pub min_language_confidence: f64,
    pub min_quality: f64,
    pub iqr_multiplier: f64,
    pub min_segments_for_iqr: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            allowed_languages: ["en", "zh", "de", "fr", "ja", "ko"]
                .into_iter()
                .map(String::from)
                .collect(),
            min_language_confidence: 0.80,
            min_quality: 3.0,
            iqr_multiplier: 1.5,
            min_segments_for_iqr: 4,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: String| Err(FilterError::InvalidPolicy(m));
        if !self.min_language_confidence.is_finite() {
            return bad("min_language_confidence must be finite".into());
        }
        if !self.min_quality.is_finite() {
            return bad("min_quality must be finite".into());
        }
        if !(self.iqr_multiplier.is_finite() && self.iqr_multiplier > 0.0) {
            return bad(format!("iqr_multiplier must be > 0, got {}", self.iqr_multiplier));
        }
        Ok(())
    }

    fn allows(&self, language: &str) -> bool {
        self.allowed_languages
            .iter()
            .any(|l| l.eq_ignore_ascii_case(language))
    }
}

/// Why a segment was removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyTranscript,
    Language,
    Confidence,
    Quality,
    CharDurationOutlier,
    /// The transcription worker reported an error for this clip.
    TranscriptionFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Keep,
    Drop {
        reason: DropReason,
        value: Option<f64>,
        threshold: Option<f64>,
    },
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

pub fn language_gate(r: &AsrResult, p: &FilterPolicy) -> Verdict {
    if !p.allows(&r.language) {
        return Verdict::Drop {
            reason: DropReason::Language,
            value: None,
            threshold: None,
        };
    }
    if r.language_confidence >= p.min_language_confidence {
        Verdict::Keep
    } else {
        Verdict::Drop {
            reason: DropReason::Confidence,
            value: Some(r.language_confidence),
            threshold: Some(p.min_language_confidence),
        }
    }
}

pub fn quality_gate(s: QualityScore, p: &FilterPolicy) -> Verdict {
    if s.0 >= p.min_quality {
        Verdict::Keep
    } else {
        Verdict::Drop {
            reason: DropReason::Quality,
            value: Some(s.0),
            threshold: Some(p.min_quality),
        }
    }
}

/// Counts the text units a speaking rate is measured in.
///
/// The default counts non-whitespace grapheme clusters; a phonemizer-backed
/// implementation can count phones instead.
pub trait UnitCounter: Send + Sync {
    fn count_units(&self, transcript: &str) -> usize;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CharacterCounter;

impl UnitCounter for CharacterCounter {
    fn count_units(&self, transcript: &str) -> usize {
        transcript
            .graphemes(true)
            .filter(|g| !g.chars().all(char::is_whitespace))
            .count()
    }
}

pub fn avg_unit_duration(
    duration_s: f64,
    transcript: &str,
    counter: &dyn UnitCounter,
) -> Result<f64, FilterError> {
    match counter.count_units(transcript) {
        0 => Err(FilterError::EmptyTranscript),
        n => Ok(duration_s / n as f64),
    }
}

/// Seconds per non-whitespace character.
pub fn avg_char_duration(duration_s: f64, transcript: &str) -> Result<f64, FilterError> {
    avg_unit_duration(duration_s, transcript, &CharacterCounter)
}

/// First and third quartiles by linear interpolation between order statistics
/// (position `(n - 1) * q`), with fences at `multiplier` IQRs.
pub fn quartiles_with(values: &[f64], multiplier: f64) -> Result<QuartileSummary, FilterError> {
    if values.is_empty() {
        return Err(FilterError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = (v.len() - 1) as f64 * q;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        match v.get(lo + 1) {
            Some(&next) if frac > 0.0 => v[lo] + frac * (next - v[lo]),
            _ => v[lo],
        }
    };
    let (q1, q3) = (at(0.25), at(0.75));
    let iqr = q3 - q1;
    Ok(QuartileSummary {
        q1,
        q3,
        iqr,
        lower_fence: q1 - multiplier * iqr,
        upper_fence: q3 + multiplier * iqr,
    })
}

pub fn quartiles(values: &[f64]) -> Result<QuartileSummary, FilterError> {
    quartiles_with(values, 1.5)
}

/// Per-segment verdicts for one source's average character durations.
/// Values strictly outside the fences are dropped; small sources skip the gate.
pub fn iqr_outlier_gate(values: &[f64], p: &FilterPolicy) -> Vec<Verdict> {
    if values.len() < p.min_segments_for_iqr {
        return vec![Verdict::Keep; values.len()];
    }
    let Ok(q) = quartiles_with(values, p.iqr_multiplier) else {
        return Vec::new();
    };
    values
        .iter()
        .map(|&v| {
            if v < q.lower_fence {
                Verdict::Drop {
                    reason: DropReason::CharDurationOutlier,
                    value: Some(v),
                    threshold: Some(q.lower_fence),
                }
            } else if v > q.upper_fence {
                Verdict::Drop {
                    reason: DropReason::CharDurationOutlier,
                    value: Some(v),
                    threshold: Some(q.upper_fence),
                }
            } else {
                Verdict::Keep
            }
        })
        .collect()
}

/// A transcribed, scored segment waiting for the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub segment_id: String,
    pub source_id: String,
    pub duration_s: f64,
    pub asr: AsrResult,
    pub quality: QualityScore,
}

/// One removed segment, as written to the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub segment_id: String,
    pub stage: String,
    pub reason: DropReason,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
}

impl DropRecord {
    pub fn from_verdict(segment_id: &str, stage: &str, v: Verdict) -> Option<Self> {
        match v {
            Verdict::Keep => None,
            Verdict::Drop {
                reason,
                value,
                threshold,
            } => Some(Self {
                segment_id: segment_id.to_string(),
                stage: stage.to_string(),
                reason,
                value,
                threshold,
            }),
        }
    }
}

pub const FILTER_STAGE: &str = "filter";

/// Language gate, then quality gate, then the per-source IQR gate. Every
/// input ends up either kept or in the ledger; kept segments keep input order.
///
/// Fences are computed over all of a source's segments, not only those that
/// passed the first two gates, so that tightening a threshold can never pull
/// a former outlier back inside the fences.
pub fn filter_stage(
    candidates: Vec<Candidate>,
    policy: &FilterPolicy,
    counter: &dyn UnitCounter,
) -> (Vec<Candidate>, Vec<DropRecord>) {
    let rates: Vec<Result<f64, FilterError>> = candidates
        .iter()
        .map(|c| avg_unit_duration(c.duration_s, &c.asr.transcript, counter))
        .collect();

    let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if rates[i].is_ok() {
            by_source.entry(c.source_id.as_str()).or_default().push(i);
        }
    }
    let mut outlier: Vec<Verdict> = vec![Verdict::Keep; candidates.len()];
    for idx in by_source.values() {
        let values: Vec<f64> = idx.iter().map(|&i| *rates[i].as_ref().expect("grouped")).collect();
        for (&i, v) in idx.iter().zip(iqr_outlier_gate(&values, policy)) {
            outlier[i] = v;
        }
    }

    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for ((c, rate), iqr) in candidates.into_iter().zip(&rates).zip(outlier) {
        let verdict = if rate.is_err() {
            Verdict::Drop {
                reason: DropReason::EmptyTranscript,
                value: None,
                threshold: None,
            }
        } else {
            match language_gate(&c.asr, policy) {
                Verdict::Keep => match quality_gate(c.quality, policy) {
                    Verdict::Keep => iqr,
                    drop => drop,
                },
                drop => drop,
            }
        };
        match DropRecord::from_verdict(&c.segment_id, FILTER_STAGE, verdict) {
            Some(rec) => drops.push(rec),
            None => kept.push(c),
        }
    }
    (kept, drops)
}
