//! Per-stage duration and quality distributions, retention and RTF.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("source audio totals zero hours; RTF is undefined")]
    ZeroAudio,
}

/// `wall_s / (source_hours * 3600)`.
pub fn compute_rtf(wall_s: f64, source_hours: f64) -> Result<f64, StatsError> {
    if source_hours <= 0.0 || !source_hours.is_finite() {
        return Err(StatsError::ZeroAudio);
    }
    Ok(wall_s / (source_hours * 3600.0))
}

/// One clip observed at a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSample {
    pub duration_s: f64,
    pub quality: f64,
}

impl StageSample {
    pub fn new(duration_s: f64, quality: f64) -> Self {
        Self { duration_s, quality }
    }
}

/// min / max / mean / population std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Distribution {
    /// `None` for an empty slice. Values are summed in the order given.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            min,
            max,
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub clip_count: u64,
    pub total_hours: f64,
    /// Seconds; `None` when the stage has no clips.
    pub duration: Option<Distribution>,
    pub quality: Option<Distribution>,
    /// `total_hours` as a percentage of the source stage's hours.
    pub retention_pct: f64,
}

impl StageStats {
    /// "258.44 (38.75%)"
    pub fn render_total(&self) -> String {
        format!("{:.2} ({:.2}%)", self.total_hours, self.retention_pct)
    }
}

fn sorted_by_key(samples: &[StageSample]) -> Vec<StageSample> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| {
        a.duration_s
            .total_cmp(&b.duration_s)
            .then(a.quality.total_cmp(&b.quality))
    });
    v
}

/// Stats for one stage. Retention is measured against `source_hours`; a
/// source of zero hours yields zero retention.
pub fn collect_stats(stage: &str, records: &[StageSample], source_hours: f64) -> StageStats {
    // Summation order is fixed so that the result does not depend on the
    // order in which items finished.
    let sorted = sorted_by_key(records);
    let durations: Vec<f64> = sorted.iter().map(|s| s.duration_s).collect();
    let qualities: Vec<f64> = sorted.iter().map(|s| s.quality).collect();
    let total_hours = durations.iter().fold(0.0, |a, b| a + b) / 3600.0;
    let retention_pct = if source_hours > 0.0 {
        total_hours / source_hours * 100.0
    } else {
        0.0
    };
    StageStats {
        stage: stage.to_string(),
        clip_count: records.len() as u64,
        total_hours,
        duration: Distribution::of(&durations),
        quality: Distribution::of(&qualities),
        retention_pct,
    }
}

/// Partial stats for one stage, mergeable in any order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsAccumulator {
    samples: Vec<StageSample>,
}

impl StatsAccumulator {
    pub fn push(&mut self, s: StageSample) {
        self.samples.push(s);
    }

    pub fn extend(&mut self, it: impl IntoIterator<Item = StageSample>) {
        self.samples.extend(it);
    }

    pub fn merge(mut self, other: StatsAccumulator) -> StatsAccumulator {
        self.samples.extend(other.samples);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        sorted_by_key(&self.samples)
            .iter()
            .fold(0.0, |a, s| a + s.duration_s)
    }

    pub fn finish(&self, stage: &str, source_hours: f64) -> StageStats {
        collect_stats(stage, &self.samples, source_hours)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rtf_of_table_footer() {
        let rtf = compute_rtf(240.5 * 60.0, 666.94).unwrap();
        assert!((rtf - 0.006_010).abs() < 5e-6, "{rtf}");
        assert_eq!(compute_rtf(3600.0, 1.0).unwrap(), 1.0);
        assert_eq!(compute_rtf(1.0, 0.0), Err(StatsError::ZeroAudio));
    }

    #[test]
    fn three_and_thirty() {
        let s = collect_stats("x", &[StageSample::new(3.0, 3.0), StageSample::new(30.0, 3.0)], 1.0);
        let d = s.duration.unwrap();
        assert_eq!((d.min, d.max, d.mean, d.std), (3.0, 30.0, 16.5, 13.5));
    }

    #[test]
    fn single_record() {
        let s = collect_stats("x", &[StageSample::new(7.25, 3.1)], 1.0);
        let d = s.duration.unwrap();
        assert_eq!((d.min, d.max, d.mean, d.std), (7.25, 7.25, 7.25, 0.0));
    }

    #[test]
    fn retention_of_final_row() {
        let s = collect_stats("filter", &[StageSample::new(258.44 * 3600.0, 3.26)], 666.94);
        assert_eq!(s.render_total(), "258.44 (38.75%)");
    }

    #[test]
    fn empty_stage_is_marked() {
        let s = collect_stats("filter", &[], 2.0);
        assert_eq!(s.clip_count, 0);
        assert!(s.duration.is_none() && s.quality.is_none());
        assert_eq!(s.render_total(), "0.00 (0.00%)");
    }

    #[test]
    fn merge_order_does_not_matter() {
        let parts: Vec<StatsAccumulator> = (0..5)
            .map(|k| {
                let mut a = StatsAccumulator::default();
                for j in 0..7 {
                    a.push(StageSample::new(0.1 * (k * 7 + j) as f64 + 3.3, 2.0 + 0.37 * j as f64));
                }
                a
            })
            .collect();
        let fwd = parts.iter().cloned().fold(StatsAccumulator::default(), StatsAccumulator::merge);
        let rev = parts.iter().rev().cloned().fold(StatsAccumulator::default(), StatsAccumulator::merge);
        assert_eq!(fwd.finish("s", 1.0), rev.finish("s", 1.0));
    }
}
