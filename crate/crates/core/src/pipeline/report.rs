//! Run report: structured JSON plus the rendered stage table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{Distribution, StageStats};
use crate::filter::DropRecord;

/// Row labels of the stage table, in pipeline order.
pub const STAGE_LABELS: [&str; 6] = [
    "Source Speech",
    "+ Source Separation",
    "+ Speaker Diarization",
    "+ Fine-grained Segmentation by VAD",
    "+ ASR",
    "+ Filtering",
];

/// Stage keys used in the JSON report and the drop ledger.
pub const STAGE_KEYS: [&str; 6] = ["source", "separation", "diarization", "vad", "asr", "filter"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedItem {
    pub source_id: String,
    pub path: String,
    pub stage: String,
    pub error: String,
}

/// Clip flow through a stage that can drop clips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAccounting {
    pub stage: String,
    pub clips_in: u64,
    pub clips_out: u64,
    pub clips_dropped: u64,
}

impl StageAccounting {
    pub fn closes(&self) -> bool {
        self.clips_in == self.clips_out + self.clips_dropped
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub run_id: String,
    pub stages: Vec<StageStats>,
    pub wall_processing_s: f64,
    /// `None` when no source audio was processed.
    pub rtf: Option<f64>,
    pub items_total: u64,
    pub items_processed: u64,
    pub items_resumed: u64,
    pub failed: Vec<FailedItem>,
    pub accounting: Vec<StageAccounting>,
    pub drops: Vec<DropRecord>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read report {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse report {path}: {message}")]
    Parse { path: String, message: String },
}

impl PipelineReport {
    /// A copy with wall time and RTF cleared, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_processing_s: 0.0,
            rtf: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ReportError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Header plus one row per stage.
    pub fn render_rows(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "| Processing Steps | Duration (s) min | max | avg ± std | DNSMOS min | max | avg ± std | Clips | Total Duration (hours) |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for (i, s) in self.stages.iter().enumerate() {
            let label = STAGE_LABELS.get(i).copied().unwrap_or(s.stage.as_str());
            let _ = writeln!(
                out,
                "| {label} | {} | {} | {} | {} |",
                dist_cells(s.duration.as_ref()),
                dist_cells(s.quality.as_ref()),
                s.clip_count,
                s.render_total()
            );
        }
        out
    }

    /// "Total Processing Time: 240.5 mins; Real-Time Factor (RTF): 0.006"
    pub fn render_footer(&self) -> String {
        let rtf = match self.rtf {
            Some(r) if r >= 1e-3 => format!("{r:.3}"),
            Some(r) => format!("{r:.3e}"),
            None => "n/a".to_string(),
        };
        format!(
            "Total Processing Time: {:.1} mins; Real-Time Factor (RTF): {rtf}\n",
            self.wall_processing_s / 60.0
        )
    }

    pub fn render_table(&self) -> String {
        self.render_rows() + &self.render_footer()
    }
}

fn dist_cells(d: Option<&Distribution>) -> String {
    match d {
        Some(d) => format!("{:.2} | {:.2} | {:.2} ± {:.2}", d.min, d.max, d.mean, d.std),
        None => "- | - | -".to_string(),
    }
}
