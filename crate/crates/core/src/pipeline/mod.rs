//! Orchestrator: runs every source item through the six stages and gathers
//! the manifest, the drop ledger and per-stage statistics.
//!
//! Items are the unit of parallelism. Within an item the stages run in
//! order; a failing stage quarantines that item only. Per-item results are
//! merged in source-id order once all items finish, so outputs do not depend
//! on the worker count.

pub mod report;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{FailedItem, PipelineReport, ReportError, StageAccounting, STAGE_KEYS, STAGE_LABELS};
pub use stats::{
    collect_stats, compute_rtf, Distribution, StageSample, StageStats, StatsAccumulator, StatsError,
};

use crate::audio::{standardize_bytes, LoudnessSpec};
use crate::backend::{Clip, ExchangeDir, Gateway, ItemRef, VadWindow};
use crate::exec::map_items;
use crate::filter::{
    filter_stage, Candidate, CharacterCounter, DropReason, DropRecord, FilterPolicy, UnitCounter,
};
use crate::manifest::{segment_id, write_manifest, write_segment, ManifestRecord, SegmentMeta};
use crate::segment::{resolve_turns, segment_source, StitchPolicy};

pub const ASR_STAGE: &str = "asr";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const STATE_DIR: &str = ".state";

/// File extensions picked up when scanning input directories. Only WAV
/// decodes; other audio is discovered so that it shows up as a failed item
/// instead of being silently skipped.
pub const AUDIO_EXTENSIONS: [&str; 8] = ["wav", "wave", "flac", "mp3", "ogg", "opus", "m4a", "aac"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("no input audio found")]
    NoInputs,
    #[error("I/O failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("all {} items failed", .0.failed.len())]
    AllFailed(Box<PipelineReport>),
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub run_id: String,
    pub output: PathBuf,
    pub exchange_root: PathBuf,
    pub parallelism: usize,
    pub resume: bool,
    pub loudness: LoudnessSpec,
    pub stitch: StitchPolicy,
    pub filter: FilterPolicy,
    pub vad: VadWindow,
}

impl PipelineConfig {
    /// Defaults everywhere; exchange files go under `<output>/exchange`.
    pub fn new(output: impl Into<PathBuf>) -> Self {
        let output = output.into();
        Self {
            run_id: "run".to_string(),
            exchange_root: output.join("exchange"),
            output,
            parallelism: 1,
            resume: false,
            loudness: LoudnessSpec::default(),
            stitch: StitchPolicy::default(),
            filter: FilterPolicy::default(),
            vad: VadWindow::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |section: &str, msg: String| PipelineError::ConfigInvalid(format!("{section}: {msg}"));
        if self.parallelism == 0 {
            return Err(bad("parallelism", "must be at least 1".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(bad("run_id", format!("{:?} is not a valid directory name", self.run_id)));
        }
        self.loudness.validate().map_err(|e| bad("loudness", e.to_string()))?;
        self.stitch.validate().map_err(|e| bad("stitch", e))?;
        self.filter.validate().map_err(|e| bad("filter", e.to_string()))?;
        self.vad.validate().map_err(|e| bad("vad", e))?;
        Ok(())
    }

    /// Settings that change item results; resume markers from a run with a
    /// different fingerprint are ignored.
    fn fingerprint(&self) -> String {
        serde_json::json!({
            "loudness": self.loudness,
            "stitch": self.stitch,
            "filter": self.filter,
            "vad": self.vad,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceItem {
    pub source_id: String,
    pub path: PathBuf,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' })
        .collect()
}

/// Relative path without extension, directory components joined by `__`.
pub fn source_id_for(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let rel = if rel.as_os_str().is_empty() {
        Path::new(path.file_name().unwrap_or_default())
    } else {
        rel
    };
    let stemmed = rel.with_extension("");
    stemmed
        .components()
        .map(|c| sanitize(&c.as_os_str().to_string_lossy()))
        .collect::<Vec<_>>()
        .join("__")
}

fn is_audio(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| AUDIO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Every audio file under `roots` (files are taken as given), sorted by source id.
pub fn discover_sources(roots: &[PathBuf]) -> Result<Vec<SourceItem>, PipelineError> {
    let mut by_id: BTreeMap<String, PathBuf> = BTreeMap::new();
    for root in roots {
        if !root.exists() {
            return Err(PipelineError::ConfigInvalid(format!(
                "input: {} does not exist",
                root.display()
            )));
        }
        let found: Vec<(String, PathBuf)> = if root.is_file() {
            vec![(source_id_for(root.parent().unwrap_or(Path::new("")), root), root.clone())]
        } else {
            walkdir::WalkDir::new(root)
                .sort_by_file_name()
                .into_iter()
                .filter_map(Result::ok)
                .filter(|e| e.file_type().is_file() && is_audio(e.path()))
                .map(|e| (source_id_for(root, e.path()), e.path().to_path_buf()))
                .collect()
        };
        for (id, path) in found {
            if let Some(prev) = by_id.insert(id.clone(), path.clone()) {
                if prev != path {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "input: {} and {} both map to source id {id:?}",
                        prev.display(),
                        path.display()
                    )));
                }
            }
        }
    }
    Ok(by_id
        .into_iter()
        .map(|(source_id, path)| SourceItem { source_id, path })
        .collect())
}

/// Everything one successfully processed item contributes to the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub source_id: String,
    pub source_duration_s: f64,
    /// Clips observed at each stage, indexed like [`STAGE_KEYS`].
    pub stages: [Vec<StageSample>; 6],
    pub records: Vec<ManifestRecord>,
    pub drops: Vec<DropRecord>,
}

#[derive(Serialize, Deserialize)]
struct Marker {
    fingerprint: String,
    path: PathBuf,
    result: ItemResult,
}

fn marker_path(output: &Path, source_id: &str) -> PathBuf {
    output.join(STATE_DIR).join(format!("{source_id}.json"))
}

fn load_marker(cfg: &PipelineConfig, item: &SourceItem) -> Option<ItemResult> {
    let text = fs::read_to_string(marker_path(&cfg.output, &item.source_id)).ok()?;
    let marker: Marker = serde_json::from_str(&text).ok()?;
    let files_present = marker
        .result
        .records
        .iter()
        .all(|r| cfg.output.join(&r.wav).is_file());
    (marker.fingerprint == cfg.fingerprint() && marker.path == item.path && files_present)
        .then_some(marker.result)
}

fn save_marker(cfg: &PipelineConfig, item: &SourceItem, result: &ItemResult) -> std::io::Result<()> {
    let path = marker_path(&cfg.output, &item.source_id);
    fs::create_dir_all(path.parent().expect("marker has a parent"))?;
    let marker = Marker {
        fingerprint: cfg.fingerprint(),
        path: item.path.clone(),
        result: result.clone(),
    };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&marker).expect("marker serializes"))?;
    fs::rename(&tmp, &path)
}

/// Runs the stages of one item against `gateway`, writing its segment WAVs.
pub fn process_item(
    item: &SourceItem,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    counter: &dyn UnitCounter,
) -> Result<ItemResult, FailedItem> {
    let fail = |stage: &str, e: &dyn std::fmt::Display| FailedItem {
        source_id: item.source_id.clone(),
        path: item.path.display().to_string(),
        stage: stage.to_string(),
        error: e.to_string(),
    };
    let id = item.source_id.as_str();
    let iref = ItemRef {
        item_id: id,
        source_path: &item.path,
    };

    let raw = fs::read(&item.path).map_err(|e| fail("read", &e))?;
    let standardized = standardize_bytes(&raw, &cfg.loudness).map_err(|e| fail("standardize", &e))?;
    let audio = standardized.audio;
    let duration = audio.duration_s();

    let separated = gateway.separate(iref, &audio).map_err(|e| fail("separation", &e))?;
    let raw_turns = gateway.diarize(iref, &separated).map_err(|e| fail("diarization", &e))?;
    let turns = resolve_turns(&raw_turns, cfg.stitch.max_gap_s);
    let chunks = gateway.vad(iref, &separated).map_err(|e| fail("vad", &e))?;
    let spans = segment_source(id, &raw_turns, &chunks, &cfg.stitch);

    // One scoring pass covers every row of the stage table.
    let turn_labels: Vec<String> = (0..turns.len()).map(|i| format!("turn-{i:05}")).collect();
    let span_labels: Vec<String> = (0..spans.len()).map(|i| format!("seg-{i:05}")).collect();
    let mut clips = vec![Clip::whole("source", &audio), Clip::whole("separated", &separated)];
    clips.extend(
        turns
            .iter()
            .zip(&turn_labels)
            .map(|(t, l)| Clip::span(l, &separated, t.start_s, t.end_s)),
    );
    let span_clips: Vec<Clip> = spans
        .iter()
        .zip(&span_labels)
        .map(|(s, l)| Clip::span(l, &separated, s.start_s, s.end_s))
        .collect();
    clips.extend(span_clips.iter().copied());
    let scores = gateway.score(iref, &clips).map_err(|e| fail("quality", &e))?;
    let (head, span_scores) = scores.split_at(2 + turns.len());

    let asr = gateway
        .transcribe_each(iref, &span_clips)
        .map_err(|e| fail("transcription", &e))?;

    let mut drops = Vec::new();
    let mut candidates = Vec::new();
    for (i, (span, result)) in spans.iter().zip(asr).enumerate() {
        let seg = segment_id(id, i);
        let reason = match &result {
            Err(_) => Some(DropReason::TranscriptionFailed),
            Ok(r) if r.transcript.trim().is_empty() => Some(DropReason::EmptyTranscript),
            Ok(_) => None,
        };
        match (reason, result) {
            (None, Ok(asr)) => candidates.push(Candidate {
                segment_id: seg,
                source_id: id.to_string(),
                duration_s: span.duration_s(),
                asr,
                quality: span_scores[i],
            }),
            (reason, _) => drops.push(DropRecord {
                segment_id: seg,
                stage: ASR_STAGE.to_string(),
                reason: reason.unwrap_or(DropReason::TranscriptionFailed),
                value: None,
                threshold: None,
            }),
        }
    }
    let asr_samples: Vec<StageSample> = candidates
        .iter()
        .map(|c| StageSample::new(c.duration_s, c.quality.value()))
        .collect();

    let (kept, filter_drops) = filter_stage(candidates, &cfg.filter, counter);
    drops.extend(filter_drops);

    let index_of: BTreeMap<String, usize> = (0..spans.len()).map(|i| (segment_id(id, i), i)).collect();
    let mut records = Vec::with_capacity(kept.len());
    for c in &kept {
        let index = index_of[&c.segment_id];
        let meta = SegmentMeta {
            index,
            text: c.asr.transcript.clone(),
            language: c.asr.language.to_ascii_lowercase(),
            lang_conf: c.asr.language_confidence,
            quality: c.quality.value(),
        };
        match write_segment(&cfg.output, &spans[index], &separated, &meta) {
            Ok(r) => records.push(r),
            Err(e) => {
                for r in &records {
                    let _ = fs::remove_file(cfg.output.join(&r.wav));
                }
                return Err(fail("persist", &e));
            }
        }
    }

    let q = |i: usize| head[i].value();
    let stages = [
        vec![StageSample::new(duration, q(0))],
        vec![StageSample::new(separated.duration_s(), q(1))],
        turns
            .iter()
            .enumerate()
            .map(|(i, t)| StageSample::new(t.duration_s(), q(2 + i)))
            .collect(),
        spans
            .iter()
            .zip(span_scores)
            .map(|(s, q)| StageSample::new(s.duration_s(), q.value()))
            .collect(),
        asr_samples,
        kept.iter()
            .map(|c| StageSample::new(c.duration_s, c.quality.value()))
            .collect(),
    ];
    Ok(ItemResult {
        source_id: id.to_string(),
        source_duration_s: duration,
        stages,
        records,
        drops,
    })
}

/// The artifacts of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: PipelineReport,
    pub records: Vec<ManifestRecord>,
    pub manifest_path: PathBuf,
    pub report_path: PathBuf,
    pub table_path: PathBuf,
}

enum Outcome {
    Done(ItemResult),
    Resumed(ItemResult),
    Failed(FailedItem),
}

/// Merges per-item results (in the order given) into the run report.
pub fn build_report(
    run_id: &str,
    items_total: usize,
    results: &[&ItemResult],
    failed: Vec<FailedItem>,
    items_resumed: u64,
    wall_processing_s: f64,
) -> PipelineReport {
    let mut accs: [StatsAccumulator; 6] = Default::default();
    let mut drops = Vec::new();
    for r in results {
        for (acc, samples) in accs.iter_mut().zip(&r.stages) {
            acc.extend(samples.iter().copied());
        }
        drops.extend(r.drops.iter().cloned());
    }
    drops.sort_by(|a: &DropRecord, b| a.segment_id.cmp(&b.segment_id).then(a.stage.cmp(&b.stage)));
    let source_hours = accs[0].total_seconds() / 3600.0;
    let stages: Vec<StageStats> = accs
        .iter()
        .zip(STAGE_KEYS)
        .map(|(a, k)| a.finish(k, source_hours))
        .collect();
    let dropped_at = |stage: &str| drops.iter().filter(|d| d.stage == stage).count() as u64;
    let accounting = vec![
        StageAccounting {
            stage: ASR_STAGE.to_string(),
            clips_in: stages[3].clip_count,
            clips_out: stages[4].clip_count,
            clips_dropped: dropped_at(ASR_STAGE),
        },
        StageAccounting {
            stage: crate::filter::FILTER_STAGE.to_string(),
            clips_in: stages[4].clip_count,
            clips_out: stages[5].clip_count,
            clips_dropped: dropped_at(crate::filter::FILTER_STAGE),
        },
    ];
    PipelineReport {
        run_id: run_id.to_string(),
        stages,
        wall_processing_s,
        rtf: compute_rtf(wall_processing_s, source_hours).ok(),
        items_total: items_total as u64,
        items_processed: results.len() as u64,
        items_resumed,
        failed,
        accounting,
        drops,
    }
}

/// Processes `items` and writes `manifest.jsonl`, `report.json` and
/// `report.txt` under the output root.
///
/// Fails only on invalid configuration, an empty input list, output I/O
/// errors, or when every item failed (the report is still written).
pub fn run(cfg: &PipelineConfig, items: &[SourceItem], gateway: &Gateway) -> Result<RunOutput, PipelineError> {
    run_with_counter(cfg, items, gateway, &CharacterCounter)
}

pub fn run_with_counter(
    cfg: &PipelineConfig,
    items: &[SourceItem],
    gateway: &Gateway,
    counter: &dyn UnitCounter,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(PipelineError::NoInputs);
    }
    let ids: BTreeSet<&str> = items.iter().map(|i| i.source_id.as_str()).collect();
    if ids.len() != items.len() {
        return Err(PipelineError::ConfigInvalid("input: duplicate source ids".into()));
    }
    let started = Instant::now();
    fs::create_dir_all(&cfg.output).map_err(|e| io_error(&cfg.output, e))?;
    let state_dir = cfg.output.join(STATE_DIR);
    if !cfg.resume && state_dir.exists() {
        fs::remove_dir_all(&state_dir).map_err(|e| io_error(&state_dir, e))?;
    }
    let exchange = ExchangeDir::new(&cfg.exchange_root, &cfg.run_id);

    let mut sorted: Vec<&SourceItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    log::info!(
        "processing {} items with parallelism {} ({})",
        sorted.len(),
        cfg.parallelism,
        if crate::exec::is_parallel() { "rayon" } else { "sequential build" }
    );

    let outcomes = map_items(&sorted, cfg.parallelism, |item| {
        if cfg.resume {
            if let Some(done) = load_marker(cfg, item) {
                log::info!("{}: resumed from completion marker", item.source_id);
                return Outcome::Resumed(done);
            }
        }
        let result = process_item(item, cfg, gateway, counter);
        exchange.clear_item(&item.source_id);
        match result {
            Ok(r) => {
                if let Err(e) = save_marker(cfg, item, &r) {
                    log::warn!("{}: cannot write completion marker: {e}", item.source_id);
                }
                log::info!("{}: {} segments kept", item.source_id, r.records.len());
                Outcome::Done(r)
            }
            Err(f) => {
                log::warn!("{}: failed at {}: {}", f.source_id, f.stage, f.error);
                Outcome::Failed(f)
            }
        }
    });
    let _ = fs::remove_dir(exchange.run_root());

    let mut results = Vec::new();
    let mut failed = Vec::new();
    let mut resumed = 0;
    for o in &outcomes {
        match o {
            Outcome::Done(r) => results.push(r),
            Outcome::Resumed(r) => {
                resumed += 1;
                results.push(r)
            }
            Outcome::Failed(f) => failed.push(f.clone()),
        }
    }
    let records: Vec<ManifestRecord> = results.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let report = build_report(
        &cfg.run_id,
        items.len(),
        &results,
        failed,
        resumed,
        started.elapsed().as_secs_f64(),
    );

    let manifest_path = cfg.output.join(MANIFEST_FILE);
    let report_path = cfg.output.join(REPORT_JSON);
    let table_path = cfg.output.join(REPORT_TEXT);
    write_manifest(&manifest_path, &records).map_err(|e| io_error(&manifest_path, e))?;
    fs::write(&report_path, report.to_json()).map_err(|e| io_error(&report_path, e))?;
    fs::write(&table_path, report.render_table()).map_err(|e| io_error(&table_path, e))?;

    if results.is_empty() {
        return Err(PipelineError::AllFailed(Box::new(report)));
    }
    let mut records = records;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(RunOutput {
        report,
        records,
        manifest_path,
        report_path,
        table_path,
    })
}
