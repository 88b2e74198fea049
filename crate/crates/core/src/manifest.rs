//! Segment WAV files and the line-delimited manifest that indexes them.
//!
//! One JSON object per line, keys in a fixed order, real numbers with six
//! decimals:
//!
//! ```text
//! {"id":"talk_00003","wav":"en/talk/00003.wav","text":"...","language":"en","lang_conf":0.950000,"speaker":"S0","start":12.500000,"end":20.010000,"duration":7.510000,"quality":3.412000,"source_id":"talk"}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{decode, encode_wav, AudioBuffer, CANONICAL_RATE};
use crate::segment::SegmentSpan;

/// Allowed disagreement between `duration` and `end - start`, and slack on the
/// 3-30 s bounds after six-decimal rounding.
pub const TIME_TOLERANCE: f64 = 1e-6;
pub const MIN_DURATION_S: f64 = 3.0;
pub const MAX_DURATION_S: f64 = 30.0;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("I/O failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    InvariantViolation { line: usize, message: String },
    #[error("sample {index} has magnitude {value} > 1; cannot quantize")]
    QuantizationOverflow { index: usize, value: f32 },
}

fn io_error(path: &Path, e: std::io::Error) -> ManifestError {
    ManifestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub wav: String,
    pub text: String,
    pub language: String,
    pub lang_conf: f64,
    pub speaker: String,
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    pub quality: f64,
    pub source_id: String,
}

/// Rounds to the six decimals the manifest stores.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Transcript-side fields of a record; timing and paths come from the span.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMeta {
    pub index: usize,
    pub text: String,
    pub language: String,
    pub lang_conf: f64,
    pub quality: f64,
}

pub fn segment_id(source_id: &str, index: usize) -> String {
    format!("{source_id}_{index:05}")
}

/// `<language>/<source_id>/<index>.wav`, relative to the output root.
pub fn segment_wav_path(language: &str, source_id: &str, index: usize) -> String {
    let lang = if language.is_empty() { "und" } else { language };
    format!("{}/{source_id}/{index:05}.wav", lang.to_ascii_lowercase())
}

impl ManifestRecord {
    pub fn from_span(span: &SegmentSpan, meta: &SegmentMeta) -> Self {
        let start = round6(span.start_s);
        let end = round6(span.end_s);
        Self {
            id: segment_id(&span.source_id, meta.index),
            wav: segment_wav_path(&meta.language, &span.source_id, meta.index),
            text: meta.text.clone(),
            language: meta.language.clone(),
            lang_conf: round6(meta.lang_conf),
            speaker: span.speaker.clone(),
            start,
            end,
            duration: round6(end - start),
            quality: round6(meta.quality),
            source_id: span.source_id.clone(),
        }
    }

    /// The manifest line, without a trailing newline.
    pub fn to_line(&self) -> String {
        let s = |v: &str| serde_json::to_string(v).expect("string serializes");
        let mut out = String::with_capacity(256);
        let _ = write!(
            out,
            "{{\"id\":{},\"wav\":{},\"text\":{},\"language\":{},\"lang_conf\":{:.6},\"speaker\":{},\
             \"start\":{:.6},\"end\":{:.6},\"duration\":{:.6},\"quality\":{:.6},\"source_id\":{}}}",
            s(&self.id),
            s(&self.wav),
            s(&self.text),
            s(&self.language),
            self.lang_conf,
            s(&self.speaker),
            self.start,
            self.end,
            self.duration,
            self.quality,
            s(&self.source_id),
        );
        out
    }

    /// Field-level invariants (no filesystem access).
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        let fields = [
            ("lang_conf", self.lang_conf),
            ("start", self.start),
            ("end", self.end),
            ("duration", self.duration),
            ("quality", self.quality),
        ];
        for (name, x) in fields {
            if !x.is_finite() {
                v.push(format!("{name} is not finite"));
            }
        }
        if (self.duration - (self.end - self.start)).abs() > TIME_TOLERANCE {
            v.push(format!(
                "duration {:.6} != end - start ({:.6})",
                self.duration,
                self.end - self.start
            ));
        }
        if self.duration < MIN_DURATION_S - TIME_TOLERANCE || self.duration > MAX_DURATION_S + TIME_TOLERANCE {
            v.push(format!("duration {:.6} outside [3, 30] s", self.duration));
        }
        if !(0.0..=1.0).contains(&self.lang_conf) {
            v.push(format!("lang_conf {} outside [0, 1]", self.lang_conf));
        }
        if self.id.is_empty() {
            v.push("empty id".to_string());
        }
        if self.wav.is_empty() || Path::new(&self.wav).is_absolute() {
            v.push(format!("wav path {:?} must be relative", self.wav));
        }
        v
    }
}

pub fn parse_line(line: &str) -> Result<ManifestRecord, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

/// Writes the segment's audio as 16-bit mono 24 kHz PCM under `out_root` and
/// returns its record.
pub fn write_segment(
    out_root: &Path,
    span: &SegmentSpan,
    audio: &AudioBuffer,
    meta: &SegmentMeta,
) -> Result<ManifestRecord, ManifestError> {
    assert_eq!(audio.channel_count, 1, "segments are cut from mono audio");
    assert_eq!(audio.sample_rate, CANONICAL_RATE, "segments are cut from 24 kHz audio");
    let record = ManifestRecord::from_span(span, meta);
    let clip = audio.slice_seconds(span.start_s, span.end_s);
    if let Some((index, &value)) = clip.samples.iter().enumerate().find(|(_, s)| s.abs() > 1.0) {
        return Err(ManifestError::QuantizationOverflow { index, value });
    }
    let path = out_root.join(&record.wav);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(&path, encode_wav(&clip)).map_err(|e| io_error(&path, e))?;
    Ok(record)
}

/// Writes all records sorted by id, one per line.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), ManifestError> {
    let mut sorted: Vec<&ManifestRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut text = String::new();
    for r in sorted {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Parses and checks every line; stops at the first bad one.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, ManifestError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(line).map_err(|message| ManifestError::Parse {
            line: i + 1,
            message,
        })?;
        if let Some(message) = record.check().into_iter().next() {
            return Err(ManifestError::InvariantViolation {
                line: i + 1,
                message,
            });
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

/// Every problem in a manifest, including missing or malformed WAV files
/// (resolved relative to `root`).
pub fn validate_manifest(path: &Path, root: &Path) -> Result<Vec<Violation>, ManifestError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut violations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = match parse_line(line) {
            Ok(r) => r,
            Err(message) => {
                violations.push(Violation {
                    line: i + 1,
                    id: None,
                    message: format!("parse error: {message}"),
                });
                continue;
            }
        };
        let mut problems = record.check();
        let wav = root.join(&record.wav);
        match fs::read(&wav) {
            Err(e) => problems.push(format!("missing wav {}: {e}", record.wav)),
            Ok(bytes) => match decode(&bytes) {
                Ok(a) if a.channel_count == 1 && a.sample_rate == CANONICAL_RATE => {}
                Ok(a) => problems.push(format!(
                    "wav {} is {} ch @ {} Hz, expected mono 24000 Hz",
                    record.wav, a.channel_count, a.sample_rate
                )),
                Err(e) => problems.push(format!("wav {} does not decode: {e}", record.wav)),
            },
        }
        violations.extend(problems.into_iter().map(|message| Violation {
            line: i + 1,
            id: Some(record.id.clone()),
            message,
        }));
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::PCM16_SCALE;

    fn span(start: f64, end: f64) -> SegmentSpan {
        SegmentSpan {
            source_id: "talk".into(),
            speaker: "S0".into(),
            start_s: start,
            end_s: end,
        }
    }

    fn meta(index: usize) -> SegmentMeta {
        SegmentMeta {
            index,
            text: "hello \"world\"".into(),
            language: "en".into(),
            lang_conf: 0.95,
            quality: 3.4123456789,
        }
    }

    fn ramp(seconds: f64) -> AudioBuffer {
        let n = (seconds * CANONICAL_RATE as f64) as usize;
        AudioBuffer::mono((0..n).map(|i| ((i % 200) as f32 / 100.0) - 1.0).collect(), CANONICAL_RATE)
    }

    #[test]
    fn three_second_segment_has_72000_frames() {
        let dir = tempfile::tempdir().unwrap();
        let audio = ramp(10.0);
        let rec = write_segment(dir.path(), &span(1.0, 4.0), &audio, &meta(0)).unwrap();
        assert_eq!(rec.wav, "en/talk/00000.wav");
        let back = decode(&fs::read(dir.path().join(&rec.wav)).unwrap()).unwrap();
        assert_eq!(back.samples.len(), 72_000);
        assert_eq!((back.channel_count, back.sample_rate), (1, 24_000));
        let original = audio.slice_seconds(1.0, 4.0);
        let step = 1.0 / PCM16_SCALE;
        assert!(back
            .samples
            .iter()
            .zip(&original.samples)
            .all(|(a, b)| (a - b).abs() <= step));
    }

    #[test]
    fn unwritable_root_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = write_segment(&blocker, &span(0.0, 3.0), &ramp(4.0), &meta(0)).unwrap_err();
        assert!(matches!(err, ManifestError::Io { .. }), "{err}");
    }

    #[test]
    fn overflow_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let audio = AudioBuffer::mono(vec![1.5; 96_000], CANONICAL_RATE);
        let err = write_segment(dir.path(), &span(0.0, 3.0), &audio, &meta(0)).unwrap_err();
        assert!(matches!(err, ManifestError::QuantizationOverflow { .. }));
    }

    #[test]
    fn line_format_is_fixed() {
        let rec = ManifestRecord::from_span(&span(12.5, 20.01), &meta(3));
        assert_eq!(
            rec.to_line(),
            "{\"id\":\"talk_00003\",\"wav\":\"en/talk/00003.wav\",\"text\":\"hello \\\"world\\\"\",\
             \"language\":\"en\",\"lang_conf\":0.950000,\"speaker\":\"S0\",\"start\":12.500000,\
             \"end\":20.010000,\"duration\":7.510000,\"quality\":3.412346,\"source_id\":\"talk\"}"
        );
    }

    #[test]
    fn written_manifest_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let recs = vec![
            ManifestRecord::from_span(&span(5.0, 9.5), &meta(1)),
            ManifestRecord::from_span(&span(0.123456789, 3.3), &meta(0)),
        ];
        write_manifest(&path, &recs).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![recs[1].clone(), recs[0].clone()]);
    }

    #[test]
    fn out_of_bounds_duration_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut rec = ManifestRecord::from_span(&span(0.0, 31.0), &meta(0));
        rec.duration = 31.0;
        fs::write(&path, rec.to_line() + "\n").unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(ManifestError::InvariantViolation { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "").unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn bad_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let good = ManifestRecord::from_span(&span(0.0, 4.0), &meta(0)).to_line();
        fs::write(&path, format!("{good}\n{{\"id\":3\n")).unwrap();
        assert!(matches!(read_manifest(&path), Err(ManifestError::Parse { line: 2, .. })));
    }

    #[test]
    fn validation_flags_missing_wav() {
        let dir = tempfile::tempdir().unwrap();
        let audio = ramp(10.0);
        let a = write_segment(dir.path(), &span(0.0, 4.0), &audio, &meta(0)).unwrap();
        let b = write_segment(dir.path(), &span(5.0, 9.0), &audio, &meta(1)).unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &[a, b.clone()]).unwrap();
        assert!(validate_manifest(&path, dir.path()).unwrap().is_empty());
        fs::remove_file(dir.path().join(&b.wav)).unwrap();
        let v = validate_manifest(&path, dir.path()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id.as_deref(), Some("talk_00001"));
    }
}
