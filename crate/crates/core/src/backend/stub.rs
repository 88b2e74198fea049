//! Deterministic built-in backends.
//!
//! * separation: passthrough
//! * diarization: turns from a `<stem>.diar.json` sidecar next to the source,
//!   else one `S0` turn over the whole item
//! * VAD: frame-energy detector with hangover
//! * transcription: text from a `<stem>.asr.json` sidecar, else empty
//! * quality: `clamp(3.8 + dBFS / 20, 1, 5)` of the clip

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::{AsrEntry, VadWindow, PROTOCOL_VERSION};
use super::{Backend, Capabilities, Clip, GatewayError, HelloInfo, ItemRef, Stage};
use crate::audio::AudioBuffer;
use crate::filter::AsrResult;
use crate::segment::{SpeakerTurn, VadChunk};

#[derive(Debug, Clone)]
pub struct StubBackend {
    pub stage: Stage,
    pub max_batch: usize,
}

impl StubBackend {
    pub fn for_stage(stage: Stage) -> Self {
        let max_batch = match stage {
            Stage::Transcription => 16,
            Stage::Quality => 32,
            _ => 1,
        };
        Self { stage, max_batch }
    }
}

pub fn diarization_sidecar(source: &Path) -> PathBuf {
    source.with_extension("diar.json")
}

pub fn transcript_sidecar(source: &Path) -> PathBuf {
    source.with_extension("asr.json")
}

/// Contents of a `<stem>.diar.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiarSidecar {
    pub turns: Vec<SpeakerTurn>,
}

/// One window of a `<stem>.asr.json` sidecar; a clip takes the entry
/// containing its midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrSidecarEntry {
    pub start: f64,
    pub end: f64,
    pub text: String,
    pub language: String,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrSidecar {
    pub segments: Vec<AsrSidecarEntry>,
}

fn read_sidecar<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, GatewayError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| GatewayError::Worker(format!("bad sidecar {}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(GatewayError::Io(format!("{}: {e}", path.display()))),
    }
}

/// Frame-energy voice activity detection.
///
/// A frame is voiced when its RMS exceeds the threshold; a chunk closes once
/// unvoiced frames have accumulated `hangover_ms` of hops, and ends at the end
/// of its last voiced frame.
pub fn energy_vad(audio: &AudioBuffer, window: &VadWindow) -> Vec<VadChunk> {
    let rate = audio.sample_rate as f64;
    let frame = ((window.frame_ms * rate / 1000.0).round() as usize).max(1);
    let hop = ((window.hop_ms * rate / 1000.0).round() as usize).max(1);
    let n = audio.samples.len();
    if n < frame {
        return Vec::new();
    }
    let frames = (n - frame) / hop + 1;
    let threshold = 10f64.powf(window.threshold_dbfs / 20.0);
    let threshold_sq = threshold * threshold * frame as f64;
    let hangover_frames = (window.hangover_ms / window.hop_ms).ceil().max(1.0) as usize;

    let mut chunks = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (first voiced frame, last voiced frame)
    let mut unvoiced = 0usize;
    let close = |first: usize, last: usize, chunks: &mut Vec<VadChunk>| {
        let start = first * hop;
        let end = (last * hop + frame).min(n);
        chunks.push(VadChunk::new(start as f64 / rate, end as f64 / rate));
    };
    for i in 0..frames {
        let s = &audio.samples[i * hop..i * hop + frame];
        let energy: f64 = s.iter().map(|&x| (x as f64) * (x as f64)).sum();
        if energy > threshold_sq {
            open = Some(match open {
                Some((first, _)) => (first, i),
                None => (i, i),
            });
            unvoiced = 0;
        } else if let Some((first, last)) = open {
            unvoiced += 1;
            if unvoiced >= hangover_frames {
                close(first, last, &mut chunks);
                open = None;
                unvoiced = 0;
            }
        }
    }
    if let Some((first, last)) = open {
        close(first, last, &mut chunks);
    }
    chunks
}

/// Synthetic quality score from clip loudness.
pub fn loudness_score(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let ms = samples.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / samples.len() as f64;
    if ms == 0.0 {
        return 1.0;
    }
    let dbfs = 10.0 * ms.log10();
    (3.8 + dbfs / 20.0).clamp(1.0, 5.0)
}

impl Backend for StubBackend {
    fn hello(&self) -> Result<HelloInfo, GatewayError> {
        Ok(HelloInfo {
            stage: self.stage,
            protocol_version: PROTOCOL_VERSION,
            capabilities: Capabilities {
                max_batch: self.max_batch,
                languages: BTreeSet::new(),
            },
        })
    }

    fn separate(&self, _item: ItemRef<'_>, audio: &AudioBuffer) -> Result<AudioBuffer, GatewayError> {
        Ok(audio.clone())
    }

    fn diarize(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<Vec<SpeakerTurn>, GatewayError> {
        match read_sidecar::<DiarSidecar>(&diarization_sidecar(item.source_path))? {
            Some(sc) => Ok(sc.turns),
            None if audio.frames() == 0 => Ok(Vec::new()),
            None => Ok(vec![SpeakerTurn::new("S0", 0.0, audio.duration_s())]),
        }
    }

    fn vad(
        &self,
        _item: ItemRef<'_>,
        audio: &AudioBuffer,
        window: &VadWindow,
    ) -> Result<Vec<VadChunk>, GatewayError> {
        Ok(energy_vad(audio, window))
    }

    fn transcribe_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<AsrEntry>, GatewayError> {
        let sidecar = read_sidecar::<AsrSidecar>(&transcript_sidecar(item.source_path))?;
        Ok(clips
            .iter()
            .map(|clip| {
                let mid = 0.5 * (clip.start_s + clip.end_s);
                let hit = sidecar
                    .as_ref()
                    .and_then(|sc| sc.segments.iter().find(|e| e.start <= mid && mid < e.end));
                AsrEntry::Ok(match hit {
                    Some(e) => AsrResult {
                        transcript: e.text.clone(),
                        language: e.language.clone(),
                        language_confidence: e.confidence,
                    },
                    None => AsrResult {
                        transcript: String::new(),
                        language: String::new(),
                        language_confidence: 0.0,
                    },
                })
            })
            .collect())
    }

    fn score_batch(&self, _item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<f64>, GatewayError> {
        Ok(clips.iter().map(|c| loudness_score(c.samples)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::compute_dbfs;

    const RATE: u32 = 24_000;

    /// Square wave of +/-a with RMS at `dbfs`.
    fn tone(dbfs: f64, seconds: f64) -> Vec<f32> {
        let a = 10f64.powf(dbfs / 20.0) as f32;
        (0..(seconds * RATE as f64) as usize)
            .map(|i| if (i / 30) % 2 == 0 { a } else { -a })
            .collect()
    }

    fn item(path: &Path) -> ItemRef<'_> {
        ItemRef {
            item_id: "t",
            source_path: path,
        }
    }

    #[test]
    fn five_second_tone_is_one_chunk() {
        let audio = AudioBuffer::mono(tone(-20.0, 5.0), RATE);
        let chunks = energy_vad(&audio, &VadWindow::default());
        assert_eq!(chunks, vec![VadChunk::new(0.0, 5.0)]);
    }

    #[test]
    fn silence_has_no_chunks() {
        let audio = AudioBuffer::mono(vec![0.0; 5 * RATE as usize], RATE);
        assert!(energy_vad(&audio, &VadWindow::default()).is_empty());
    }

    #[test]
    fn one_second_gap_splits_chunks() {
        let mut s = tone(-20.0, 2.0);
        s.extend(vec![0.0; RATE as usize]);
        s.extend(tone(-20.0, 2.0));
        let chunks = energy_vad(&AudioBuffer::mono(s, RATE), &VadWindow::default());
        assert_eq!(chunks.len(), 2);
        // Boundary frames that only partly overlap the tone still count as voiced.
        assert!((chunks[0].start_s - 0.0).abs() < 1e-9);
        assert!((chunks[0].end_s - 2.02).abs() < 0.011, "{:?}", chunks[0]);
        assert!((chunks[1].start_s - 2.98).abs() < 0.011, "{:?}", chunks[1]);
        assert!((chunks[1].end_s - 5.0).abs() < 1e-9);
    }

    #[test]
    fn short_pause_is_bridged_by_hangover() {
        let mut s = tone(-20.0, 1.0);
        s.extend(vec![0.0; RATE as usize / 10]);
        s.extend(tone(-20.0, 1.0));
        let chunks = energy_vad(&AudioBuffer::mono(s, RATE), &VadWindow::default());
        assert_eq!(chunks.len(), 1);
    }

    #[test]
    fn score_formula() {
        let s = tone(-20.0, 0.5);
        assert!((compute_dbfs(&AudioBuffer::mono(s.clone(), RATE)).unwrap() + 20.0).abs() < 1e-5);
        assert!((loudness_score(&s) - 2.8).abs() < 1e-6);
        assert!((loudness_score(&tone(-4.0, 0.5)) - 3.6).abs() < 1e-6);
        assert_eq!(loudness_score(&[0.0; 10]), 1.0);
        let stub = StubBackend::for_stage(Stage::Quality);
        assert!(stub.score_batch(item(Path::new("x.wav")), &[]).unwrap().is_empty());
    }

    #[test]
    fn passthrough_separation() {
        let audio = AudioBuffer::mono(tone(-20.0, 12.0), RATE);
        let out = StubBackend::for_stage(Stage::Separation)
            .separate(item(Path::new("x.wav")), &audio)
            .unwrap();
        assert_eq!(out, audio);
        assert_eq!(out.duration_s(), 12.0);
    }

    #[test]
    fn diarization_defaults_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.wav");
        let audio = AudioBuffer::mono(tone(-20.0, 6.0), RATE);
        let stub = StubBackend::for_stage(Stage::Diarization);
        assert_eq!(
            stub.diarize(item(&src), &audio).unwrap(),
            vec![SpeakerTurn::new("S0", 0.0, 6.0)]
        );
        std::fs::write(
            diarization_sidecar(&src),
            r#"{"turns":[{"speaker":"A","start":0.0,"end":2.5},{"speaker":"B","start":2.5,"end":6.0}]}"#,
        )
        .unwrap();
        assert_eq!(
            stub.diarize(item(&src), &audio).unwrap(),
            vec![SpeakerTurn::new("A", 0.0, 2.5), SpeakerTurn::new("B", 2.5, 6.0)]
        );
    }

    #[test]
    fn transcripts_from_sidecar_by_midpoint() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("b.wav");
        let audio = AudioBuffer::mono(tone(-20.0, 10.0), RATE);
        let stub = StubBackend::for_stage(Stage::Transcription);
        let clip = |a, b| Clip::span("c", &audio, a, b);
        let no_sidecar = stub.transcribe_batch(item(&src), &[clip(0.0, 4.0)]).unwrap();
        assert!(matches!(&no_sidecar[0], AsrEntry::Ok(r) if r.transcript.is_empty()));

        std::fs::write(
            transcript_sidecar(&src),
            r#"{"segments":[{"start":0.0,"end":5.0,"text":"hello world","language":"en"}]}"#,
        )
        .unwrap();
        let out = stub
            .transcribe_batch(item(&src), &[clip(0.0, 4.0), clip(6.0, 9.0)])
            .unwrap();
        assert_eq!(
            out[0],
            AsrEntry::Ok(AsrResult {
                transcript: "hello world".into(),
                language: "en".into(),
                language_confidence: 1.0
            })
        );
        assert!(matches!(&out[1], AsrEntry::Ok(r) if r.transcript.is_empty()));
    }
}
