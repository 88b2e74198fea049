//! Pluggable backends for the model-dependent stages.
//!
//! The engine talks to every stage through [`Backend`]. Built-in stubs run
//! in-process; external workers speak the line protocol in [`protocol`] over
//! a subprocess's standard streams or a local socket, exchanging audio as
//! WAV files under a run-scoped exchange directory.

pub mod conformance;
pub mod protocol;
mod remote;
pub mod stub;
pub mod worker;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use protocol::{VadWindow, PROTOCOL_VERSION};
pub use remote::{ExchangeDir, RemoteBackend};
pub use stub::StubBackend;

use crate::audio::{AudioBuffer, AudioError};
use crate::filter::{AsrResult, QualityScore};
use crate::segment::{SpeakerTurn, VadChunk};
use protocol::{validate_asr, validate_chunks, validate_scores, validate_turns, AsrEntry};

/// Default per-request timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Separation,
    Diarization,
    Vad,
    Transcription,
    Quality,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Separation,
        Stage::Diarization,
        Stage::Vad,
        Stage::Transcription,
        Stage::Quality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Separation => "separation",
            Stage::Diarization => "diarization",
            Stage::Vad => "vad",
            Stage::Transcription => "transcription",
            Stage::Quality => "quality",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capabilities {
    pub max_batch: usize,
    #[serde(default)]
    pub languages: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloInfo {
    pub stage: Stage,
    pub protocol_version: u32,
    pub capabilities: Capabilities,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transport {
    /// Worker executable speaking the protocol on stdin/stdout.
    Subprocess { command: Vec<String> },
    /// Worker already listening on a Unix domain socket.
    Socket { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub stage: Stage,
    pub transport: Transport,
    pub timeout: Duration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("could not connect to worker: {0}")]
    ConnectFailed(String),
    #[error("worker speaks protocol version {worker}, engine speaks {engine}")]
    ProtocolVersionMismatch { engine: u32, worker: u32 },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("worker crashed: {0}")]
    WorkerCrash(String),
    #[error("worker timed out after {0:?}")]
    Timeout(Duration),
    #[error("worker reported an error: {0}")]
    Worker(String),
    #[error("{} batch item(s) failed: {}", .0.len(), .0.iter().map(|(i, e)| format!("#{i}: {e}")).collect::<Vec<_>>().join("; "))]
    PartialBatch(Vec<(usize, String)>),
    #[error("exchange I/O: {0}")]
    Io(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Identity of the source item a request belongs to.
#[derive(Debug, Clone, Copy)]
pub struct ItemRef<'a> {
    pub item_id: &'a str,
    pub source_path: &'a Path,
}

/// A time window of an item's audio.
#[derive(Debug, Clone, Copy)]
pub struct Clip<'a> {
    /// Name unique within the item and request kind; used for exchange file names.
    pub label: &'a str,
    pub samples: &'a [f32],
    pub sample_rate: u32,
    /// Position of the window in the source item, seconds.
    pub start_s: f64,
    pub end_s: f64,
}

impl<'a> Clip<'a> {
    pub fn whole(label: &'a str, audio: &'a AudioBuffer) -> Self {
        Self {
            label,
            samples: &audio.samples,
            sample_rate: audio.sample_rate,
            start_s: 0.0,
            end_s: audio.duration_s(),
        }
    }

    pub fn span(label: &'a str, audio: &'a AudioBuffer, start_s: f64, end_s: f64) -> Self {
        Self {
            label,
            samples: &audio.samples[audio.frame_range(start_s, end_s)],
            sample_rate: audio.sample_rate,
            start_s,
            end_s,
        }
    }
}

/// One model-dependent stage implementation.
///
/// Implementations return raw results; [`Gateway`] batches requests and
/// validates every response before the engine uses it.
pub trait Backend: Send + Sync {
    fn hello(&self) -> Result<HelloInfo, GatewayError>;
    fn separate(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<AudioBuffer, GatewayError>;
    fn diarize(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<Vec<SpeakerTurn>, GatewayError>;
    fn vad(
        &self,
        item: ItemRef<'_>,
        audio: &AudioBuffer,
        window: &VadWindow,
    ) -> Result<Vec<VadChunk>, GatewayError>;
    fn transcribe_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<AsrEntry>, GatewayError>;
    fn score_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<f64>, GatewayError>;
}

/// Connects a descriptor, handshaking and checking the advertised stage.
pub fn handshake(backend: &dyn Backend, expected: Stage) -> Result<Capabilities, GatewayError> {
    let hello = backend.hello()?;
    if hello.protocol_version != PROTOCOL_VERSION {
        return Err(GatewayError::ProtocolVersionMismatch {
            engine: PROTOCOL_VERSION,
            worker: hello.protocol_version,
        });
    }
    if hello.stage != expected {
        return Err(GatewayError::ProtocolViolation(format!(
            "worker serves stage {}, expected {}",
            hello.stage, expected
        )));
    }
    if hello.capabilities.max_batch == 0 {
        return Err(GatewayError::ProtocolViolation("max_batch must be at least 1".into()));
    }
    Ok(hello.capabilities)
}

struct StageHandle {
    backend: Arc<dyn Backend>,
    caps: Capabilities,
}

/// The engine's view of all five stage backends.
pub struct Gateway {
    handles: Vec<StageHandle>,
    window: VadWindow,
}

impl Gateway {
    /// Handshakes every backend; `backends` is indexed like [`Stage::ALL`].
    pub fn connect(
        backends: [Arc<dyn Backend>; 5],
        window: VadWindow,
    ) -> Result<Self, (Stage, GatewayError)> {
        let mut handles = Vec::with_capacity(5);
        for (stage, backend) in Stage::ALL.into_iter().zip(backends) {
            let caps = handshake(backend.as_ref(), stage).map_err(|e| (stage, e))?;
            handles.push(StageHandle { backend, caps });
        }
        Ok(Self { handles, window })
    }

    /// All stages served by built-in stubs.
    pub fn stubs(window: VadWindow) -> Self {
        let backends = Stage::ALL.map(|s| Arc::new(StubBackend::for_stage(s)) as Arc<dyn Backend>);
        Self::connect(backends, window).expect("stub handshake")
    }

    fn handle(&self, stage: Stage) -> &StageHandle {
        &self.handles[stage as usize]
    }

    pub fn capabilities(&self, stage: Stage) -> &Capabilities {
        &self.handle(stage).caps
    }

    pub fn separate(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<AudioBuffer, GatewayError> {
        let out = self.handle(Stage::Separation).backend.separate(item, audio)?;
        if out.sample_rate != audio.sample_rate
            || out.channel_count != audio.channel_count
            || out.frames() != audio.frames()
        {
            return Err(GatewayError::ProtocolViolation(format!(
                "separation changed the audio shape ({} frames @ {} Hz -> {} frames @ {} Hz)",
                audio.frames(),
                audio.sample_rate,
                out.frames(),
                out.sample_rate
            )));
        }
        Ok(out)
    }

    pub fn diarize(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<Vec<SpeakerTurn>, GatewayError> {
        let turns = self.handle(Stage::Diarization).backend.diarize(item, audio)?;
        validate_turns(&turns, Some(audio.duration_s()))?;
        Ok(turns)
    }

    pub fn vad(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<Vec<VadChunk>, GatewayError> {
        let chunks = self.handle(Stage::Vad).backend.vad(item, audio, &self.window)?;
        validate_chunks(&chunks, Some(audio.duration_s()))?;
        Ok(chunks)
    }

    /// Splits `clips` into requests of at most `max_batch`; one entry per
    /// clip, `Err` where the worker marked that clip as failed.
    pub fn transcribe_each(
        &self,
        item: ItemRef<'_>,
        clips: &[Clip<'_>],
    ) -> Result<Vec<Result<AsrResult, String>>, GatewayError> {
        let h = self.handle(Stage::Transcription);
        let mut out = Vec::with_capacity(clips.len());
        for batch in clips.chunks(h.caps.max_batch) {
            let results = h.backend.transcribe_batch(item, batch)?;
            validate_asr(&results, Some(batch.len()))?;
            out.extend(results.into_iter().map(|r| match r {
                AsrEntry::Ok(r) => Ok(r),
                AsrEntry::Failed { error } => Err(error),
            }));
        }
        Ok(out)
    }

    /// Like [`Gateway::transcribe_each`], failing with `PartialBatch` if any clip failed.
    pub fn transcribe(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<AsrResult>, GatewayError> {
        let mut out = Vec::with_capacity(clips.len());
        let mut failed = Vec::new();
        for (i, r) in self.transcribe_each(item, clips)?.into_iter().enumerate() {
            match r {
                Ok(r) => out.push(r),
                Err(e) => failed.push((i, e)),
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(GatewayError::PartialBatch(failed))
        }
    }

    pub fn score(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<QualityScore>, GatewayError> {
        let h = self.handle(Stage::Quality);
        let mut out = Vec::with_capacity(clips.len());
        for batch in clips.chunks(h.caps.max_batch) {
            let scores = h.backend.score_batch(item, batch)?;
            validate_scores(&scores, Some(batch.len()))?;
            out.extend(scores.into_iter().map(QualityScore));
        }
        Ok(out)
    }
}
