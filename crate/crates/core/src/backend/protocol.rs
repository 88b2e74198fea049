//! Wire format of the worker protocol: one UTF-8 JSON object per line.
//!
//! Requests: `{"id":N,"op":"...","payload":{...}}`.
//! Responses: `{"id":N,"status":"ok","payload":{...}}` or
//! `{"id":N,"status":"error","error_detail":"..."}`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Capabilities, GatewayError, Stage};
use crate::filter::AsrResult;
use crate::segment::{SpeakerTurn, VadChunk};

pub const PROTOCOL_VERSION: u32 = 1;

/// Slack allowed when checking worker timestamps against the audio duration.
pub const TIME_EPSILON_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Hello,
    Separate,
    Diarize,
    Vad,
    TranscribeBatch,
    ScoreBatch,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Hello => "hello",
            Op::Separate => "separate",
            Op::Diarize => "diarize",
            Op::Vad => "vad",
            Op::TranscribeBatch => "transcribe_batch",
            Op::ScoreBatch => "score_batch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Op>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

impl Response {
    pub fn ok(id: u64, op: Op, payload: Value) -> Self {
        Self {
            id,
            op: Some(op),
            status: Status::Ok,
            payload: Some(payload),
            error_detail: None,
        }
    }

    pub fn error(id: u64, op: Option<Op>, detail: impl Into<String>) -> Self {
        Self {
            id,
            op,
            status: Status::Error,
            payload: None,
            error_detail: Some(detail.into()),
        }
    }
}

/// Serializes a message as one line, newline included.
pub fn encode_line<T: Serialize>(msg: &T) -> String {
    let mut s = serde_json::to_string(msg).expect("protocol messages serialize");
    s.push('\n');
    s
}

// ---- payloads -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloRequest {
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloReply {
    pub stage: Stage,
    pub protocol_version: u32,
    pub capabilities: Capabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateRequest {
    pub item: String,
    pub source: PathBuf,
    pub audio: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateReply {
    pub audio: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiarizeRequest {
    pub item: String,
    pub source: PathBuf,
    pub audio: PathBuf,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiarizeReply {
    pub turns: Vec<SpeakerTurn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadWindow {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub threshold_dbfs: f64,
    pub hangover_ms: f64,
}

impl VadWindow {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.frame_ms.is_finite() && self.frame_ms > 0.0) {
            return Err(format!("frame_ms must be positive, got {}", self.frame_ms));
        }
        if !(self.hop_ms.is_finite() && self.hop_ms > 0.0) {
            return Err(format!("hop_ms must be positive, got {}", self.hop_ms));
        }
        if !self.threshold_dbfs.is_finite() {
            return Err("threshold_dbfs must be finite".to_string());
        }
        if !(self.hangover_ms.is_finite() && self.hangover_ms >= 0.0) {
            return Err(format!("hangover_ms must be >= 0, got {}", self.hangover_ms));
        }
        Ok(())
    }
}

impl Default for VadWindow {
    fn default() -> Self {
        Self {
            frame_ms: 30.0,
            hop_ms: 10.0,
            threshold_dbfs: -40.0,
            hangover_ms: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VadRequest {
    pub item: String,
    pub source: PathBuf,
    pub audio: PathBuf,
    pub duration: f64,
    pub window: VadWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VadReply {
    pub chunks: Vec<VadChunk>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub audio: PathBuf,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRequest {
    pub item: String,
    pub source: PathBuf,
    pub items: Vec<ClipEntry>,
}

/// One transcription result, or a per-item error marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AsrEntry {
    Ok(AsrResult),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscribeReply {
    pub results: Vec<AsrEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreReply {
    pub scores: Vec<f64>,
}

/// A decoded, validated response payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Hello(HelloReply),
    Separate(SeparateReply),
    Diarize(DiarizeReply),
    Vad(VadReply),
    Transcribe(TranscribeReply),
    Score(ScoreReply),
}

/// What the engine knows about the pending request, for semantic checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplyContext {
    pub duration_s: Option<f64>,
    pub batch_len: Option<usize>,
}

fn violation(msg: impl Into<String>) -> GatewayError {
    GatewayError::ProtocolViolation(msg.into())
}

fn typed<T: serde::de::DeserializeOwned>(op: Op, payload: Value) -> Result<T, GatewayError> {
    serde_json::from_value(payload)
        .map_err(|e| violation(format!("bad {} payload: {e}", op.as_str())))
}

/// Turns sorted by start, each with `0 <= start < end <= duration`.
pub fn validate_turns(turns: &[SpeakerTurn], duration_s: Option<f64>) -> Result<(), GatewayError> {
    let limit = duration_s.map_or(f64::INFINITY, |d| d + TIME_EPSILON_S);
    for (i, t) in turns.iter().enumerate() {
        if !(t.start_s.is_finite() && t.end_s.is_finite()) {
            return Err(violation(format!("turn {i} has non-finite bounds")));
        }
        if !(0.0 <= t.start_s && t.start_s < t.end_s) {
            return Err(violation(format!("turn {i} has bounds [{}, {}]", t.start_s, t.end_s)));
        }
        if t.end_s > limit {
            return Err(violation(format!("turn {i} ends at {} past the audio end", t.end_s)));
        }
        if i > 0 && turns[i - 1].start_s > t.start_s {
            return Err(violation("turns are not sorted by start"));
        }
    }
    Ok(())
}

/// Chunks sorted, non-overlapping, inside `[0, duration]`.
pub fn validate_chunks(chunks: &[VadChunk], duration_s: Option<f64>) -> Result<(), GatewayError> {
    let limit = duration_s.map_or(f64::INFINITY, |d| d + TIME_EPSILON_S);
    for (i, c) in chunks.iter().enumerate() {
        if !(c.start_s.is_finite() && c.end_s.is_finite()) {
            return Err(violation(format!("chunk {i} has non-finite bounds")));
        }
        if !(0.0 <= c.start_s && c.start_s < c.end_s && c.end_s <= limit) {
            return Err(violation(format!("chunk {i} has bounds [{}, {}]", c.start_s, c.end_s)));
        }
        if i > 0 && chunks[i - 1].end_s > c.start_s {
            return Err(violation(format!("chunk {i} overlaps its predecessor")));
        }
    }
    Ok(())
}

pub fn validate_asr(results: &[AsrEntry], batch_len: Option<usize>) -> Result<(), GatewayError> {
    if let Some(n) = batch_len {
        if results.len() != n {
            return Err(violation(format!("expected {n} results, got {}", results.len())));
        }
    }
    for (i, r) in results.iter().enumerate() {
        if let AsrEntry::Ok(r) = r {
            if !(0.0..=1.0).contains(&r.language_confidence) {
                return Err(violation(format!(
                    "result {i} language_confidence {} outside [0, 1]",
                    r.language_confidence
                )));
            }
        }
    }
    Ok(())
}

pub fn validate_scores(scores: &[f64], batch_len: Option<usize>) -> Result<(), GatewayError> {
    if let Some(n) = batch_len {
        if scores.len() != n {
            return Err(violation(format!("expected {n} scores, got {}", scores.len())));
        }
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(violation(format!("score {i} is not finite")));
    }
    Ok(())
}

/// Parses one response line for the request `(expected_id, op)`.
///
/// Any framing, schema or semantic problem is a `ProtocolViolation`; a
/// well-formed error response becomes `GatewayError::Worker`.
pub fn parse_reply(
    line: &[u8],
    expected_id: u64,
    op: Op,
    ctx: &ReplyContext,
) -> Result<Reply, GatewayError> {
    let text = std::str::from_utf8(line).map_err(|_| violation("record is not valid UTF-8"))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if text.contains('\n') {
        return Err(violation("record spans more than one line"));
    }
    if text.trim().is_empty() {
        return Err(violation("empty record"));
    }
    let resp: Response =
        serde_json::from_str(text).map_err(|e| violation(format!("malformed record: {e}")))?;
    if resp.id != expected_id {
        return Err(violation(format!(
            "response id {} does not match pending request {expected_id}",
            resp.id
        )));
    }
    if let Some(echo) = resp.op {
        if echo != op {
            return Err(violation(format!(
                "response op {} does not match request op {}",
                echo.as_str(),
                op.as_str()
            )));
        }
    }
    let payload = match resp.status {
        Status::Error => {
            if resp.payload.is_some() {
                return Err(violation("error response carries a payload"));
            }
            let detail = resp
                .error_detail
                .ok_or_else(|| violation("error response without error_detail"))?;
            return Err(GatewayError::Worker(detail));
        }
        Status::Ok => {
            if resp.error_detail.is_some() {
                return Err(violation("ok response carries error_detail"));
            }
            match resp.payload {
                Some(p @ Value::Object(_)) => p,
                Some(_) => return Err(violation("payload is not an object")),
                None => return Err(violation("ok response without payload")),
            }
        }
    };

    let reply = match op {
        Op::Hello => {
            let h: HelloReply = typed(op, payload)?;
            if h.capabilities.max_batch == 0 {
                return Err(violation("max_batch must be at least 1"));
            }
            Reply::Hello(h)
        }
        Op::Separate => {
            let s: SeparateReply = typed(op, payload)?;
            if s.audio.as_os_str().is_empty() {
                return Err(violation("separate reply has an empty audio path"));
            }
            Reply::Separate(s)
        }
        Op::Diarize => {
            let d: DiarizeReply = typed(op, payload)?;
            validate_turns(&d.turns, ctx.duration_s)?;
            Reply::Diarize(d)
        }
        Op::Vad => {
            let v: VadReply = typed(op, payload)?;
            validate_chunks(&v.chunks, ctx.duration_s)?;
            Reply::Vad(v)
        }
        Op::TranscribeBatch => {
            let t: TranscribeReply = typed(op, payload)?;
            validate_asr(&t.results, ctx.batch_len)?;
            Reply::Transcribe(t)
        }
        Op::ScoreBatch => {
            let s: ScoreReply = typed(op, payload)?;
            validate_scores(&s.scores, ctx.batch_len)?;
            Reply::Score(s)
        }
    };
    Ok(reply)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(duration: f64, batch: usize) -> ReplyContext {
        ReplyContext {
            duration_s: Some(duration),
            batch_len: Some(batch),
        }
    }

    #[test]
    fn hello_round_trip() {
        let line = br#"{"id":1,"status":"ok","payload":{"stage":"vad","protocol_version":1,"capabilities":{"max_batch":1,"languages":[]}}}"#;
        let Reply::Hello(h) = parse_reply(line, 1, Op::Hello, &ReplyContext::default()).unwrap() else {
            panic!("expected hello");
        };
        assert_eq!(h.stage, Stage::Vad);
        assert_eq!(h.capabilities.max_batch, 1);
    }

    #[test]
    fn turn_past_duration_is_violation() {
        let line = br#"{"id":4,"status":"ok","payload":{"turns":[{"speaker":"S0","start":0.0,"end":12.5}]}}"#;
        let err = parse_reply(line, 4, Op::Diarize, &ctx(12.0, 0)).unwrap_err();
        assert!(matches!(err, GatewayError::ProtocolViolation(_)), "{err:?}");
    }

    #[test]
    fn id_mismatch_is_violation() {
        let line = br#"{"id":3,"status":"ok","payload":{"scores":[]}}"#;
        assert!(matches!(
            parse_reply(line, 2, Op::ScoreBatch, &ctx(1.0, 0)),
            Err(GatewayError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn worker_error_is_not_violation() {
        let line = br#"{"id":2,"status":"error","error_detail":"model not loaded"}"#;
        assert_eq!(
            parse_reply(line, 2, Op::Vad, &ctx(1.0, 0)),
            Err(GatewayError::Worker("model not loaded".into()))
        );
    }

    #[test]
    fn per_item_asr_errors_parse() {
        let line = br#"{"id":9,"status":"ok","payload":{"results":[{"transcript":"hi","language":"en","language_confidence":0.9},{"error":"oom"}]}}"#;
        let Reply::Transcribe(t) = parse_reply(line, 9, Op::TranscribeBatch, &ctx(1.0, 2)).unwrap() else {
            panic!()
        };
        assert!(matches!(t.results[1], AsrEntry::Failed { .. }));
    }

    #[test]
    fn count_mismatch_is_violation() {
        let line = br#"{"id":9,"status":"ok","payload":{"scores":[3.0]}}"#;
        assert!(matches!(
            parse_reply(line, 9, Op::ScoreBatch, &ctx(1.0, 2)),
            Err(GatewayError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn request_encoding_is_one_line() {
        let req = Request {
            id: 7,
            op: Op::TranscribeBatch,
            payload: serde_json::json!({"items": []}),
        };
        let line = encode_line(&req);
        assert_eq!(line, "{\"id\":7,\"op\":\"transcribe_batch\",\"payload\":{\"items\":[]}}\n");
    }
}
