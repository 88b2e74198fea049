//! Conformance checks for an external worker: handshake, hello-first rule,
//! id echo, malformed-record handling, a stage request on a generated fixture
//! and round-trip timing. Each check uses its own connection.

use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::protocol::{encode_line, parse_reply, Op, Reply, ReplyContext, Request, Response, Status};
use super::remote::{open_line_io, read_wav, write_wav, LineIo};
use super::{BackendDescriptor, GatewayError, Stage, PROTOCOL_VERSION};
use crate::audio::{AudioBuffer, CANONICAL_RATE};

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// `Ok(detail)` on success, `Err(reason)` on failure.
    pub result: Result<String, String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

/// Records that a worker must answer with an error response, keeping the
/// session alive.
const MALFORMED: [&str; 6] = [
    "{not json",
    "[1, 2, 3]",
    r#"{"id": 9001, "op": "teleport", "payload": {}}"#,
    r#"{"id": 9002, "op": "vad", "payload": {"bogus": true}}"#,
    r#"{"id": "nine", "op": "hello", "payload": {}}"#,
    r#"{"id": 9003, "op": "vad", "payload": {}, "extra": 1}"#,
];

struct Probe {
    io: Box<dyn LineIo>,
    timeout: Duration,
    slowest: Duration,
}

impl Probe {
    fn open(d: &BackendDescriptor) -> Result<Self, String> {
        Ok(Self {
            io: open_line_io(&d.transport).map_err(|e| e.to_string())?,
            timeout: d.timeout,
            slowest: Duration::ZERO,
        })
    }

    fn raw(&mut self, line: &str) -> Result<Vec<u8>, GatewayError> {
        let start = Instant::now();
        self.io.send(line)?;
        let reply = self.io.recv(self.timeout)?;
        self.slowest = self.slowest.max(start.elapsed());
        Ok(reply)
    }

    fn call(&mut self, id: u64, op: Op, payload: Value, ctx: &ReplyContext) -> Result<Reply, GatewayError> {
        let line = encode_line(&Request { id, op, payload });
        let reply = self.raw(&line)?;
        parse_reply(&reply, id, op, ctx)
    }

    fn hello(&mut self, id: u64) -> Result<Reply, String> {
        self.call(id, Op::Hello, json!({"protocol_version": PROTOCOL_VERSION}), &ReplyContext::default())
            .map_err(|e| e.to_string())
    }
}

/// A canonical fixture: one second of tone at about -20 dBFS, then one of silence.
fn fixture_audio() -> AudioBuffer {
    let rate = CANONICAL_RATE as usize;
    let samples = (0..2 * rate)
        .map(|i| {
            if i < rate {
                (0.1414 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / rate as f64).sin()) as f32
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::mono(samples, CANONICAL_RATE)
}

/// The stage's own request on the fixture, with the context to validate its reply.
fn stage_request(stage: Stage, scratch: &Path) -> Result<(Op, Value, ReplyContext), String> {
    let audio = fixture_audio();
    let duration = audio.duration_s();
    let input = scratch.join("fixture.wav");
    write_wav(&input, &audio).map_err(|e| e.to_string())?;
    let source = input.clone();
    let whole = ReplyContext {
        duration_s: Some(duration),
        batch_len: None,
    };
    Ok(match stage {
        Stage::Separation => (
            Op::Separate,
            json!({"item": "conformance", "source": source, "audio": input, "output": scratch.join("separated.wav")}),
            whole,
        ),
        Stage::Diarization => (
            Op::Diarize,
            json!({"item": "conformance", "source": source, "audio": input, "duration": duration}),
            whole,
        ),
        Stage::Vad => (
            Op::Vad,
            json!({"item": "conformance", "source": source, "audio": input, "duration": duration,
                   "window": super::VadWindow::default()}),
            whole,
        ),
        Stage::Transcription | Stage::Quality => {
            let items = json!([
                {"audio": input, "start": 0.0, "end": duration},
                {"audio": input, "start": 0.0, "end": duration},
            ]);
            let op = if stage == Stage::Transcription { Op::TranscribeBatch } else { Op::ScoreBatch };
            (
                op,
                json!({"item": "conformance", "source": source, "items": items}),
                ReplyContext {
                    duration_s: None,
                    batch_len: Some(2),
                },
            )
        }
    })
}

fn check_handshake(d: &BackendDescriptor) -> Result<String, String> {
    let mut p = Probe::open(d)?;
    match p.hello(1)? {
        Reply::Hello(h) if h.stage != d.stage => Err(format!("worker serves {}, expected {}", h.stage, d.stage)),
        Reply::Hello(h) if h.protocol_version != PROTOCOL_VERSION => Err(format!(
            "worker speaks protocol {}, engine {PROTOCOL_VERSION}",
            h.protocol_version
        )),
        Reply::Hello(h) => Ok(format!("stage {}, max_batch {}", h.stage, h.capabilities.max_batch)),
        _ => Err("hello answered with another reply kind".into()),
    }
}

fn check_hello_first(d: &BackendDescriptor, scratch: &Path) -> Result<String, String> {
    let mut p = Probe::open(d)?;
    let (op, payload, ctx) = stage_request(d.stage, scratch)?;
    match p.call(5, op, payload, &ctx) {
        Err(GatewayError::Worker(detail)) => Ok(format!("refused: {detail}")),
        Ok(_) => Err("worker served a request before hello".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn check_malformed(d: &BackendDescriptor, scratch: &Path) -> Result<String, String> {
    let mut p = Probe::open(d)?;
    p.hello(1)?;
    for (k, record) in MALFORMED.iter().enumerate() {
        let reply = p.raw(&format!("{record}\n")).map_err(|e| format!("record {k}: {e}"))?;
        let resp: Response = serde_json::from_slice(&reply)
            .map_err(|e| format!("record {k}: answer is not a response: {e}"))?;
        if resp.status != Status::Error || resp.error_detail.is_none() || resp.payload.is_some() {
            return Err(format!("record {k} ({record}) was not answered with an error response"));
        }
    }
    let (op, payload, ctx) = stage_request(d.stage, scratch)?;
    p.call(2, op, payload, &ctx)
        .map_err(|e| format!("session did not survive malformed records: {e}"))?;
    Ok(format!("{} malformed records answered with errors; session still usable", MALFORMED.len()))
}

fn check_id_echo(d: &BackendDescriptor, scratch: &Path) -> Result<String, String> {
    let mut p = Probe::open(d)?;
    p.hello(77)?;
    let (op, payload, ctx) = stage_request(d.stage, scratch)?;
    for id in [41, 7, u32::MAX as u64 + 3] {
        p.call(id, op, payload.clone(), &ctx).map_err(|e| format!("id {id}: {e}"))?;
    }
    Ok("ids 77, 41, 7 and 4294967298 echoed".into())
}

fn check_stage_op(d: &BackendDescriptor, scratch: &Path) -> Result<(String, Duration), String> {
    let mut p = Probe::open(d)?;
    p.hello(1)?;
    let (op, payload, ctx) = stage_request(d.stage, scratch)?;
    let detail = match p.call(2, op, payload, &ctx).map_err(|e| e.to_string())? {
        Reply::Separate(r) => {
            let out = read_wav(&r.audio).map_err(|e| e.to_string())?;
            let want = fixture_audio().duration_s();
            if (out.duration_s() - want).abs() > 1e-3 {
                return Err(format!("separation changed duration {want} s to {} s", out.duration_s()));
            }
            format!("separated audio keeps its {want} s duration")
        }
        Reply::Diarize(r) => format!("{} turn(s)", r.turns.len()),
        Reply::Vad(r) => {
            if r.chunks.iter().any(|c| c.start_s >= 1.5) {
                return Err(format!("voice reported inside the silent second: {:?}", r.chunks));
            }
            format!("{} chunk(s), none in the silent second", r.chunks.len())
        }
        Reply::Transcribe(r) => format!("{} result(s)", r.results.len()),
        Reply::Score(r) => format!("scores {:?}", r.scores),
        Reply::Hello(_) => return Err("stage request answered with hello".into()),
    };
    Ok((detail, p.slowest))
}

/// Runs every check against the worker described by `d`. `scratch` receives
/// the generated fixture audio.
pub fn run_conformance(d: &BackendDescriptor, scratch: &Path) -> Vec<CheckOutcome> {
    let mut out = vec![
        CheckOutcome {
            name: "handshake",
            result: check_handshake(d),
        },
        CheckOutcome {
            name: "hello_first",
            result: check_hello_first(d, scratch),
        },
        CheckOutcome {
            name: "malformed_records",
            result: check_malformed(d, scratch),
        },
        CheckOutcome {
            name: "id_echo",
            result: check_id_echo(d, scratch),
        },
    ];
    let stage_op = check_stage_op(d, scratch);
    out.push(CheckOutcome {
        name: "stage_op",
        result: stage_op.clone().map(|(detail, _)| detail),
    });
    out.push(CheckOutcome {
        name: "timing",
        result: stage_op.and_then(|(_, slowest)| {
            if slowest <= d.timeout {
                Ok(format!("slowest round trip {:.1} ms", slowest.as_secs_f64() * 1e3))
            } else {
                Err(format!("round trip {slowest:?} exceeded {:?}", d.timeout))
            }
        }),
    });
    out
}
