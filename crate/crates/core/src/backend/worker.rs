//! Worker side of the protocol: a request loop that serves any [`Backend`].
//!
//! The stub worker executable and in-process socket tests both run this loop.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::protocol::{
    encode_line, BatchRequest, DiarizeReply, DiarizeRequest, HelloReply, HelloRequest, Op, Request,
    Response, ScoreReply, SeparateReply, SeparateRequest, TranscribeReply, VadReply, VadRequest,
};
use super::remote::read_wav;
use super::{Backend, Clip, GatewayError, ItemRef};
use crate::audio::{encode_wav, AudioBuffer};

fn payload<T: DeserializeOwned>(v: Value) -> Result<T, String> {
    serde_json::from_value(v).map_err(|e| format!("bad payload: {e}"))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reply serializes")
}

fn gw(e: GatewayError) -> String {
    e.to_string()
}

fn dispatch(backend: &dyn Backend, op: Op, body: Value) -> Result<Value, String> {
    match op {
        Op::Hello => {
            let _req: HelloRequest = payload(body)?;
            let h = backend.hello().map_err(gw)?;
            Ok(to_value(&HelloReply {
                stage: h.stage,
                protocol_version: h.protocol_version,
                capabilities: h.capabilities,
            }))
        }
        Op::Separate => {
            let req: SeparateRequest = payload(body)?;
            let audio = read_wav(&req.audio).map_err(gw)?;
            let item = ItemRef {
                item_id: &req.item,
                source_path: &req.source,
            };
            let out = backend.separate(item, &audio).map_err(gw)?;
            if let Some(dir) = req.output.parent() {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            }
            std::fs::write(&req.output, encode_wav(&out)).map_err(|e| e.to_string())?;
            Ok(to_value(&SeparateReply { audio: req.output }))
        }
        Op::Diarize => {
            let req: DiarizeRequest = payload(body)?;
            let audio = read_wav(&req.audio).map_err(gw)?;
            let item = ItemRef {
                item_id: &req.item,
                source_path: &req.source,
            };
            let turns = backend.diarize(item, &audio).map_err(gw)?;
            Ok(to_value(&DiarizeReply { turns }))
        }
        Op::Vad => {
            let req: VadRequest = payload(body)?;
            let audio = read_wav(&req.audio).map_err(gw)?;
            let item = ItemRef {
                item_id: &req.item,
                source_path: &req.source,
            };
            let chunks = backend.vad(item, &audio, &req.window).map_err(gw)?;
            Ok(to_value(&VadReply { chunks }))
        }
        Op::TranscribeBatch | Op::ScoreBatch => {
            let req: BatchRequest = payload(body)?;
            let buffers: Vec<AudioBuffer> = req
                .items
                .iter()
                .map(|c| read_wav(&c.audio))
                .collect::<Result<_, _>>()
                .map_err(gw)?;
            let labels: Vec<String> = (0..buffers.len()).map(|i| i.to_string()).collect();
            let clips: Vec<Clip> = req
                .items
                .iter()
                .zip(&buffers)
                .zip(&labels)
                .map(|((c, b), label)| Clip {
                    label,
                    samples: &b.samples,
                    sample_rate: b.sample_rate,
                    start_s: c.start,
                    end_s: c.end,
                })
                .collect();
            let item = ItemRef {
                item_id: &req.item,
                source_path: &req.source,
            };
            if op == Op::TranscribeBatch {
                let results = backend.transcribe_batch(item, &clips).map_err(gw)?;
                Ok(to_value(&TranscribeReply { results }))
            } else {
                let scores = backend.score_batch(item, &clips).map_err(gw)?;
                Ok(to_value(&ScoreReply { scores }))
            }
        }
    }
}

/// Best-effort id recovery from a record that failed to parse as a request.
fn salvage_id(line: &str) -> u64 {
    serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(Value::as_u64))
        .unwrap_or(0)
}

/// Answers one request record. Malformed records get an error response and
/// never end the session.
pub fn handle_line(backend: &dyn Backend, line: &[u8], greeted: &mut bool) -> Response {
    let Ok(text) = std::str::from_utf8(line) else {
        return Response::error(0, None, "record is not valid UTF-8");
    };
    let text = text.trim_end_matches(['\r', '\n']);
    let req: Request = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return Response::error(salvage_id(text), None, format!("malformed request: {e}")),
    };
    if req.op != Op::Hello && !*greeted {
        return Response::error(req.id, Some(req.op), "hello must precede other ops");
    }
    let body = if req.payload.is_null() { json!({}) } else { req.payload };
    match dispatch(backend, req.op, body) {
        Ok(v) => {
            if req.op == Op::Hello {
                *greeted = true;
            }
            Response::ok(req.id, req.op, v)
        }
        Err(detail) => Response::error(req.id, Some(req.op), detail),
    }
}

/// Serves requests until the reader reaches end of input.
pub fn serve<R: BufRead, W: Write>(mut reader: R, mut writer: W, backend: &dyn Backend) -> io::Result<()> {
    let mut greeted = false;
    loop {
        let mut line = Vec::new();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(());
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let resp = handle_line(backend, &line, &mut greeted);
        writer.write_all(encode_line(&resp).as_bytes())?;
        writer.flush()?;
    }
}
