use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use super::protocol::{
    encode_line, parse_reply, AsrEntry, BatchRequest, ClipEntry, DiarizeRequest, HelloRequest,
    Op, Reply, ReplyContext, Request, SeparateRequest, VadRequest, VadWindow, PROTOCOL_VERSION,
};
use super::{
    Backend, BackendDescriptor, Clip, GatewayError, HelloInfo, ItemRef, Transport,
};
use crate::audio::{decode, encode_wav, AudioBuffer};
use crate::segment::{SpeakerTurn, VadChunk};

/// Run-scoped directory through which audio crosses to workers.
///
/// Layout: `<root>/<run_id>/<item_id>/<op>.wav` for whole-item audio and
/// `<root>/<run_id>/<item_id>/<op>/<clip>.wav` for batched clips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeDir {
    run_root: PathBuf,
}

impl ExchangeDir {
    pub fn new(root: &Path, run_id: &str) -> Self {
        Self {
            run_root: root.join(run_id),
        }
    }

    pub fn run_root(&self) -> &Path {
        &self.run_root
    }

    pub fn item_dir(&self, item_id: &str) -> PathBuf {
        self.run_root.join(item_id)
    }

    pub fn op_file(&self, item_id: &str, name: &str) -> PathBuf {
        self.item_dir(item_id).join(format!("{name}.wav"))
    }

    pub fn clip_file(&self, item_id: &str, op: Op, label: &str) -> PathBuf {
        self.item_dir(item_id).join(op.as_str()).join(format!("{label}.wav"))
    }

    pub fn clear_item(&self, item_id: &str) {
        let _ = std::fs::remove_dir_all(self.item_dir(item_id));
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<(), GatewayError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, encode_wav(buf)).map_err(|e| io_err(path, e))
}

pub(crate) fn read_wav(path: &Path) -> Result<AudioBuffer, GatewayError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(decode(&bytes)?)
}

/// One newline-framed connection to a worker.
pub(crate) trait LineIo: Send {
    fn send(&mut self, line: &str) -> Result<(), GatewayError>;
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, GatewayError>;
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<Vec<u8>>,
}

impl ChildIo {
    fn spawn(command: &[String]) -> Result<Self, GatewayError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| GatewayError::ConnectFailed("empty worker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GatewayError::ConnectFailed(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = Vec::new();
                match reader.read_until(b'\n', &mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exit_detail(&mut self) -> String {
        match self.child.wait() {
            Ok(status) => format!("worker exited with {status}"),
            Err(e) => format!("worker lost: {e}"),
        }
    }
}

impl LineIo for ChildIo {
    fn send(&mut self, line: &str) -> Result<(), GatewayError> {
        if let Err(e) = self
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
        {
            let _ = self.child.kill();
            return Err(GatewayError::WorkerCrash(format!("{e}; {}", self.exit_detail())));
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, GatewayError> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                let _ = self.child.wait();
                Err(GatewayError::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(GatewayError::WorkerCrash(self.exit_detail())),
        }
    }
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct SocketIo {
    writer: UnixStream,
    reader: BufReader<UnixStream>,
}

impl SocketIo {
    fn connect(path: &Path) -> Result<Self, GatewayError> {
        let stream = UnixStream::connect(path)
            .map_err(|e| GatewayError::ConnectFailed(format!("{}: {e}", path.display())))?;
        let reader = stream
            .try_clone()
            .map_err(|e| GatewayError::ConnectFailed(e.to_string()))?;
        Ok(Self {
            writer: stream,
            reader: BufReader::new(reader),
        })
    }
}

impl LineIo for SocketIo {
    fn send(&mut self, line: &str) -> Result<(), GatewayError> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| GatewayError::WorkerCrash(e.to_string()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, GatewayError> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(timeout))
            .map_err(|e| GatewayError::WorkerCrash(e.to_string()))?;
        let mut line = Vec::new();
        match self.reader.read_until(b'\n', &mut line) {
            Ok(0) => Err(GatewayError::WorkerCrash("connection closed".into())),
            Ok(_) => Ok(line),
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                Err(GatewayError::Timeout(timeout))
            }
            Err(e) => Err(GatewayError::WorkerCrash(e.to_string())),
        }
    }
}

/// One connection: ids increase from 1, hello first, one request in flight.
struct Session {
    io: Box<dyn LineIo>,
    next_id: u64,
    hello: Option<HelloInfo>,
}

/// Opens a raw connection without any handshake.
pub(crate) fn open_line_io(transport: &Transport) -> Result<Box<dyn LineIo>, GatewayError> {
    Ok(match transport {
        Transport::Subprocess { command } => Box::new(ChildIo::spawn(command)?),
        Transport::Socket { path } => Box::new(SocketIo::connect(path)?),
    })
}

impl Session {
    fn open(transport: &Transport, timeout: Duration) -> Result<Self, GatewayError> {
        let io = open_line_io(transport)?;
        let mut session = Self {
            io,
            next_id: 1,
            hello: None,
        };
        let payload = HelloRequest {
            protocol_version: PROTOCOL_VERSION,
        };
        let reply = session.request(Op::Hello, &payload, &ReplyContext::default(), timeout)?;
        let Reply::Hello(h) = reply else {
            unreachable!("hello request yields hello reply")
        };
        if h.protocol_version != PROTOCOL_VERSION {
            return Err(GatewayError::ProtocolVersionMismatch {
                engine: PROTOCOL_VERSION,
                worker: h.protocol_version,
            });
        }
        session.hello = Some(HelloInfo {
            stage: h.stage,
            protocol_version: h.protocol_version,
            capabilities: h.capabilities,
        });
        Ok(session)
    }

    fn request<P: Serialize>(
        &mut self,
        op: Op,
        payload: &P,
        ctx: &ReplyContext,
        timeout: Duration,
    ) -> Result<Reply, GatewayError> {
        if op != Op::Hello && self.hello.is_none() {
            return Err(GatewayError::ProtocolViolation("hello must precede other ops".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            id,
            op,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        };
        self.io.send(&encode_line(&req))?;
        let line = self.io.recv(timeout)?;
        parse_reply(&line, id, op, ctx)
    }
}

/// A stage served by external worker processes or sockets.
///
/// Connections are pooled: each request checks one out, and only connections
/// that completed their request cleanly go back to the pool.
pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    exchange: ExchangeDir,
    idle: Mutex<Vec<Session>>,
}

impl RemoteBackend {
    pub fn new(descriptor: BackendDescriptor, exchange: ExchangeDir) -> Self {
        Self {
            descriptor,
            exchange,
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn checkout(&self) -> Result<Session, GatewayError> {
        if let Some(s) = self.idle.lock().expect("pool lock").pop() {
            return Ok(s);
        }
        Session::open(&self.descriptor.transport, self.descriptor.timeout)
    }

    fn call<P: Serialize>(&self, op: Op, payload: &P, ctx: ReplyContext) -> Result<Reply, GatewayError> {
        let mut session = self.checkout()?;
        let result = session.request(op, payload, &ctx, self.descriptor.timeout);
        match &result {
            // The connection is still in a known state after these.
            Ok(_) | Err(GatewayError::Worker(_)) => self.idle.lock().expect("pool lock").push(session),
            Err(_) => drop(session),
        }
        result
    }

    fn clip_entries(&self, item: ItemRef<'_>, op: Op, clips: &[Clip<'_>]) -> Result<Vec<ClipEntry>, GatewayError> {
        clips
            .iter()
            .map(|c| {
                let path = self.exchange.clip_file(item.item_id, op, c.label);
                write_wav(&path, &AudioBuffer::mono(c.samples.to_vec(), c.sample_rate))?;
                Ok(ClipEntry {
                    audio: path,
                    start: c.start_s,
                    end: c.end_s,
                })
            })
            .collect()
    }
}

fn unexpected(op: Op) -> GatewayError {
    GatewayError::ProtocolViolation(format!("unexpected reply kind for {}", op.as_str()))
}

impl Backend for RemoteBackend {
    fn hello(&self) -> Result<HelloInfo, GatewayError> {
        let session = self.checkout()?;
        let hello = session.hello.clone().expect("open sessions are greeted");
        self.idle.lock().expect("pool lock").push(session);
        Ok(hello)
    }

    fn separate(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<AudioBuffer, GatewayError> {
        let input = self.exchange.op_file(item.item_id, "separate");
        let output = self.exchange.op_file(item.item_id, "separate.out");
        write_wav(&input, audio)?;
        let req = SeparateRequest {
            item: item.item_id.to_string(),
            source: item.source_path.to_path_buf(),
            audio: input,
            output,
        };
        match self.call(Op::Separate, &req, ReplyContext::default())? {
            Reply::Separate(r) => read_wav(&r.audio),
            _ => Err(unexpected(Op::Separate)),
        }
    }

    fn diarize(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<Vec<SpeakerTurn>, GatewayError> {
        let path = self.exchange.op_file(item.item_id, "diarize");
        write_wav(&path, audio)?;
        let duration = audio.duration_s();
        let req = DiarizeRequest {
            item: item.item_id.to_string(),
            source: item.source_path.to_path_buf(),
            audio: path,
            duration,
        };
        let ctx = ReplyContext {
            duration_s: Some(duration),
            batch_len: None,
        };
        match self.call(Op::Diarize, &req, ctx)? {
            Reply::Diarize(r) => Ok(r.turns),
            _ => Err(unexpected(Op::Diarize)),
        }
    }

    fn vad(&self, item: ItemRef<'_>, audio: &AudioBuffer, window: &VadWindow) -> Result<Vec<VadChunk>, GatewayError> {
        let path = self.exchange.op_file(item.item_id, "vad");
        write_wav(&path, audio)?;
        let duration = audio.duration_s();
        let req = VadRequest {
            item: item.item_id.to_string(),
            source: item.source_path.to_path_buf(),
            audio: path,
            duration,
            window: *window,
        };
        let ctx = ReplyContext {
            duration_s: Some(duration),
            batch_len: None,
        };
        match self.call(Op::Vad, &req, ctx)? {
            Reply::Vad(r) => Ok(r.chunks),
            _ => Err(unexpected(Op::Vad)),
        }
    }

    fn transcribe_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<AsrEntry>, GatewayError> {
        let req = BatchRequest {
            item: item.item_id.to_string(),
            source: item.source_path.to_path_buf(),
            items: self.clip_entries(item, Op::TranscribeBatch, clips)?,
        };
        let ctx = ReplyContext {
            duration_s: None,
            batch_len: Some(clips.len()),
        };
        match self.call(Op::TranscribeBatch, &req, ctx)? {
            Reply::Transcribe(r) => Ok(r.results),
            _ => Err(unexpected(Op::TranscribeBatch)),
        }
    }

    fn score_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<f64>, GatewayError> {
        if clips.is_empty() {
            return Ok(Vec::new());
        }
        let req = BatchRequest {
            item: item.item_id.to_string(),
            source: item.source_path.to_path_buf(),
            items: self.clip_entries(item, Op::ScoreBatch, clips)?,
        };
        let ctx = ReplyContext {
            duration_s: None,
            batch_len: Some(clips.len()),
        };
        match self.call(Op::ScoreBatch, &req, ctx)? {
            Reply::Score(r) => Ok(r.scores),
            _ => Err(unexpected(Op::ScoreBatch)),
        }
    }
}
