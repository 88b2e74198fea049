//! Built-in stub backends served over the worker protocol, for exercising the
//! subprocess and socket transports. Fault flags make it misbehave on demand.

use std::io::{self, BufRead, BufReader, Write};
use std::os::unix::net::UnixListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use speechprep::audio::AudioBuffer;
use speechprep::backend::protocol::{encode_line, AsrEntry};
use speechprep::backend::worker::handle_line;
use speechprep::backend::{Backend, Clip, GatewayError, HelloInfo, ItemRef, Stage, StubBackend, VadWindow};
use speechprep::segment::{SpeakerTurn, VadChunk};

#[derive(Debug, Parser)]
#[command(name = "speechprep-stub-worker", version, about)]
struct Args {
    /// separation | diarization | vad | transcription | quality
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Version announced in the hello reply.
    #[arg(long)]
    protocol_version: Option<u32>,
    /// Advertised and honored max_batch.
    #[arg(long)]
    max_batch: Option<usize>,
    /// Exit abruptly when a request line contains this text.
    #[arg(long)]
    crash_on: Option<String>,
    /// Never answer a request line containing this text.
    #[arg(long)]
    hang_on: Option<String>,
    /// Listen on a Unix socket instead of stdin/stdout.
    #[arg(long)]
    socket: Option<PathBuf>,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage {s:?}"))
}

struct Worker {
    inner: StubBackend,
    protocol_version: Option<u32>,
}

impl Backend for Worker {
    fn hello(&self) -> Result<HelloInfo, GatewayError> {
        let mut h = self.inner.hello()?;
        if let Some(v) = self.protocol_version {
            h.protocol_version = v;
        }
        Ok(h)
    }
    fn separate(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<AudioBuffer, GatewayError> {
        self.inner.separate(item, audio)
    }
    fn diarize(&self, item: ItemRef<'_>, audio: &AudioBuffer) -> Result<Vec<SpeakerTurn>, GatewayError> {
        self.inner.diarize(item, audio)
    }
    fn vad(&self, item: ItemRef<'_>, audio: &AudioBuffer, w: &VadWindow) -> Result<Vec<VadChunk>, GatewayError> {
        self.inner.vad(item, audio, w)
    }
    fn transcribe_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<AsrEntry>, GatewayError> {
        self.inner.transcribe_batch(item, clips)
    }
    fn score_batch(&self, item: ItemRef<'_>, clips: &[Clip<'_>]) -> Result<Vec<f64>, GatewayError> {
        self.inner.score_batch(item, clips)
    }
}

fn serve_conn<R: BufRead, W: Write>(mut reader: R, mut writer: W, worker: &Worker, args: &Args) -> io::Result<()> {
    let mut greeted = false;
    loop {
        let mut line = Vec::new();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(());
        }
        let text = String::from_utf8_lossy(&line);
        if args.crash_on.as_deref().is_some_and(|s| text.contains(s)) {
            std::process::exit(70);
        }
        if args.hang_on.as_deref().is_some_and(|s| text.contains(s)) {
            loop {
                std::thread::sleep(Duration::from_secs(3600));
            }
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let resp = handle_line(worker, &line, &mut greeted);
        writer.write_all(encode_line(&resp).as_bytes())?;
        writer.flush()?;
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut inner = StubBackend::for_stage(args.stage);
    if let Some(b) = args.max_batch {
        inner.max_batch = b;
    }
    let worker = Worker {
        inner,
        protocol_version: args.protocol_version,
    };
    let result = match &args.socket {
        None => serve_conn(io::stdin().lock(), io::stdout().lock(), &worker, &args),
        Some(path) => {
            let _ = std::fs::remove_file(path);
            UnixListener::bind(path).and_then(|listener| {
                std::thread::scope(|scope| {
                    for conn in listener.incoming() {
                        let conn = conn?;
                        let (worker, args) = (&worker, &args);
                        scope.spawn(move || {
                            let reader = BufReader::new(conn.try_clone()?);
                            serve_conn(reader, conn, worker, args)
                        });
                    }
                    Ok(())
                })
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("speechprep-stub-worker: {e}");
            ExitCode::FAILURE
        }
    }
}
