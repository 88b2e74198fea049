use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use speechprep::backend::protocol::{encode_line, Op, Response};
use speechprep::backend::worker::serve;
use speechprep::backend::{
    Backend, BackendDescriptor, ExchangeDir, Gateway, GatewayError, RemoteBackend, Stage, StubBackend, Transport,
    VadWindow, PROTOCOL_VERSION,
};
use speechprep::fixtures::write_corpus;
use speechprep::pipeline::{discover_sources, run, PipelineConfig};

/// Serves the stub for `stage` on a socket, one thread per connection.
fn spawn_socket_worker(path: &Path, stage: Stage) {
    let listener = UnixListener::bind(path).unwrap();
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let conn = conn.unwrap();
            std::thread::spawn(move || {
                let reader = BufReader::new(conn.try_clone().unwrap());
                let _ = serve(reader, conn, &StubBackend::for_stage(stage));
            });
        }
    });
}

/// Answers hello with `hello` and every later request with `reply`.
fn spawn_scripted_worker(path: &Path, hello: impl Fn(u64) -> String + Send + 'static, reply: &'static str) {
    let listener = UnixListener::bind(path).unwrap();
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let mut conn = conn.unwrap();
            let mut reader = BufReader::new(conn.try_clone().unwrap());
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap() == 0 {
                continue;
            }
            let id = serde_json::from_str::<serde_json::Value>(&line).unwrap()["id"].as_u64().unwrap();
            conn.write_all(hello(id).as_bytes()).unwrap();
            line.clear();
            while reader.read_line(&mut line).unwrap_or(0) > 0 {
                conn.write_all(reply.as_bytes()).unwrap();
                line.clear();
            }
        }
    });
}

fn socket(stage: Stage, path: PathBuf, exchange: &ExchangeDir) -> Arc<dyn Backend> {
    Arc::new(RemoteBackend::new(
        BackendDescriptor {
            stage,
            transport: Transport::Socket { path },
            timeout: Duration::from_secs(30),
        },
        exchange.clone(),
    ))
}

#[test]
fn socket_workers_match_in_process_stubs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_corpus(&input).unwrap();
    let items = discover_sources(&[input]).unwrap();

    let local_cfg = PipelineConfig {
        parallelism: 2,
        ..PipelineConfig::new(dir.path().join("local"))
    };
    let local = run(&local_cfg, &items, &Gateway::stubs(VadWindow::default())).unwrap();

    let remote_cfg = PipelineConfig {
        parallelism: 2,
        ..PipelineConfig::new(dir.path().join("remote"))
    };
    let exchange = ExchangeDir::new(&remote_cfg.exchange_root, &remote_cfg.run_id);
    let backends = Stage::ALL.map(|stage| {
        let path = dir.path().join(format!("{stage}.sock"));
        spawn_socket_worker(&path, stage);
        socket(stage, path, &exchange)
    });
    let gateway = Gateway::connect(backends, VadWindow::default()).unwrap();
    let remote = run(&remote_cfg, &items, &gateway).unwrap();

    assert_eq!(
        std::fs::read(&local.manifest_path).unwrap(),
        std::fs::read(&remote.manifest_path).unwrap()
    );
    // Clips cross the exchange as PCM16, so quality scores agree only to
    // quantization precision; the rendered table is exact.
    assert_eq!(local.report.render_rows(), remote.report.render_rows());
    let verdicts = |r: &speechprep::pipeline::PipelineReport| {
        r.drops.iter().map(|d| (d.segment_id.clone(), d.reason)).collect::<Vec<_>>()
    };
    assert_eq!(verdicts(&local.report), verdicts(&remote.report));
    assert_eq!(local.report.accounting, remote.report.accounting);
    // Exchange files are cleared item by item.
    let leftovers: Vec<_> = walk(exchange.run_root());
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    rd.flatten()
        .flat_map(|e| {
            let p = e.path();
            if p.is_dir() { walk(&p) } else { vec![p] }
        })
        .collect()
}

fn hello_line(id: u64, stage: &str, version: u32) -> String {
    let payload = serde_json::json!({
        "stage": stage,
        "protocol_version": version,
        "capabilities": {"max_batch": 4}
    });
    encode_line(&Response::ok(id, Op::Hello, payload))
}

#[test]
fn version_mismatch_refuses_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vad.sock");
    spawn_scripted_worker(&path, |id| hello_line(id, "vad", PROTOCOL_VERSION + 1), "");
    let exchange = ExchangeDir::new(dir.path(), "r");
    let mut backends = Stage::ALL.map(|s| -> Arc<dyn Backend> { Arc::new(StubBackend::for_stage(s)) });
    backends[Stage::ALL.iter().position(|&s| s == Stage::Vad).unwrap()] = socket(Stage::Vad, path, &exchange);
    match Gateway::connect(backends, VadWindow::default()) {
        Err((Stage::Vad, GatewayError::ProtocolVersionMismatch { worker, engine })) => {
            assert_eq!(worker, PROTOCOL_VERSION + 1);
            assert_eq!(engine, PROTOCOL_VERSION);
        }
        Err(other) => panic!("{other:?}"),
        Ok(_) => panic!("connected"),
    }
}

#[test]
fn malformed_reply_is_a_protocol_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vad.sock");
    spawn_scripted_worker(&path, |id| hello_line(id, "vad", PROTOCOL_VERSION), "{not json\n");
    let exchange = ExchangeDir::new(dir.path(), "r");
    let backend = socket(Stage::Vad, path, &exchange);
    backend.hello().unwrap();
    let audio = speechprep::audio::AudioBuffer::mono(vec![0.1; 24_000], 24_000);
    let item = speechprep::backend::ItemRef {
        item_id: "x",
        source_path: Path::new("x.wav"),
    };
    let err = backend.vad(item, &audio, &VadWindow::default()).unwrap_err();
    assert!(matches!(err, GatewayError::ProtocolViolation(_)), "{err:?}");
}

#[test]
fn missing_socket_fails_to_connect() {
    let dir = tempfile::tempdir().unwrap();
    let exchange = ExchangeDir::new(dir.path(), "r");
    let backend = socket(Stage::Quality, dir.path().join("nope.sock"), &exchange);
    assert!(matches!(backend.hello(), Err(GatewayError::ConnectFailed(_))));
}
