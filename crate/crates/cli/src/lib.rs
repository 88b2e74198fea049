//! Command-line front end: `run`, `stats`, `validate` and `conformance`.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use speechprep::backend::conformance::run_conformance;
use speechprep::backend::{Backend, ExchangeDir, Gateway, RemoteBackend, Stage, StubBackend};
use speechprep::manifest::validate_manifest;
use speechprep::pipeline::{self, discover_sources, PipelineError, PipelineReport};

pub use config::{BackendSpec, Backends, ConfigError, RunConfig, EXCHANGE_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "speechprep",
    version,
    about = "Turn raw speech recordings into a segmented, transcribed, filtered corpus",
    after_help = "Any config key can be set with a flag of the same dotted name, \
                  e.g. --filter.min_quality 2.4 or --backend.vad stub."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Process a corpus.
    Run(RunArgs),
    /// Print the stage table of a run report.
    Stats {
        /// report.json written by `run`.
        report: PathBuf,
    },
    /// Check a manifest and the WAV files it references.
    Validate {
        manifest: PathBuf,
        /// Directory WAV paths are relative to (default: the manifest's directory).
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Check that an external worker speaks the protocol correctly.
    Conformance {
        /// separation | diarization | vad | transcription | quality
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        /// `unix:<path>` or a worker command line.
        #[arg(long)]
        backend: String,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 600.0)]
        timeout_s: f64,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage {s:?}"))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input file or directory; repeatable. Replaces the config's list.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Skip items finished by an earlier run into the same output.
    #[arg(long)]
    pub resume: bool,
    /// Use the built-in stub for every stage.
    #[arg(long)]
    pub stub_all: bool,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Print the effective config and exit.
    #[arg(long)]
    pub dump_config: bool,
}

/// Parses `args` (without the program name) and runs the command.
pub fn main_with_args(args: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (rest, overrides) = match config::extract_dotted(args) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once("speechprep".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(&a, &overrides, out, err),
        Command::Stats { report } => {
            if !overrides.is_empty() {
                let _ = writeln!(err, "error: dotted flags only apply to `run`");
                return EXIT_CONFIG;
            }
            cmd_stats(&report, out, err)
        }
        Command::Validate { manifest, root } => {
            if !overrides.is_empty() {
                let _ = writeln!(err, "error: dotted flags only apply to `run`");
                return EXIT_CONFIG;
            }
            cmd_validate(&manifest, root.as_deref(), out, err)
        }
        Command::Conformance {
            stage,
            backend,
            timeout_s,
        } => {
            if !overrides.is_empty() {
                let _ = writeln!(err, "error: dotted flags only apply to `run`");
                return EXIT_CONFIG;
            }
            cmd_conformance(stage, &backend, timeout_s, out, err)
        }
    }
}

/// Config file, then dotted overrides, then the dedicated flags.
pub fn effective_config(a: &RunArgs, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let text = match &a.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
            path: p.clone(),
            message: e.to_string(),
        })?,
        None => String::new(),
    };
    let mut cfg = config::load(&text, overrides)?;
    if !a.input.is_empty() {
        cfg.input = a.input.clone();
    }
    if let Some(o) = &a.output {
        cfg.output = o.clone();
    }
    if let Some(p) = a.parallelism {
        cfg.parallelism = p;
    }
    if let Some(r) = &a.run_id {
        cfg.run_id = r.clone();
    }
    cfg.resume |= a.resume;
    if a.stub_all {
        cfg.backend = Backends::all_stub();
    }
    Ok(cfg)
}

/// Handshakes every stage backend.
pub fn connect_gateway(cfg: &RunConfig, exchange: &ExchangeDir) -> Result<Gateway, (Stage, String)> {
    let backends = Stage::ALL.map(|stage| -> Arc<dyn Backend> {
        match cfg.backend.get(stage).descriptor(stage) {
            None => Arc::new(StubBackend::for_stage(stage)),
            Some(d) => Arc::new(RemoteBackend::new(d, exchange.clone())),
        }
    });
    Gateway::connect(backends, cfg.vad).map_err(|(s, e)| (s, e.to_string()))
}

pub fn cmd_run(a: &RunArgs, overrides: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match effective_config(a, overrides).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    if a.dump_config {
        let _ = write!(out, "{}", cfg.to_toml());
        return EXIT_OK;
    }
    let items = match discover_sources(&cfg.input) {
        Ok(items) if items.is_empty() => {
            let _ = writeln!(err, "error: {}", PipelineError::NoInputs);
            return EXIT_CONFIG;
        }
        Ok(items) => items,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    let pcfg = cfg.pipeline_config(std::env::var_os(EXCHANGE_ENV).map(PathBuf::from));
    let exchange = ExchangeDir::new(&pcfg.exchange_root, &pcfg.run_id);
    let gateway = match connect_gateway(&cfg, &exchange) {
        Ok(g) => g,
        Err((stage, e)) => {
            let _ = writeln!(err, "error: {stage} backend: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pipeline::run(&pcfg, &items, &gateway) {
        Ok(o) => {
            for f in &o.report.failed {
                let _ = writeln!(err, "failed: {} ({}) at {}: {}", f.source_id, f.path, f.stage, f.error);
            }
            let _ = write!(out, "{}", o.report.render_table());
            let _ = writeln!(
                out,
                "{} of {} items processed; {} segments in {}",
                o.report.items_processed,
                o.report.items_total,
                o.records.len(),
                o.manifest_path.display()
            );
            EXIT_OK
        }
        Err(PipelineError::AllFailed(report)) => {
            for f in &report.failed {
                let _ = writeln!(err, "failed: {} ({}) at {}: {}", f.source_id, f.path, f.stage, f.error);
            }
            let _ = writeln!(err, "error: every item failed");
            EXIT_RUNTIME
        }
        Err(e @ (PipelineError::ConfigInvalid(_) | PipelineError::NoInputs)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn cmd_conformance(stage: Stage, backend: &str, timeout_s: f64, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let spec = match BackendSpec::parse_shorthand(backend) {
        Ok(BackendSpec::Stub) => {
            let _ = writeln!(err, "error: the built-in stub has no transport to check");
            return EXIT_CONFIG;
        }
        Ok(BackendSpec::Subprocess { command, .. }) => BackendSpec::Subprocess {
            command,
            timeout_s: Some(timeout_s),
        },
        Ok(BackendSpec::Socket { path, .. }) => BackendSpec::Socket {
            path,
            timeout_s: Some(timeout_s),
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    if !(timeout_s.is_finite() && timeout_s > 0.0) {
        let _ = writeln!(err, "error: timeout_s must be positive");
        return EXIT_CONFIG;
    }
    let descriptor = spec.descriptor(stage).expect("not a stub");
    let scratch = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            let _ = writeln!(err, "error: scratch directory: {e}");
            return EXIT_RUNTIME;
        }
    };
    let checks = run_conformance(&descriptor, scratch.path());
    for c in &checks {
        let _ = match &c.result {
            Ok(detail) => writeln!(out, "PASS {}: {detail}", c.name),
            Err(why) => writeln!(out, "FAIL {}: {why}", c.name),
        };
    }
    if checks.iter().all(|c| c.passed()) {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}

pub fn cmd_stats(report: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match PipelineReport::load(report) {
        Ok(r) => {
            let _ = write!(out, "{}", r.render_table());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn cmd_validate(manifest: &Path, root: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let root = root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    match validate_manifest(manifest, &root) {
        Ok(v) if v.is_empty() => {
            let _ = writeln!(out, "{}: 0 violations", manifest.display());
            EXIT_OK
        }
        Ok(v) => {
            for x in &v {
                let _ = writeln!(
                    out,
                    "line {}: {}: {}",
                    x.line,
                    x.id.as_deref().unwrap_or("-"),
                    x.message
                );
            }
            let _ = writeln!(out, "{}: {} violations", manifest.display(), v.len());
            EXIT_RUNTIME
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
