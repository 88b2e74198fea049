//! Run configuration: a TOML document whose every key can be overridden on
//! the command line by a flag of the same dotted name.
//!
//! ```toml
//! run_id = "run"
//! input = ["corpus"]
//! output = "out"
//! parallelism = 8
//! resume = false
//!
//! [loudness]      # target_dbfs, gain_min_db, gain_max_db
//! [stitch]        # min_s, max_s, max_gap_s
//! [filter]        # allowed_languages, min_language_confidence, min_quality,
//!                 # iqr_multiplier, min_segments_for_iqr
//! [vad]           # frame_ms, hop_ms, threshold_dbfs, hangover_ms
//!
//! [backend.transcription]
//! kind = "subprocess"          # "stub" | "subprocess" | "socket"
//! command = ["python", "-m", "workers.asr"]
//! timeout_s = 900
//! ```
//!
//! `--backend.<stage> VALUE` also accepts a shorthand string: `stub`,
//! `unix:<path>` for a socket, or a command line.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use speechprep::audio::LoudnessSpec;
use speechprep::backend::{BackendDescriptor, Stage, Transport, VadWindow, DEFAULT_TIMEOUT};
use speechprep::filter::FilterPolicy;
use speechprep::pipeline::PipelineConfig;
use speechprep::segment::StitchPolicy;

/// Environment variable naming the exchange-directory root.
pub const EXCHANGE_ENV: &str = "SPEECHPREP_EXCHANGE_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("override --{key}: {message}")]
    Override { key: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum BackendSpec {
    #[default]
    Stub,
    Subprocess {
        command: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_s: Option<f64>,
    },
    Socket {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_s: Option<f64>,
    },
}

impl BackendSpec {
    /// `stub`, `unix:<path>`, or a shell-style command line.
    pub fn parse_shorthand(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "stub" {
            return Ok(Self::Stub);
        }
        if let Some(path) = s.strip_prefix("unix:") {
            return Ok(Self::Socket {
                path: PathBuf::from(path),
                timeout_s: None,
            });
        }
        match shlex::split(s) {
            Some(command) if !command.is_empty() => Ok(Self::Subprocess {
                command,
                timeout_s: None,
            }),
            _ => Err(format!("cannot parse backend {s:?}")),
        }
    }

    pub fn descriptor(&self, stage: Stage) -> Option<BackendDescriptor> {
        let timeout = |t: &Option<f64>| t.map(Duration::from_secs_f64).unwrap_or(DEFAULT_TIMEOUT);
        match self {
            Self::Stub => None,
            Self::Subprocess { command, timeout_s } => Some(BackendDescriptor {
                stage,
                transport: Transport::Subprocess {
                    command: command.clone(),
                },
                timeout: timeout(timeout_s),
            }),
            Self::Socket { path, timeout_s } => Some(BackendDescriptor {
                stage,
                transport: Transport::Socket { path: path.clone() },
                timeout: timeout(timeout_s),
            }),
        }
    }

    fn validate(&self, stage: Stage) -> Result<(), String> {
        let t = match self {
            Self::Stub => None,
            Self::Subprocess { command, timeout_s } => {
                if command.is_empty() {
                    return Err(format!("backend.{stage}.command must not be empty"));
                }
                *timeout_s
            }
            Self::Socket { timeout_s, .. } => *timeout_s,
        };
        match t {
            Some(t) if !(t.is_finite() && t > 0.0) => Err(format!("backend.{stage}.timeout_s must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub separation: BackendSpec,
    pub diarization: BackendSpec,
    pub vad: BackendSpec,
    pub transcription: BackendSpec,
    pub quality: BackendSpec,
}

impl Backends {
    pub fn get(&self, stage: Stage) -> &BackendSpec {
        match stage {
            Stage::Separation => &self.separation,
            Stage::Diarization => &self.diarization,
            Stage::Vad => &self.vad,
            Stage::Transcription => &self.transcription,
            Stage::Quality => &self.quality,
        }
    }

    pub fn all_stub() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub input: Vec<PathBuf>,
    pub output: PathBuf,
    pub parallelism: usize,
    pub resume: bool,
    pub loudness: LoudnessSpec,
    pub stitch: StitchPolicy,
    pub filter: FilterPolicy,
    pub vad: VadWindow,
    pub backend: Backends,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".to_string(),
            input: Vec::new(),
            output: PathBuf::from("out"),
            parallelism: 1,
            resume: false,
            loudness: LoudnessSpec::default(),
            stitch: StitchPolicy::default(),
            filter: FilterPolicy::default(),
            vad: VadWindow::default(),
            backend: Backends::default(),
        }
    }
}

/// Splits `--a.b value` / `--a.b=value` flags out of `args`. Flags without a
/// dot are left for the regular parser.
pub fn extract_dotted(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| {
            let name = f.split('=').next().unwrap_or("");
            name.contains('.') && !name.starts_with('.')
        }) else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = it.next().ok_or_else(|| ConfigError::Override {
                    key: flag.to_string(),
                    message: "missing value".into(),
                })?;
                (flag.to_string(), value)
            }
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// A flag value as TOML if it parses as a scalar or array, else as a string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty key segment".into());
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("{p} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies one dotted override to a config document.
pub fn apply_override(doc: &mut Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let err = |message: String| ConfigError::Override {
        key: key.to_string(),
        message,
    };
    let value = match key.strip_prefix("backend.") {
        Some(stage) if !stage.contains('.') => {
            if Stage::parse(stage).is_none() {
                return Err(err(format!("unknown stage {stage:?}")));
            }
            let spec = BackendSpec::parse_shorthand(raw).map_err(err)?;
            Value::try_from(spec).map_err(|e| err(e.to_string()))?
        }
        _ => {
            let v = parse_value(raw);
            // Lists given as a bare word or comma list.
            if key == "filter.allowed_languages" || key == "input" {
                match v {
                    Value::String(s) => Value::Array(
                        s.split(',')
                            .map(|x| Value::String(x.trim().to_string()))
                            .filter(|x| x.as_str() != Some(""))
                            .collect(),
                    ),
                    other => other,
                }
            } else {
                v
            }
        }
    };
    set_path(doc, key, value).map_err(err)
}

/// Parses a config document (empty string for defaults) with overrides applied.
pub fn load(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    let cfg: RunConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    Ok(cfg)
}

impl RunConfig {
    /// Policy invariants plus existence of input paths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be at least 1".into()));
        }
        self.loudness
            .validate()
            .map_err(|e| invalid(format!("loudness: {e}")))?;
        self.stitch
            .validate()
            .map_err(|e| invalid(format!("stitch: {e}")))?;
        self.filter
            .validate()
            .map_err(|e| invalid(format!("filter: {e}")))?;
        self.vad.validate().map_err(|e| invalid(format!("vad: {e}")))?;
        for stage in Stage::ALL {
            self.backend.get(stage).validate(stage).map_err(invalid)?;
        }
        for p in &self.input {
            if !p.exists() {
                return Err(invalid(format!("input: {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Engine settings; the exchange root comes from the environment or
    /// defaults to `<output>/exchange`.
    pub fn pipeline_config(&self, exchange_env: Option<PathBuf>) -> PipelineConfig {
        PipelineConfig {
            run_id: self.run_id.clone(),
            output: self.output.clone(),
            exchange_root: exchange_env.unwrap_or_else(|| self.output.join("exchange")),
            parallelism: self.parallelism,
            resume: self.resume,
            loudness: self.loudness,
            stitch: self.stitch,
            filter: self.filter.clone(),
            vad: self.vad,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn dotted_flags_are_split_out() {
        let (rest, ov) = extract_dotted(args("run --output o --filter.min_quality 2.4 --stitch.max_s=20")).unwrap();
        assert_eq!(rest, args("run --output o"));
        assert_eq!(
            ov,
            vec![
                ("filter.min_quality".to_string(), "2.4".to_string()),
                ("stitch.max_s".to_string(), "20".to_string())
            ]
        );
    }

    #[test]
    fn overrides_beat_file() {
        let cfg = load("[filter]\nmin_quality = 3.5\n", &[("filter.min_quality".into(), "2.4".into())]).unwrap();
        assert_eq!(cfg.filter.min_quality, 2.4);
    }

    #[test]
    fn integer_flag_for_float_key() {
        let cfg = load("", &[("stitch.max_s".into(), "20".into())]);
        // TOML integers are not floats; the error must name the key.
        match cfg {
            Ok(c) => assert_eq!(c.stitch.max_s, 20.0),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn backend_shorthand() {
        let cfg = load(
            "",
            &[
                ("backend.vad".into(), "unix:/tmp/vad.sock".into()),
                ("backend.transcription".into(), "python -m asr --device 'cuda:0'".into()),
            ],
        )
        .unwrap();
        assert_eq!(
            cfg.backend.vad,
            BackendSpec::Socket {
                path: "/tmp/vad.sock".into(),
                timeout_s: None
            }
        );
        assert_eq!(
            cfg.backend.transcription,
            BackendSpec::Subprocess {
                command: args("python -m asr --device cuda:0"),
                timeout_s: None
            }
        );
        assert_eq!(cfg.backend.quality, BackendSpec::Stub);
    }

    #[test]
    fn languages_from_comma_list() {
        let cfg = load("", &[("filter.allowed_languages".into(), "en,de".into())]).unwrap();
        assert_eq!(cfg.filter.allowed_languages.len(), 2);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(load("[filter]\nmin_qualiti = 3\n", &[]), Err(ConfigError::Parse(_))));
        assert!(load("", &[("backend.mixing".into(), "stub".into())]).is_err());
    }

    #[test]
    fn min_above_max_names_field() {
        let cfg = load("[stitch]\nmin_s = 40.0\n", &[]).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("min_s"), "{msg}");
    }

    #[test]
    fn dump_round_trips() {
        let cfg = load(
            "",
            &[
                ("parallelism".into(), "8".into()),
                ("backend.diarization".into(), "worker --x".into()),
                ("vad.threshold_dbfs".into(), "-35.5".into()),
            ],
        )
        .unwrap();
        assert_eq!(load(&cfg.to_toml(), &[]).unwrap(), cfg);
    }
}
