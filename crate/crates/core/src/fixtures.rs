//! Deterministic synthetic corpus for tests, benches and demos.
//!
//! Three sources with different containers (44.1 kHz stereo, 16 kHz mono,
//! 48 kHz mono). Voiced regions are harmonic tones with a syllable-rate
//! envelope over a faint noise floor, so the energy VAD finds them. Sidecars
//! give the stub backends diarization turns and transcripts, arranged so
//! every drop path fires at least once: an empty transcript, a disallowed
//! language, a low language confidence, a quiet clip and a character-rate
//! outlier.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::stub::{diarization_sidecar, transcript_sidecar, AsrSidecar, AsrSidecarEntry, DiarSidecar};
use crate::segment::SpeakerTurn;

/// A voiced stretch of synthetic speech.
#[derive(Debug, Clone, PartialEq)]
pub struct Voiced {
    pub start_s: f64,
    pub end_s: f64,
    pub f0_hz: f64,
    pub level_dbfs: f64,
}

/// What the transcript sidecar says about one window.
#[derive(Debug, Clone, PartialEq)]
pub enum Transcript {
    /// Text generated to a speaking rate of `seconds_per_char`.
    Speech {
        language: &'static str,
        confidence: f64,
        seconds_per_char: f64,
    },
    /// Nothing; the clip comes back with an empty transcript.
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub start_s: f64,
    pub end_s: f64,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSource {
    pub name: &'static str,
    pub sample_rate: u32,
    pub channels: u16,
    pub duration_s: f64,
    pub voiced: Vec<Voiced>,
    pub turns: Option<Vec<SpeakerTurn>>,
    pub utterances: Vec<Utterance>,
}

/// Speech level before standardization. Files are about one fifth voiced,
/// which lands voiced clips near -13 dBFS once the file is at -20 dBFS, so
/// the stub quality score clears 3.0.
const LOUD: f64 = -13.0;
const QUIET: f64 = -32.0;
const NOISE_DBFS: f64 = -66.0;
const HANGOVER_S: f64 = 0.3;

fn en(confidence: f64, seconds_per_char: f64) -> Transcript {
    Transcript::Speech {
        language: "en",
        confidence,
        seconds_per_char,
    }
}

/// Voiced pieces of `piece_s` separated by `pause_s` over `[start, end)`.
fn phrase(start: f64, end: f64, piece_s: f64, pause_s: f64, f0_hz: f64, level_dbfs: f64) -> Vec<Voiced> {
    let mut out = Vec::new();
    let mut t = start;
    while t < end - 1e-9 {
        let e = (t + piece_s).min(end);
        out.push(Voiced {
            start_s: t,
            end_s: e,
            f0_hz,
            level_dbfs,
        });
        t = e + pause_s;
    }
    out
}

fn utt(start_s: f64, end_s: f64, transcript: Transcript) -> Utterance {
    Utterance {
        start_s,
        end_s,
        transcript,
    }
}

/// The three fixture sources.
pub fn corpus() -> Vec<FixtureSource> {
    // Two speakers; B starts before A has finished. The right channel is
    // 0.8x the left, so the mono mix sits about 0.9 dB under the left.
    let interview = {
        let (a, b) = (120.0, 210.0);
        let mut voiced = Vec::new();
        voiced.extend(phrase(2.0, 11.0, 4.25, 0.5, a, LOUD + 1.0));
        voiced.extend(phrase(20.0, 26.3, 6.3, 0.5, a, LOUD - 2.0));
        voiced.extend(phrase(25.6, 31.0, 5.4, 0.5, b, LOUD - 2.0));
        voiced.extend(phrase(40.0, 45.5, 2.5, 0.5, b, LOUD));
        voiced.extend(phrase(62.0, 63.5, 1.5, 0.5, a, LOUD));
        voiced.extend(phrase(80.0, 88.0, 3.75, 0.5, a, LOUD + 1.0));
        FixtureSource {
            name: "interview",
            sample_rate: 44_100,
            channels: 2,
            duration_s: 170.0,
            voiced,
            turns: Some(vec![
                SpeakerTurn::new("A", 1.5, 26.3),
                SpeakerTurn::new("B", 25.6, 50.0),
                SpeakerTurn::new("A", 60.0, 100.0),
            ]),
            utterances: vec![
                utt(1.5, 12.0, en(0.97, 0.070)),
                utt(19.0, 25.6, en(0.95, 0.080)),
                utt(26.3, 35.0, en(0.93, 0.075)),
                utt(39.0, 47.0, en(0.91, 0.065)),
                utt(79.0, 90.0, en(0.96, 0.085)),
            ],
        }
    };

    // One speaker and no diarization sidecar; one transcript is far too
    // short for its clip.
    let lecture = {
        let mut voiced = Vec::new();
        for s in [3.0, 23.0, 43.0, 63.0, 83.0, 103.0] {
            voiced.extend(phrase(s, s + 4.5, 2.0, 0.5, 150.0, LOUD));
        }
        let rates = [0.065, 0.070, 0.4, 0.075, 0.080, 0.085];
        FixtureSource {
            name: "lecture",
            sample_rate: 16_000,
            channels: 1,
            duration_s: 130.0,
            voiced,
            turns: None,
            utterances: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let s = 3.0 + 20.0 * i as f64;
                    utt(s - 1.0, s + 6.0, en(0.99 - 0.01 * i as f64, r))
                })
                .collect(),
        }
    };

    // Each utterance trips a different gate.
    let street = {
        let starts = [3.0, 20.0, 37.0, 54.0, 71.0, 88.0];
        let mut voiced = Vec::new();
        for (i, s) in starts.iter().enumerate() {
            let level = if i == 3 { QUIET } else { LOUD };
            voiced.extend(phrase(*s, s + 4.0, 1.75, 0.5, 180.0, level));
        }
        let transcripts = [
            en(0.94, 0.075),
            Transcript::Speech {
                language: "es",
                confidence: 0.97,
                seconds_per_char: 0.075,
            },
            en(0.55, 0.075),
            en(0.95, 0.075),
            Transcript::Missing,
            en(0.92, 0.075),
        ];
        FixtureSource {
            name: "street",
            sample_rate: 48_000,
            channels: 1,
            duration_s: 110.0,
            voiced,
            turns: Some(vec![SpeakerTurn::new("S0", 2.0, 45.0), SpeakerTurn::new("S1", 50.0, 105.0)]),
            utterances: starts
                .iter()
                .zip(transcripts)
                .map(|(s, t)| utt(s - 1.0, s + 6.0, t))
                .collect(),
        }
    };

    vec![interview, lecture, street]
}

const WORDS: [&str; 24] = [
    "the", "signal", "speech", "corpus", "model", "voice", "data", "audio", "people", "talk", "about",
    "weather", "music", "history", "science", "city", "market", "river", "morning", "story", "simple",
    "question", "answer", "today",
];

/// Words from a fixed list until the non-whitespace length reaches `chars`.
fn words(rng: &mut ChaCha8Rng, chars: usize) -> String {
    let mut out = String::new();
    let mut n = 0;
    while n < chars {
        let w = WORDS[rng.random_range(0..WORDS.len())];
        let w = &w[..w.len().min(chars - n)];
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
        n += w.len();
    }
    out
}

/// Mono samples in [-1, 1] for `src` at its own rate.
pub fn synthesize(src: &FixtureSource, seed: u64) -> Vec<f64> {
    let rate = src.sample_rate as f64;
    let n = (src.duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_amp = 10f64.powf(NOISE_DBFS / 20.0) * 3f64.sqrt();
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-noise_amp..noise_amp)).collect();
    for v in &src.voiced {
        let a = (v.start_s * rate).round() as usize;
        let b = ((v.end_s * rate).round() as usize).min(n);
        let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let fade = 0.01 * rate;
        let tone: Vec<f64> = (a..b)
            .map(|i| {
                let t = i as f64 / rate;
                let k = (i - a) as f64;
                let edge = (k.min((b - 1 - i) as f64) / fade).min(1.0);
                let env = (0.75 + 0.25 * (2.0 * PI * 4.0 * t).sin()) * edge;
                let h: f64 = phases
                    .iter()
                    .enumerate()
                    .map(|(j, p)| ((j + 1) as f64 * 2.0 * PI * v.f0_hz * t + p).sin() / (j + 1) as f64)
                    .sum();
                env * h
            })
            .collect();
        let rms = (tone.iter().map(|s| s * s).sum::<f64>() / tone.len().max(1) as f64).sqrt();
        let gain = if rms > 0.0 { 10f64.powf(v.level_dbfs / 20.0) / rms } else { 0.0 };
        for (dst, s) in x[a..b].iter_mut().zip(tone) {
            *dst += gain * s;
        }
    }
    x
}

fn write_pcm16(path: &Path, channels: &[Vec<f64>], rate: u32) -> io::Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).map_err(io::Error::other)?;
        for i in 0..channels[0].len() {
            for ch in channels {
                let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(v).map_err(io::Error::other)?;
            }
        }
        w.finalize().map_err(io::Error::other)?;
    }
    fs::write(path, cursor.into_inner())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("sidecar serializes") + "\n"
}

/// Writes one source's WAV and sidecars into `dir`; returns the WAV path.
pub fn write_source(dir: &Path, src: &FixtureSource, seed: u64) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.wav", src.name));
    let mono = synthesize(src, seed);
    let channels = if src.channels == 2 {
        let right = mono.iter().map(|s| 0.8 * s).collect();
        vec![mono, right]
    } else {
        vec![mono]
    };
    write_pcm16(&path, &channels, src.sample_rate)?;

    if let Some(turns) = &src.turns {
        let sc = DiarSidecar { turns: turns.clone() };
        fs::write(diarization_sidecar(&path), to_json(&sc))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let segments = src
        .utterances
        .iter()
        .filter_map(|u| match &u.transcript {
            Transcript::Missing => None,
            Transcript::Speech {
                language,
                confidence,
                seconds_per_char,
            } => {
                // Rate is taken over the voiced extent plus VAD hangover,
                // which is roughly the clip the stub VAD will produce.
                let inside: Vec<&Voiced> = src
                    .voiced
                    .iter()
                    .filter(|v| v.end_s > u.start_s && v.start_s < u.end_s)
                    .collect();
                let first = inside.iter().map(|v| v.start_s).fold(u.end_s, f64::min).max(u.start_s);
                let last = inside.iter().map(|v| v.end_s).fold(u.start_s, f64::max);
                let extent = ((last + HANGOVER_S).min(u.end_s) - first).max(0.0);
                let chars = ((extent / seconds_per_char).round() as usize).max(1);
                Some(AsrSidecarEntry {
                    start: u.start_s,
                    end: u.end_s,
                    text: words(&mut rng, chars),
                    language: language.to_string(),
                    confidence: *confidence,
                })
            }
        })
        .collect();
    fs::write(transcript_sidecar(&path), to_json(&AsrSidecar { segments }))?;
    Ok(path)
}

/// Writes the whole corpus into `dir`; returns WAV paths in corpus order.
pub fn write_corpus(dir: &Path) -> io::Result<Vec<PathBuf>> {
    corpus()
        .iter()
        .enumerate()
        .map(|(i, src)| write_source(dir, src, 0xC0FFEE + i as u64))
        .collect()
}

/// A file with a WAV extension whose header is cut off mid-chunk.
pub fn write_corrupt(dir: &Path, name: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.wav"));
    let mut bytes = b"RIFF\x24\x10\x00\x00WAVEfmt \x10\x00\x00\x00\x01\x00".to_vec();
    bytes.truncate(22);
    fs::write(&path, bytes)?;
    Ok(path)
}
