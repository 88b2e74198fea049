//! Decoding and loudness standardization.
//!
//! Every item entering the pipeline is brought to the same canonical shape:
//! mono, 24 kHz, whole-file RMS targeted at -20 dBFS with the applied gain
//! limited to +/-3 dB, and samples bounded to [-1, 1].

mod resample;
mod wav;

pub use resample::{resample, resampled_len};
pub use wav::{decode, encode_wav, quantize_sample, PCM16_SCALE};

use thiserror::Error;

/// Canonical sample rate of every standardized buffer.
pub const CANONICAL_RATE: u32 = 24_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("audio is silent (RMS = 0)")]
    SilentAudio,
    #[error("invalid sample rate {0}")]
    InvalidRate(i64),
    #[error("invalid loudness spec: {0}")]
    InvalidLoudnessSpec(String),
}

/// Decoded audio. Multi-channel buffers are stored interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channel_count: u16,
}

impl AudioBuffer {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            channel_count: 1,
        }
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channel_count.max(1) as usize
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn is_canonical(&self) -> bool {
        self.channel_count == 1
            && self.sample_rate == CANONICAL_RATE
            && !self.samples.is_empty()
            && self.peak() <= 1.0
    }

    /// Frame range `[round(start * rate), round(end * rate))`, clamped to the buffer.
    pub fn frame_range(&self, start_s: f64, end_s: f64) -> std::ops::Range<usize> {
        let rate = self.sample_rate as f64;
        let n = self.frames();
        let a = ((start_s * rate).round().max(0.0) as usize).min(n);
        let b = ((end_s * rate).round().max(0.0) as usize).clamp(a, n);
        a..b
    }

    /// Mono slice between two timestamps.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> AudioBuffer {
        debug_assert_eq!(self.channel_count, 1);
        let r = self.frame_range(start_s, end_s);
        AudioBuffer::mono(self.samples[r].to_vec(), self.sample_rate)
    }
}

/// Loudness target and the window the applied gain is clamped to.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoudnessSpec {
    pub target_dbfs: f64,
    pub gain_min_db: f64,
    pub gain_max_db: f64,
}

impl Default for LoudnessSpec {
    fn default() -> Self {
        Self {
            target_dbfs: -20.0,
            gain_min_db: -3.0,
            gain_max_db: 3.0,
        }
    }
}

impl LoudnessSpec {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.target_dbfs.is_finite() && self.target_dbfs < 0.0) {
            return Err(AudioError::InvalidLoudnessSpec(format!(
                "target_dbfs must be negative, got {}",
                self.target_dbfs
            )));
        }
        if !(self.gain_min_db <= 0.0 && 0.0 <= self.gain_max_db) {
            return Err(AudioError::InvalidLoudnessSpec(format!(
                "gain clamp [{}, {}] must contain 0",
                self.gain_min_db, self.gain_max_db
            )));
        }
        Ok(())
    }
}

/// Averages interleaved channels into one.
pub fn downmix_to_mono(buf: AudioBuffer) -> AudioBuffer {
    let channels = buf.channel_count.max(1) as usize;
    if channels == 1 {
        return buf;
    }
    let samples = buf
        .samples
        .chunks_exact(channels)
        .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
        .collect();
    AudioBuffer::mono(samples, buf.sample_rate)
}

fn rms(samples: &[f32]) -> f64 {
    let sum_sq: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum_sq / samples.len() as f64).sqrt()
}

/// Whole-buffer loudness, `20 * log10(RMS)`.
pub fn compute_dbfs(buf: &AudioBuffer) -> Result<f64, AudioError> {
    if buf.samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let r = rms(&buf.samples);
    if r == 0.0 {
        return Err(AudioError::SilentAudio);
    }
    Ok(20.0 * r.log10())
}

/// Scales the buffer toward the loudness target. Returns the gain actually
/// applied, which never leaves the spec's clamp window.
pub fn apply_gain_clamped(
    mut buf: AudioBuffer,
    spec: &LoudnessSpec,
) -> Result<(AudioBuffer, f64), AudioError> {
    let current = compute_dbfs(&buf)?;
    let applied = (spec.target_dbfs - current).clamp(spec.gain_min_db, spec.gain_max_db);
    if applied != 0.0 {
        let factor = 10f64.powf(applied / 20.0);
        for s in &mut buf.samples {
            *s = (*s as f64 * factor) as f32;
        }
    }
    Ok((buf, applied))
}

/// Divides by the peak only when the peak exceeds 1.0.
pub fn peak_normalize(mut buf: AudioBuffer) -> AudioBuffer {
    let peak = buf.peak();
    if peak > 1.0 {
        for s in &mut buf.samples {
            *s /= peak;
        }
    }
    buf
}

/// What standardization did to one item.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub audio: AudioBuffer,
    /// `None` when the input was silent and the gain stage was skipped.
    pub applied_gain_db: Option<f64>,
}

impl Standardized {
    pub fn is_silent(&self) -> bool {
        self.applied_gain_db.is_none()
    }
}

/// Runs the in-memory part of standardization on an already decoded buffer.
pub fn standardize_buffer(
    buf: AudioBuffer,
    spec: &LoudnessSpec,
) -> Result<Standardized, AudioError> {
    if buf.samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let resampled = resample(downmix_to_mono(buf), CANONICAL_RATE)?;
    if resampled.samples.iter().all(|&s| s == 0.0) {
        // Silent items pass through untouched; VAD removes them later.
        return Ok(Standardized {
            audio: resampled,
            applied_gain_db: None,
        });
    }
    let (gained, applied) = apply_gain_clamped(resampled, spec)?;
    Ok(Standardized {
        audio: peak_normalize(gained),
        applied_gain_db: Some(applied),
    })
}

/// Decodes raw container bytes and standardizes them.
pub fn standardize_bytes(raw: &[u8], spec: &LoudnessSpec) -> Result<Standardized, AudioError> {
    standardize_buffer(decode(raw)?, spec)
}

/// Decode, downmix, resample to 24 kHz, loudness gain, peak guard.
pub fn standardize(raw: &[u8]) -> Result<AudioBuffer, AudioError> {
    standardize_bytes(raw, &LoudnessSpec::default()).map(|s| s.audio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(amp: f64, rate: u32, n: usize) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * 100.0 * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioBuffer::mono(samples, rate)
    }

    /// Mono buffer at an exact loudness, built from a +/-a square wave.
    fn square_at(dbfs: f64, n: usize) -> AudioBuffer {
        let a = 10f64.powf(dbfs / 20.0) as f32;
        let samples = (0..n).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        AudioBuffer::mono(samples, CANONICAL_RATE)
    }

    #[test]
    fn downmix_averages_channels() {
        let stereo = AudioBuffer {
            samples: vec![0.5, -0.5, 1.0, 0.0],
            sample_rate: 8_000,
            channel_count: 2,
        };
        let mono = downmix_to_mono(stereo);
        assert_eq!(mono.samples, vec![0.0, 0.5]);
        assert_eq!(mono.channel_count, 1);
    }

    #[test]
    fn downmix_of_mono_is_identity() {
        let buf = sine(0.3, 8_000, 64);
        assert_eq!(downmix_to_mono(buf.clone()), buf);
    }

    #[test]
    fn dbfs_reference_points() {
        let square = AudioBuffer::mono(vec![1.0, -1.0, 1.0, -1.0], 8_000);
        assert!(compute_dbfs(&square).unwrap().abs() < 1e-12);
        // 100 Hz at 24 kHz: 240 samples per period, 2400 samples = 10 periods.
        let s = sine(1.0, 24_000, 2_400);
        let expected = 20.0 * (1.0 / 2f64.sqrt()).log10();
        assert!((compute_dbfs(&s).unwrap() - expected).abs() < 1e-6);
        assert!((expected + 3.0103).abs() < 1e-4);
        let zeros = AudioBuffer::mono(vec![0.0; 10], 8_000);
        assert_eq!(compute_dbfs(&zeros), Err(AudioError::SilentAudio));
    }

    #[test]
    fn gain_is_clamped() {
        let spec = LoudnessSpec::default();
        let (out, g) = apply_gain_clamped(square_at(-20.0, 100), &spec).unwrap();
        assert!(g.abs() < 1e-6);
        assert!((compute_dbfs(&out).unwrap() + 20.0).abs() < 1e-6);

        let (out, g) = apply_gain_clamped(square_at(-30.0, 100), &spec).unwrap();
        assert_eq!(g, 3.0);
        assert!((compute_dbfs(&out).unwrap() + 27.0).abs() < 1e-5);

        let (out, g) = apply_gain_clamped(square_at(-21.0, 100), &spec).unwrap();
        assert!((g - 1.0).abs() < 1e-6);
        assert!((compute_dbfs(&out).unwrap() + 20.0).abs() < 1e-5);
    }

    #[test]
    fn peak_normalize_only_when_clipping() {
        let loud = AudioBuffer::mono(vec![2.0, -1.0, 0.5], 8_000);
        assert_eq!(peak_normalize(loud).samples, vec![1.0, -0.5, 0.25]);
        let quiet = AudioBuffer::mono(vec![0.8, -0.4], 8_000);
        assert_eq!(peak_normalize(quiet.clone()), quiet);
        let zeros = AudioBuffer::mono(vec![0.0; 4], 8_000);
        assert_eq!(peak_normalize(zeros.clone()), zeros);
    }

    #[test]
    fn canonical_input_is_a_fixpoint() {
        let buf = square_at(-20.0, 2_400);
        let out = standardize_buffer(buf.clone(), &LoudnessSpec::default()).unwrap();
        for (a, b) in out.audio.samples.iter().zip(&buf.samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn silent_input_passes_through_tagged() {
        let buf = AudioBuffer::mono(vec![0.0; 480], CANONICAL_RATE);
        let out = standardize_buffer(buf.clone(), &LoudnessSpec::default()).unwrap();
        assert!(out.is_silent());
        assert_eq!(out.audio, buf);
    }

    #[test]
    fn undecodable_bytes_rejected() {
        assert!(matches!(
            standardize(b"definitely not audio"),
            Err(AudioError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn loudness_spec_validation() {
        assert!(LoudnessSpec::default().validate().is_ok());
        let bad = LoudnessSpec {
            gain_min_db: 1.0,
            ..LoudnessSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = LoudnessSpec {
            target_dbfs: 3.0,
            ..LoudnessSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn slice_uses_rounded_frame_bounds() {
        let buf = AudioBuffer::mono(vec![0.1; 240_000], CANONICAL_RATE);
        assert_eq!(buf.slice_seconds(1.0, 4.0).samples.len(), 72_000);
        assert_eq!(buf.slice_seconds(9.5, 12.0).samples.len(), 12_000);
    }
}
