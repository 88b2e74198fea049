use std::io::Cursor;

use super::{AudioBuffer, AudioError};

/// Integer-to-float scale for 16-bit PCM: `x / 32768` on read, `round(x * 32768)` on write.
pub const PCM16_SCALE: f32 = 32_768.0;

/// Decodes a RIFF/WAVE container (integer PCM of 8..=32 bits or 32-bit float).
/// Channels stay interleaved.
pub fn decode(raw: &[u8]) -> Result<AudioBuffer, AudioError> {
    if raw.len() < 12 || &raw[0..4] != b"RIFF" || &raw[8..12] != b"WAVE" {
        return Err(AudioError::UnsupportedFormat(
            "not a RIFF/WAVE container".to_string(),
        ));
    }
    let mut reader = hound::WavReader::new(Cursor::new(raw)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::CorruptContainer("zero channels".to_string()));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::CorruptContainer("zero sample rate".to_string()));
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        hound::SampleFormat::Int => {
            let scale = if spec.bits_per_sample == 16 {
                PCM16_SCALE
            } else {
                (1u64 << (spec.bits_per_sample - 1)) as f32
            };
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if samples.len() % spec.channels as usize != 0 {
        return Err(AudioError::CorruptContainer(
            "truncated final frame".to_string(),
        ));
    }
    Ok(AudioBuffer {
        samples,
        sample_rate: spec.sample_rate,
        channel_count: spec.channels,
    })
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported WAV encoding".into()),
        other => AudioError::CorruptContainer(other.to_string()),
    }
}

/// Float amplitude to 16-bit PCM, rounding and saturating (1.0 -> 32767).
pub fn quantize_sample(x: f32) -> i16 {
    let v = (x as f64 * PCM16_SCALE as f64).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encodes a mono buffer as RIFF PCM s16le with a 44-byte header.
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    debug_assert_eq!(buf.channel_count, 1);
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::with_capacity(44 + buf.samples.len() * 2));
    {
        // Writing into memory cannot fail.
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
        let mut w16 = writer.get_i16_writer(buf.samples.len() as u32);
        for &s in &buf.samples {
            w16.write_sample(quantize_sample(s));
        }
        w16.flush().expect("in-memory wav write");
        writer.finalize().expect("in-memory wav finalize");
    }
    cursor.into_inner()
}
