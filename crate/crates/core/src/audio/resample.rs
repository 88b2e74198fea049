use super::{AudioBuffer, AudioError};

/// Zero crossings of the sinc kernel kept on each side of the center tap.
const KERNEL_ZEROS: f64 = 16.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
/// Above this many phases the kernel is evaluated per output sample instead of tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

/// `round(len * dst / src)` with halves rounded up, in exact integer arithmetic.
pub fn resampled_len(len: usize, src_rate: u32, dst_rate: u32) -> usize {
    let num = len as u128 * dst_rate as u128;
    let src = src_rate as u128;
    ((num + src / 2) / src) as usize
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    use std::f64::consts::PI;
    let t = (x + 1.0) * 0.5;
    0.42 - 0.5 * (2.0 * PI * t).cos() + 0.08 * (4.0 * PI * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

struct Kernel {
    cutoff: f64,
    half_width: i64,
}

impl Kernel {
    fn new(src_rate: u32, dst_rate: u32) -> Self {
        let cutoff = (dst_rate as f64 / src_rate as f64).min(1.0) * ROLLOFF;
        let half_width = (KERNEL_ZEROS / cutoff).ceil() as i64;
        Self { cutoff, half_width }
    }

    /// Normalized taps for a fractional offset `frac` in [0, 1); tap `i`
    /// weighs input sample `base - half_width + 1 + i`.
    fn taps(&self, frac: f64, out: &mut Vec<f64>) {
        out.clear();
        let w = self.half_width;
        let mut sum = 0.0;
        for j in (-w + 1)..=w {
            let d = j as f64 - frac;
            let v = if d.abs() >= w as f64 {
                0.0
            } else {
                self.cutoff * sinc(self.cutoff * d) * blackman(d / w as f64)
            };
            sum += v;
            out.push(v);
        }
        if sum != 0.0 {
            for v in out.iter_mut() {
                *v /= sum;
            }
        }
    }
}

fn convolve(samples: &[f32], base: i64, half_width: i64, taps: &[f64]) -> f32 {
    let first = base - half_width + 1;
    let n = samples.len() as i64;
    let lo = first.max(0);
    let hi = (first + taps.len() as i64).min(n);
    let mut acc = 0.0f64;
    for k in lo..hi {
        acc += samples[k as usize] as f64 * taps[(k - first) as usize];
    }
    acc as f32
}

/// Band-limited resampling of a mono buffer with a Blackman-windowed sinc kernel.
///
/// Equal rates return the input untouched.
pub fn resample(buf: AudioBuffer, dst_rate: u32) -> Result<AudioBuffer, AudioError> {
    if dst_rate == 0 {
        return Err(AudioError::InvalidRate(0));
    }
    if buf.sample_rate == 0 {
        return Err(AudioError::InvalidRate(0));
    }
    debug_assert_eq!(buf.channel_count, 1, "resample expects mono input");
    let src_rate = buf.sample_rate;
    if src_rate == dst_rate {
        return Ok(buf);
    }

    let g = gcd(src_rate as u64, dst_rate as u64);
    let up = dst_rate as u64 / g;
    let down = src_rate as u64 / g;
    let out_len = resampled_len(buf.samples.len(), src_rate, dst_rate);
    let kernel = Kernel::new(src_rate, dst_rate);
    let mut out = Vec::with_capacity(out_len);

    if up <= MAX_TABLE_PHASES {
        let mut table = Vec::with_capacity(up as usize);
        let mut scratch = Vec::new();
        for phase in 0..up {
            kernel.taps(phase as f64 / up as f64, &mut scratch);
            table.push(scratch.clone());
        }
        for n in 0..out_len as u64 {
            let pos = n * down;
            let base = (pos / up) as i64;
            let phase = (pos % up) as usize;
            out.push(convolve(&buf.samples, base, kernel.half_width, &table[phase]));
        }
    } else {
        let mut taps = Vec::new();
        for n in 0..out_len as u64 {
            let pos = n as u128 * down as u128;
            let base = (pos / up as u128) as i64;
            let frac = (pos % up as u128) as f64 / up as f64;
            kernel.taps(frac, &mut taps);
            out.push(convolve(&buf.samples, base, kernel.half_width, &taps));
        }
    }

    Ok(AudioBuffer::mono(out, dst_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, seconds: f64, amp: f64) -> AudioBuffer {
        let n = (rate as f64 * seconds).round() as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioBuffer::mono(samples, rate)
    }

    #[test]
    fn equal_rates_are_identity() {
        let buf = tone(440.0, 24_000, 0.1, 0.5);
        let out = resample(buf.clone(), 24_000).unwrap();
        assert_eq!(out, buf);
    }

    #[test]
    fn one_second_48k_gives_24000_frames() {
        let buf = tone(440.0, 48_000, 1.0, 0.5);
        assert_eq!(resample(buf, 24_000).unwrap().samples.len(), 24_000);
    }

    #[test]
    fn zero_rate_rejected() {
        let buf = tone(440.0, 48_000, 0.01, 0.5);
        assert_eq!(resample(buf, 0), Err(AudioError::InvalidRate(0)));
    }

    #[test]
    fn length_formula_rounds_half_up() {
        assert_eq!(resampled_len(3, 2, 1), 2);
        assert_eq!(resampled_len(44_100, 44_100, 24_000), 24_000);
        assert_eq!(resampled_len(1, 48_000, 24_000), 1);
        assert_eq!(resampled_len(0, 48_000, 24_000), 0);
    }

    #[test]
    fn dc_passes_with_unit_gain() {
        let buf = AudioBuffer::mono(vec![0.25; 4_410], 44_100);
        let out = resample(buf, 24_000).unwrap();
        let mid = &out.samples[200..out.samples.len() - 200];
        assert!(mid.iter().all(|&s| (s - 0.25).abs() < 1e-5));
    }

    #[test]
    fn untabulated_ratio_still_tracks_amplitude() {
        // 24001 phases forces direct kernel evaluation.
        let buf = tone(200.0, 44_100, 0.05, 0.5);
        let out = resample(buf, 24_001).unwrap();
        assert_eq!(out.samples.len(), resampled_len(2_205, 44_100, 24_001));
        let peak = out.samples[100..out.samples.len() - 100]
            .iter()
            .fold(0.0f32, |m, s| m.max(s.abs()));
        assert!((peak - 0.5).abs() < 0.01, "peak {peak}");
    }
}
