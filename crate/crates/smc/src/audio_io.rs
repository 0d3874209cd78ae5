//! Mono 16-bit PCM WAV input/output at 16 kHz.
//!
//! The codec is specified for a single sample rate, so anything else is
//! rejected up front instead of silently resampled. Samples are normalized
//! to floats on read (`int16 / 32768`) and quantized with clamp-then-round
//! on write (`round(clamp(x, -1, 1) * 32767)`), which keeps the roundtrip
//! error within one quantization step and makes overflow impossible.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16000;

/// Mono audio at [`SAMPLE_RATE`], amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: only 16-bit integer PCM is supported",
            path.display()
        )));
    }
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: unsupported channel layout ({} channels, need mono)",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "{}: unsupported sample rate {} Hz (need {} Hz, resampling is out of scope)",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        )));
    }
    let mut samples = Vec::with_capacity(reader.len() as usize);
    for s in reader.into_samples::<i16>() {
        let s = s.map_err(|e| wav_error(path, e))?;
        samples.push(s as f64 / 32768.0);
    }
    Ok(Waveform::new(samples))
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &x in &w.samples {
        if !x.is_finite() {
            return Err(Error::Numeric(format!(
                "{}: non-finite sample cannot be written",
                path.display()
            )));
        }
        writer
            .write_sample(quantize_i16(x))
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))?;
    Ok(())
}

/// Clamp to [-1, 1], scale by 32768 and round half away from zero,
/// saturating at int16 max so +1.0 maps to 32767. The symmetric scale is
/// what keeps the write-then-read error within one quantization step.
pub fn quantize_i16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {}", path.display(), other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Leak the guard so the directory outlives the test body that uses the path.
        let dir = Box::leak(Box::new(dir));
        dir.path().join(name)
    }

    fn write_raw(path: &Path, sample_rate: u32, channels: u16, ints: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in ints {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn read_scales_int16_by_32768() {
        let p = tmp("scale.wav");
        write_raw(&p, 16000, 1, &[0, 16384, -32768]);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -1.0]);
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let p = tmp("44k.wav");
        write_raw(&p, 44100, 1, &[0; 10]);
        let err = read_wav(&p).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("sample rate")));
    }

    #[test]
    fn rejects_stereo() {
        let p = tmp("stereo.wav");
        write_raw(&p, 16000, 2, &[0; 10]);
        let err = read_wav(&p).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("channel")));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_wav("/nonexistent/nope.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn write_clamps_out_of_range() {
        assert_eq!(quantize_i16(1.5), 32767);
        assert_eq!(quantize_i16(-1.5), -32768);
        assert_eq!(quantize_i16(0.0), 0);
        assert_eq!(quantize_i16(0.5), 16384);
    }

    #[test]
    fn empty_waveform_roundtrips() {
        let p = tmp("empty.wav");
        write_wav(&p, &Waveform::new(vec![])).unwrap();
        let w = read_wav(&p).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn roundtrip_error_within_one_step() {
        let p = tmp("round.wav");
        let n = 4096;
        let samples: Vec<f64> = (0..n)
            .map(|i| ((i as f64) * 0.37).sin() * 0.97)
            .collect();
        let orig = Waveform::new(samples);
        write_wav(&p, &orig).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), orig.len());
        for (a, b) in orig.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn rereading_written_file_stays_within_one_int_step() {
        let p1 = tmp("a.wav");
        let p2 = tmp("b.wav");
        let ints: Vec<i16> = (0..999).map(|i| (i * 4099 % 65536 - 32768) as i16).collect();
        write_raw(&p1, 16000, 1, &ints);
        let w = read_wav(&p1).unwrap();
        write_wav(&p2, &w).unwrap();
        let back = read_wav(&p2).unwrap();
        assert_eq!(back.len(), w.len());
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
