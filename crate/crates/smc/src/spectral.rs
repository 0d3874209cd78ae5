//! Waveform ↔ log-mel-spectrogram transforms, patchification and Griffin-Lim.
//!
//! The geometry is fixed by two constants: hop 160 at 16 kHz gives 100
//! frames/s, and 16×16 patches over 128 mel bins give 8 frequency patches
//! per time column. A 10.24 s window is therefore exactly 1024 frames and
//! 512 patches, the numbers all token-rate arithmetic is built on.
//!
//! Griffin-Lim stands in for a neural vocoder: magnitudes come from a
//! normalized-transpose pseudo-inverse of the mel filterbank and phase is
//! recovered iteratively from a seeded random start, so the whole inverse
//! path is deterministic given the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use std::sync::Arc;

use crate::audio_io::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Square patch side, in frames and in mel bins.
    pub patch: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            n_fft: 1024,
            hop: 160,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
            patch: 16,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop == 0 || self.n_mels == 0 || self.patch == 0 {
            return Err(Error::Config("spectral sizes must be positive".into()));
        }
        if self.n_mels % self.patch != 0 {
            return Err(Error::Config(format!(
                "n_mels {} not divisible by patch {}",
                self.n_mels, self.patch
            )));
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin) {
            return Err(Error::Config("need 0 <= fmin < fmax".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be > 0".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for a clip of `samples` samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples / self.hop
    }
}

/// Log-amplitude mel spectrogram, row-major `frames × n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub frames: usize,
    pub n_mels: usize,
    pub cfg: SpectralConfig,
}

impl MelSpectrogram {
    pub fn at(&self, t: usize, m: usize) -> f64 {
        self.values[t * self.n_mels + m]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

/// Flattened P×P patches, time-patch major, frequency-patch minor.
/// Within a patch, values are row-major over (frame, mel bin).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub data: Vec<f64>,
    pub t_patches: usize,
    pub f_patches: usize,
    pub patch: usize,
    pub cfg: SpectralConfig,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.t_patches * self.f_patches
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn patch_vec(&self, l: usize) -> &[f64] {
        let d = self.dim();
        &self.data[l * d..(l + 1) * d]
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-spaced mel filterbank, row-major `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            if f <= left || f >= right {
                continue;
            }
            let w = if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            fb[m * bins + k] = w;
        }
    }
    fb
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

/// Magnitude STFT with centered frames: the signal is zero-padded by
/// n_fft/2 on both sides and frame t starts at `t * hop` in the padded
/// buffer, producing exactly `floor(len / hop)` frames.
pub fn stft_magnitude(samples: &[f64], n_fft: usize, hop: usize) -> (Vec<f64>, usize) {
    let frames = samples.len() / hop;
    let bins = n_fft / 2 + 1;
    let mut mags = vec![0.0; frames * bins];
    if frames == 0 {
        return (mags, 0);
    }
    let window = hann(n_fft);
    let fft = FftPair::new(n_fft);
    let pad = n_fft / 2;
    let mut padded = vec![0.0; samples.len() + n_fft];
    padded[pad..pad + samples.len()].copy_from_slice(samples);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for i in 0..n_fft {
            buf[i] = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.forward.process(&mut buf);
        for k in 0..bins {
            mags[t * bins + k] = buf[k].norm();
        }
    }
    (mags, frames)
}

/// Complex STFT of the padded signal; used by Griffin-Lim for phase updates.
fn stft_complex(samples: &[f64], n_fft: usize, hop: usize, fft: &FftPair) -> Vec<Complex<f64>> {
    let frames = samples.len() / hop;
    let bins = n_fft / 2 + 1;
    let window = hann(n_fft);
    let pad = n_fft / 2;
    let mut padded = vec![0.0; samples.len() + n_fft];
    padded[pad..pad + samples.len()].copy_from_slice(samples);
    let mut out = vec![Complex::new(0.0, 0.0); frames * bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for i in 0..n_fft {
            buf[i] = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.forward.process(&mut buf);
        out[t * bins..(t + 1) * bins].copy_from_slice(&buf[..bins]);
    }
    out
}

/// Weighted overlap-add inverse STFT. Returns `frames * hop` samples,
/// compensating the same center padding `stft_magnitude` applies.
fn istft(spec: &[Complex<f64>], frames: usize, n_fft: usize, hop: usize, fft: &FftPair) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let window = hann(n_fft);
    let out_len = frames * hop;
    let mut acc = vec![0.0; out_len + n_fft];
    let mut wsum = vec![0.0; out_len + n_fft];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let row = &spec[t * bins..(t + 1) * bins];
        buf[..bins].copy_from_slice(row);
        for k in 1..bins - 1 {
            buf[n_fft - k] = row[k].conj();
        }
        fft.inverse.process(&mut buf);
        let start = t * hop;
        for i in 0..n_fft {
            let x = buf[i].re / n_fft as f64;
            acc[start + i] += x * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    let pad = n_fft / 2;
    (0..out_len)
        .map(|i| {
            let w = wsum[pad + i];
            if w > 1e-8 {
                acc[pad + i] / w
            } else {
                0.0
            }
        })
        .collect()
}

pub fn waveform_to_logmel(w: &Waveform, cfg: &SpectralConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.samples.is_empty() {
        return Err(Error::Config("empty waveform has no spectrogram".into()));
    }
    let frames = cfg.frames_for(w.samples.len());
    if frames == 0 {
        return Err(Error::Config(format!(
            "waveform of {} samples is shorter than one hop ({})",
            w.samples.len(),
            cfg.hop
        )));
    }
    let bins = cfg.bins();
    let (mags, _) = stft_magnitude(&w.samples, cfg.n_fft, cfg.hop);
    let fb = mel_filterbank(SAMPLE_RATE, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
    let mut values = vec![0.0; frames * cfg.n_mels];
    for t in 0..frames {
        let mag_row = &mags[t * bins..(t + 1) * bins];
        for m in 0..cfg.n_mels {
            let row = &fb[m * bins..(m + 1) * bins];
            let mut acc = 0.0;
            for k in 0..bins {
                acc += row[k] * mag_row[k];
            }
            values[t * cfg.n_mels + m] = acc.max(cfg.log_floor).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        frames,
        n_mels: cfg.n_mels,
        cfg: *cfg,
    })
}

pub fn patchify(mel: &MelSpectrogram) -> Result<PatchGrid> {
    let p = mel.cfg.patch;
    if mel.frames % p != 0 || mel.n_mels % p != 0 {
        return Err(Error::Shape(format!(
            "mel {}×{} not divisible into {}×{} patches",
            mel.frames, mel.n_mels, p, p
        )));
    }
    let t_patches = mel.frames / p;
    let f_patches = mel.n_mels / p;
    let mut data = vec![0.0; t_patches * f_patches * p * p];
    let mut out = 0;
    for tp in 0..t_patches {
        for fp in 0..f_patches {
            for dt in 0..p {
                for df in 0..p {
                    data[out] = mel.at(tp * p + dt, fp * p + df);
                    out += 1;
                }
            }
        }
    }
    Ok(PatchGrid {
        data,
        t_patches,
        f_patches,
        patch: p,
        cfg: mel.cfg,
    })
}

pub fn unpatchify(grid: &PatchGrid) -> MelSpectrogram {
    let p = grid.patch;
    let frames = grid.t_patches * p;
    let n_mels = grid.f_patches * p;
    let mut values = vec![0.0; frames * n_mels];
    let mut idx = 0;
    for tp in 0..grid.t_patches {
        for fp in 0..grid.f_patches {
            for dt in 0..p {
                for df in 0..p {
                    values[(tp * p + dt) * n_mels + fp * p + df] = grid.data[idx];
                    idx += 1;
                }
            }
        }
    }
    MelSpectrogram {
        values,
        frames,
        n_mels,
        cfg: grid.cfg,
    }
}

/// Estimate linear magnitudes from mel magnitudes with the normalized
/// transpose of the filterbank: each FFT bin takes the filter-weighted
/// average of the mel values that cover it. Bins no filter covers get 0.
fn mel_to_linear(mel_mag: &[f64], frames: usize, cfg: &SpectralConfig) -> Vec<f64> {
    let bins = cfg.bins();
    let fb = mel_filterbank(SAMPLE_RATE, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
    let mut col_sum = vec![0.0; bins];
    for m in 0..cfg.n_mels {
        for k in 0..bins {
            col_sum[k] += fb[m * bins + k];
        }
    }
    let mut lin = vec![0.0; frames * bins];
    for t in 0..frames {
        let mel_row = &mel_mag[t * cfg.n_mels..(t + 1) * cfg.n_mels];
        let out = &mut lin[t * bins..(t + 1) * bins];
        for m in 0..cfg.n_mels {
            let w = &fb[m * bins..(m + 1) * bins];
            let v = mel_row[m];
            for k in 0..bins {
                out[k] += w[k] * v;
            }
        }
        for k in 0..bins {
            if col_sum[k] > 1e-12 {
                out[k] /= col_sum[k];
            } else {
                out[k] = 0.0;
            }
        }
    }
    lin
}

/// Iterative phase recovery from a log-mel spectrogram. Deterministic for a
/// given seed; returns `frames * hop` samples.
pub fn griffin_lim(mel: &MelSpectrogram, iters: usize, seed: u64) -> Result<Waveform> {
    if iters < 1 {
        return Err(Error::Config("griffin-lim needs at least 1 iteration".into()));
    }
    let cfg = &mel.cfg;
    let frames = mel.frames;
    let mel_mag: Vec<f64> = mel.values.iter().map(|v| v.exp()).collect();
    let target = mel_to_linear(&mel_mag, frames, cfg);
    let fft = FftPair::new(cfg.n_fft);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut spec: Vec<Complex<f64>> = target
        .iter()
        .map(|&m| {
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Complex::from_polar(m, phi)
        })
        .collect();

    let mut samples;
    for _ in 0..iters {
        samples = istft(&spec, frames, cfg.n_fft, cfg.hop, &fft);
        let est = stft_complex(&samples, cfg.n_fft, cfg.hop, &fft);
        for (s, e) in spec.iter_mut().zip(est.iter()) {
            let phase = if e.norm() > 1e-12 { e.arg() } else { 0.0 };
            *s = Complex::from_polar(s.norm(), phase);
        }
    }
    samples = istft(&spec, frames, cfg.n_fft, cfg.hop, &fft);
    Ok(Waveform::new(samples))
}
