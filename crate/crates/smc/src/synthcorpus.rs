//! Deterministic synthetic training corpus in three audio domains.
//!
//! Every clip is a pure function of (domain, class_label, duration, seed).
//! The class recipes are engineered to be spectrally distinct so that a
//! linear probe on mel statistics can separate them; that property is what
//! makes the downstream probe evaluations meaningful, and it is verified by
//! an oracle test in this module rather than assumed.
//!
//! * `speech_like`: formant-filtered glottal pulse trains with per-class
//!   pitch and formant positions, syllable-rate amplitude modulation.
//! * `music_like`: harmonic chords and arpeggios with per-class register,
//!   chord quality and note rate.
//! * `general`: rising/falling chirps, band-limited noise, click trains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio_io::{self, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seeds;

pub const CLASSES_PER_DOMAIN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    SpeechLike,
    MusicLike,
    General,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::SpeechLike, Domain::MusicLike, Domain::General];
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::SpeechLike => "speech_like",
            Domain::MusicLike => "music_like",
            Domain::General => "general",
        };
        f.write_str(s)
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech_like" => Ok(Domain::SpeechLike),
            "music_like" => Ok(Domain::MusicLike),
            "general" => Ok(Domain::General),
            other => Err(Error::Format(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub domain: Domain,
    pub class_label: usize,
    pub duration_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub waveform: Waveform,
    pub domain: Domain,
    pub class_label: usize,
    pub seed: u64,
}

/// General-domain class ids, used by tests and the probe evaluation.
pub const GENERAL_CHIRP_UP: usize = 0;
pub const GENERAL_CHIRP_DOWN: usize = 1;
pub const GENERAL_NOISE_BAND: usize = 2;
pub const GENERAL_CLICKS: usize = 3;

pub fn generate_clip(spec: &ClipSpec) -> Result<LabeledClip> {
    if spec.duration_s <= 0.0 {
        return Err(Error::Config("clip duration must be > 0".into()));
    }
    if spec.class_label >= CLASSES_PER_DOMAIN {
        return Err(Error::Config(format!(
            "unknown class_label {} for domain {} (have {})",
            spec.class_label, spec.domain, CLASSES_PER_DOMAIN
        )));
    }
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut samples = match spec.domain {
        Domain::SpeechLike => speech_like(&mut rng, spec.class_label, n),
        Domain::MusicLike => music_like(&mut rng, spec.class_label, n),
        Domain::General => general(&mut rng, spec.class_label, n),
    };
    normalize_peak(&mut samples, 0.85);
    Ok(LabeledClip {
        waveform: Waveform::new(samples),
        domain: spec.domain,
        class_label: spec.class_label,
        seed: spec.seed,
    })
}

/// Balanced corpus: `n_per_class` clips for every template, clip seeds
/// derived as `master ^ hash(class_label, index)`. Order is fixed by
/// (template position, index) regardless of parallel scheduling.
pub fn generate_corpus(
    n_per_class: usize,
    templates: &[ClipSpec],
    master_seed: u64,
) -> Result<Vec<LabeledClip>> {
    if templates.is_empty() {
        return Err(Error::Config("empty class template list".into()));
    }
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be >= 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..templates.len())
        .flat_map(|t| (0..n_per_class).map(move |i| (t, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(t, i)| {
            let tpl = &templates[t];
            let spec = ClipSpec {
                seed: seeds::derive_seed(master_seed, tpl.class_label as u64, i as u64),
                ..*tpl
            };
            generate_clip(&spec)
        })
        .collect()
}

/// The default 12-class template set: 3 domains × 4 classes at 2.56 s.
pub fn default_templates(duration_s: f64) -> Vec<ClipSpec> {
    let mut out = Vec::new();
    for &domain in &Domain::ALL {
        for class_label in 0..CLASSES_PER_DOMAIN {
            out.push(ClipSpec {
                domain,
                class_label,
                duration_s,
                seed: 0,
            });
        }
    }
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if m > 1e-9 {
        let g = peak / m;
        for v in x.iter_mut() {
            *v *= g;
        }
    }
}

fn jitter(rng: &mut ChaCha20Rng, base: f64, rel: f64) -> f64 {
    base * (1.0 + rel * rng.random_range(-1.0..1.0))
}

/// Glottal-ish pulse train exciting two decaying formant resonators.
fn speech_like(rng: &mut ChaCha20Rng, class: usize, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    // (pitch Hz, formant1 Hz, formant2 Hz, vibrato depth)
    let (f0, f1, f2, vib) = match class {
        0 => (110.0, 700.0, 1220.0, 0.0),
        1 => (235.0, 320.0, 2400.0, 0.0),
        2 => (150.0, 520.0, 1000.0, 0.04),
        _ => (88.0, 920.0, 2550.0, 0.0),
    };
    let f0 = jitter(rng, f0, 0.05);
    let formants = [(jitter(rng, f1, 0.04), 0.004, 1.0), (jitter(rng, f2, 0.04), 0.0025, 0.6)];
    let am_rate = rng.random_range(3.0..5.0);
    let am_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let vib_rate = 5.5;

    let mut x = vec![0.0; n];
    let mut t_pulse = 0.0f64;
    while t_pulse < n as f64 / sr {
        let vib_mod = 1.0 + vib * (std::f64::consts::TAU * vib_rate * t_pulse).sin();
        let start = (t_pulse * sr) as usize;
        for &(freq, tau, amp) in &formants {
            let seg = (5.0 * tau * sr) as usize;
            for i in 0..seg.min(n.saturating_sub(start)) {
                let dt = i as f64 / sr;
                x[start + i] +=
                    amp * (-dt / tau).exp() * (std::f64::consts::TAU * freq * dt).sin();
            }
        }
        t_pulse += 1.0 / (f0 * vib_mod);
    }
    for i in 0..n {
        let t = i as f64 / sr;
        let am = 0.55 + 0.45 * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
        x[i] *= am;
    }
    x
}

/// Harmonic chords and arpeggios; 6 harmonics with 1/h rolloff per note.
fn music_like(rng: &mut ChaCha20Rng, class: usize, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    // (root range, semitone intervals, notes per second; 0 = sustained chord)
    let (lo, hi, intervals, rate): (f64, f64, &[i32], f64) = match class {
        0 => (220.0, 330.0, &[0, 4, 7], 0.0),
        1 => (196.0, 294.0, &[0, 3, 7, 12], 8.0),
        2 => (110.0, 165.0, &[0, 12], 0.0),
        _ => (440.0, 660.0, &[0, 7, 12, 19], 4.0),
    };
    let root = rng.random_range(lo..hi);
    let tremolo = if class == 2 { 6.0 } else { 0.0 };
    let mut x = vec![0.0; n];
    let dur_s = n as f64 / sr;

    let add_note = |x: &mut [f64], freq: f64, t0: f64, dur: f64| {
        let start = (t0 * sr) as usize;
        let len = ((dur * sr) as usize).min(n.saturating_sub(start));
        for h in 1..=6u32 {
            let fh = freq * h as f64;
            if fh > 7600.0 {
                break;
            }
            let amp = 1.0 / h as f64;
            for i in 0..len {
                let dt = i as f64 / sr;
                let env = (dt / 0.01).min(1.0) * (1.0 - (dt / dur).powi(4)).max(0.0);
                x[start + i] +=
                    amp * env * (std::f64::consts::TAU * fh * dt).sin();
            }
        }
    };

    if rate == 0.0 {
        for &iv in intervals {
            let f = root * 2f64.powf(iv as f64 / 12.0);
            add_note(&mut x, f, 0.0, dur_s);
        }
    } else {
        let note_dur = 1.0 / rate;
        let mut t = 0.0;
        let mut k = 0usize;
        while t < dur_s {
            let iv = intervals[k % intervals.len()];
            let f = root * 2f64.powf(iv as f64 / 12.0);
            add_note(&mut x, f, t, note_dur * 0.9);
            t += note_dur;
            k += 1;
        }
    }
    if tremolo > 0.0 {
        for i in 0..n {
            let t = i as f64 / sr;
            x[i] *= 0.7 + 0.3 * (std::f64::consts::TAU * tremolo * t).sin();
        }
    }
    x
}

/// Chirps, band-limited noise and click trains.
fn general(rng: &mut ChaCha20Rng, class: usize, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let dur = n as f64 / sr;
    let mut x = vec![0.0; n];
    match class {
        GENERAL_CHIRP_UP | GENERAL_CHIRP_DOWN => {
            let f_lo = rng.random_range(300.0..500.0);
            let f_hi = rng.random_range(2500.0..3500.0);
            let (f0, f1) = if class == GENERAL_CHIRP_UP {
                (f_lo, f_hi)
            } else {
                (f_hi, f_lo)
            };
            for i in 0..n {
                let t = i as f64 / sr;
                let phase =
                    std::f64::consts::TAU * (f0 * t + 0.5 * (f1 - f0) / dur * t * t);
                x[i] = phase.sin();
            }
        }
        GENERAL_NOISE_BAND => {
            let comps = 64;
            for _ in 0..comps {
                let f = rng.random_range(150.0..600.0);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let a = 1.0 / (comps as f64).sqrt();
                for i in 0..n {
                    let t = i as f64 / sr;
                    x[i] += a * (std::f64::consts::TAU * f * t + phi).sin();
                }
            }
        }
        _ => {
            let rate = rng.random_range(8.0..15.0);
            let burst = (0.005 * sr) as usize;
            let mut t = rng.random_range(0.0..1.0 / rate);
            while t < dur {
                let start = (t * sr) as usize;
                for i in 0..burst.min(n.saturating_sub(start)) {
                    let noise: f64 = rng.random_range(-1.0..1.0);
                    x[start + i] += noise * (-(i as f64) / (0.0015 * sr)).exp();
                }
                t += 1.0 / rate * rng.random_range(0.8..1.2);
            }
        }
    }
    x
}

/// Write clips as WAV files plus a tab-separated manifest
/// (`path<TAB>domain<TAB>class_label`). Returns the manifest path.
pub fn write_corpus(dir: impl AsRef<Path>, clips: &[LabeledClip]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.tsv");
    let mut manifest = std::io::BufWriter::new(
        std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    );
    let mut counters = std::collections::HashMap::new();
    for clip in clips {
        let idx = counters
            .entry((clip.domain, clip.class_label))
            .and_modify(|c| *c += 1)
            .or_insert(0usize);
        let name = format!("{}_{}_{:04}.wav", clip.domain, clip.class_label, *idx);
        audio_io::write_wav(dir.join(&name), &clip.waveform)?;
        writeln!(manifest, "{}\t{}\t{}", name, clip.domain, clip.class_label)
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub domain: Domain,
    pub class_label: usize,
}

/// Parse a corpus manifest; paths are resolved relative to its directory.
pub fn read_manifest(manifest_path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = manifest_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (rel, domain, class) = (parts.next(), parts.next(), parts.next());
        let (rel, domain, class) = match (rel, domain, class) {
            (Some(r), Some(d), Some(c)) => (r, d, c),
            _ => {
                return Err(Error::Format(format!(
                    "{}:{}: expected 3 tab-separated fields",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        out.push(ManifestEntry {
            path: base.join(rel),
            domain: domain.parse()?,
            class_label: class.parse().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: bad class label '{class}'",
                    path.display(),
                    lineno + 1
                ))
            })?,
        });
    }
    Ok(out)
}

/// Load every clip a manifest references.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<Vec<LabeledClip>> {
    read_manifest(manifest_path)?
        .into_par_iter()
        .map(|e| {
            Ok(LabeledClip {
                waveform: audio_io::read_wav(&e.path)?,
                domain: e.domain,
                class_label: e.class_label,
                seed: 0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{waveform_to_logmel, SpectralConfig};

    #[test]
    fn same_spec_is_bit_identical() {
        let spec = ClipSpec {
            domain: Domain::SpeechLike,
            class_label: 2,
            duration_s: 0.5,
            seed: 99,
        };
        let a = generate_clip(&spec).unwrap();
        let b = generate_clip(&spec).unwrap();
        assert_eq!(a.waveform.samples, b.waveform.samples);
    }

    #[test]
    fn duration_maps_to_sample_count() {
        let spec = ClipSpec {
            domain: Domain::MusicLike,
            class_label: 0,
            duration_s: 2.56,
            seed: 1,
        };
        assert_eq!(generate_clip(&spec).unwrap().waveform.len(), 40960);
    }

    #[test]
    fn unknown_class_rejected() {
        let spec = ClipSpec {
            domain: Domain::General,
            class_label: 4,
            duration_s: 1.0,
            seed: 1,
        };
        assert!(matches!(generate_clip(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn all_recipes_bounded_and_finite() {
        for &domain in &Domain::ALL {
            for class in 0..CLASSES_PER_DOMAIN {
                let clip = generate_clip(&ClipSpec {
                    domain,
                    class_label: class,
                    duration_s: 1.0,
                    seed: 7 + class as u64,
                })
                .unwrap();
                for &s in &clip.waveform.samples {
                    assert!(s.is_finite() && s.abs() <= 1.0, "{domain} class {class}");
                }
            }
        }
    }

    #[test]
    fn corpus_is_balanced_and_seed_sensitive() {
        let templates = default_templates(0.25);
        let corpus = generate_corpus(10, &templates, 5).unwrap();
        assert_eq!(corpus.len(), 120);
        let mut hist = std::collections::HashMap::new();
        for c in &corpus {
            *hist.entry((c.domain, c.class_label)).or_insert(0usize) += 1;
        }
        assert_eq!(hist.len(), 12);
        assert!(hist.values().all(|&v| v == 10));
        let mut dom = std::collections::HashMap::new();
        for c in &corpus {
            *dom.entry(c.domain).or_insert(0usize) += 1;
        }
        assert!(dom.values().all(|&v| v == 40));

        let other = generate_corpus(10, &templates, 6).unwrap();
        assert!(corpus
            .iter()
            .zip(&other)
            .any(|(a, b)| a.waveform.samples != b.waveform.samples));
    }

    #[test]
    fn empty_template_list_rejected() {
        assert!(matches!(
            generate_corpus(3, &[], 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let templates = vec![
            ClipSpec {
                domain: Domain::General,
                class_label: 0,
                duration_s: 0.2,
                seed: 0,
            },
            ClipSpec {
                domain: Domain::General,
                class_label: 3,
                duration_s: 0.2,
                seed: 0,
            },
        ];
        let corpus = generate_corpus(3, &templates, 11).unwrap();
        let manifest = write_corpus(dir.path(), &corpus).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 6);
        let loaded = load_corpus(&manifest).unwrap();
        assert_eq!(loaded.len(), 6);
        for (a, b) in corpus.iter().zip(&loaded) {
            assert_eq!(a.domain, b.domain);
            assert_eq!(a.class_label, b.class_label);
            assert_eq!(a.waveform.len(), b.waveform.len());
        }
    }

    /// Least-squares linear classifier, the separability oracle: solves the
    /// ridge normal equations by Gaussian elimination, no codec code involved.
    fn linear_classifier_accuracy(xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let n = xs.len();
        let d = xs[0].len() + 1;
        let mut ata = vec![0.0; d * d];
        let mut atb = vec![0.0; d];
        for (x, &y) in xs.iter().zip(ys) {
            let row: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
            for i in 0..d {
                for j in 0..d {
                    ata[i * d + j] += row[i] * row[j];
                }
                atb[i] += row[i] * y;
            }
        }
        for i in 0..d {
            ata[i * d + i] += 1e-6;
        }
        // Gaussian elimination with partial pivoting.
        let mut a = ata;
        let mut b = atb;
        for col in 0..d {
            let piv = (col..d)
                .max_by(|&r, &s| {
                    a[r * d + col]
                        .abs()
                        .partial_cmp(&a[s * d + col].abs())
                        .unwrap()
                })
                .unwrap();
            if piv != col {
                for j in 0..d {
                    a.swap(col * d + j, piv * d + j);
                }
                b.swap(col, piv);
            }
            let p = a[col * d + col];
            for r in col + 1..d {
                let f = a[r * d + col] / p;
                for j in col..d {
                    a[r * d + j] -= f * a[col * d + j];
                }
                b[r] -= f * b[col];
            }
        }
        let mut w = vec![0.0; d];
        for col in (0..d).rev() {
            let mut s = b[col];
            for j in col + 1..d {
                s -= a[col * d + j] * w[j];
            }
            w[col] = s / a[col * d + col];
        }
        let mut correct = 0;
        for (x, &y) in xs.iter().zip(ys) {
            let pred: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + w[d - 1];
            if (pred >= 0.0) == (y >= 0.0) {
                correct += 1;
            }
        }
        correct as f64 / n as f64
    }

    #[test]
    fn chirp_directions_linearly_separable_on_mel_means() {
        let cfg = SpectralConfig::default();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (class, y) in [(GENERAL_CHIRP_UP, 1.0), (GENERAL_CHIRP_DOWN, -1.0)] {
            for i in 0..100u64 {
                let clip = generate_clip(&ClipSpec {
                    domain: Domain::General,
                    class_label: class,
                    duration_s: 0.64,
                    seed: seeds::derive_seed(42, class as u64, i),
                })
                .unwrap();
                let mel = waveform_to_logmel(&clip.waveform, &cfg).unwrap();
                let mut mean = vec![0.0; mel.n_mels];
                for t in 0..mel.frames {
                    for (m, v) in mel.row(t).iter().enumerate() {
                        mean[m] += v / mel.frames as f64;
                    }
                }
                xs.push(mean);
                ys.push(y);
            }
        }
        let acc = linear_classifier_accuracy(&xs, &ys);
        assert!(acc >= 0.99, "separability oracle accuracy {acc}");
    }
}
