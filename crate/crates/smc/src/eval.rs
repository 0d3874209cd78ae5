//! Objective reconstruction metrics, bitrate summaries, and a probe that
//! measures how much class information the token embeddings carry.
//!
//! Distances follow the multi-resolution recipe: three STFT sizes, L1
//! between log magnitudes, plus a 64-band mel variant per scale, averaged
//! over scales. The probe freezes the codec, averages token features over
//! time to get one vector per clip, and trains a small classifier on top.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::audio_io::Waveform;
use crate::bitstream::{bitrate_report, unpack};
use crate::error::{Error, Result};
use crate::nn::{collect_param_grads, Activation, AdamConfig, Dense, ParamStore, Tape, Tensor};
use crate::pipeline::{decode_file, encode_file, CodecModels};
use crate::seeds::derive_seed;
use crate::spectral::{mel_filterbank, stft_magnitude};
use crate::synthcorpus::{Domain, LabeledClip};

/// STFT sizes for the multi-resolution distances; hop is a quarter window.
pub const DISTANCE_WINDOWS: [usize; 3] = [512, 1024, 2048];
const DISTANCE_MELS: usize = 64;
const LOG_FLOOR: f64 = 1e-5;

fn log_l1(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x.max(LOG_FLOOR).ln() - y.max(LOG_FLOOR).ln()).abs();
    }
    acc / n as f64
}

/// Mean L1 log-mel and log-STFT distances, each averaged over the three
/// window sizes. Zero iff the signals match up to the log floor.
pub fn spectral_distance(a: &Waveform, b: &Waveform) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot compare waveforms of {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::Shape(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    if a.is_empty() {
        return Err(Error::Config("cannot compare empty waveforms".into()));
    }
    let mut mel_total = 0.0;
    let mut stft_total = 0.0;
    for w in DISTANCE_WINDOWS {
        let hop = w / 4;
        let (ma, frames) = stft_magnitude(&a.samples, w, hop);
        let (mb, _) = stft_magnitude(&b.samples, w, hop);
        if frames == 0 {
            return Err(Error::Config(format!(
                "waveform of {} samples is shorter than one {hop}-sample hop",
                a.len()
            )));
        }
        stft_total += log_l1(&ma, &mb);

        let bins = w / 2 + 1;
        let fb = mel_filterbank(
            a.sample_rate,
            w,
            DISTANCE_MELS,
            0.0,
            a.sample_rate as f64 / 2.0,
        );
        let project = |mags: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; frames * DISTANCE_MELS];
            for t in 0..frames {
                let row = &mags[t * bins..(t + 1) * bins];
                for m in 0..DISTANCE_MELS {
                    let filt = &fb[m * bins..(m + 1) * bins];
                    out[t * DISTANCE_MELS + m] =
                        filt.iter().zip(row).map(|(f, x)| f * x).sum();
                }
            }
            out
        };
        mel_total += log_l1(&project(&ma), &project(&mb));
    }
    let scales = DISTANCE_WINDOWS.len() as f64;
    Ok((mel_total / scales, stft_total / scales))
}

/// Which token embeddings feed the probe classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLayer {
    SemanticOnly,
    AcousticOnly,
    Both,
}

impl ProbeLayer {
    pub fn label(&self) -> &'static str {
        match self {
            ProbeLayer::SemanticOnly => "semantic_only",
            ProbeLayer::AcousticOnly => "acoustic_only",
            ProbeLayer::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> ProbeOptions {
        ProbeOptions {
            hidden: 128,
            steps: 300,
            lr: 0.01,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub layer: ProbeLayer,
    pub accuracy: f64,
    pub classes: usize,
    pub train_count: usize,
    pub test_count: usize,
}

/// Time-averaged token features for one clip: (semantic, acoustic), each of
/// token_dim width, averaged over the pairs that cover actual audio.
pub fn clip_token_features(
    models: &CodecModels,
    audio: &Waveform,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = models.config.token_dim();
    let keep = models.config.pairs_for_samples(audio.len());
    let ws = models.config.window_samples();
    let mut sem = vec![0.0; dim];
    let mut aco = vec![0.0; dim];
    let mut seen = 0usize;
    'outer: for start in (0..audio.len()).step_by(ws) {
        let end = (start + ws).min(audio.len());
        let mut chunk = audio.samples[start..end].to_vec();
        chunk.resize(ws, 0.0);
        let out = models.encode_window(&chunk)?;
        for i in 0..out.rows {
            if seen == keep {
                break 'outer;
            }
            let row = out.feature_row(i);
            for d in 0..dim {
                sem[d] += row[d];
                aco[d] += row[dim + d];
            }
            seen += 1;
        }
    }
    for v in sem.iter_mut().chain(aco.iter_mut()) {
        *v /= seen as f64;
    }
    Ok((sem, aco))
}

/// Dense class ids for (domain, class_label) pairs, in first-seen order.
fn dense_labels(clips: &[LabeledClip]) -> (Vec<usize>, usize) {
    let mut seen: Vec<(Domain, usize)> = Vec::new();
    let labels = clips
        .iter()
        .map(|c| {
            let key = (c.domain, c.class_label);
            match seen.iter().position(|&k| k == key) {
                Some(i) => i,
                None => {
                    seen.push(key);
                    seen.len() - 1
                }
            }
        })
        .collect();
    (labels, seen.len())
}

/// Stratified split: within each class the items are shuffled by the seed
/// and `test_fraction` of them (at least one) goes to the test side.
fn split_stratified(
    labels: &[usize],
    classes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        for i in (1..members.len()).rev() {
            members.swap(i, rng.random_range(0..=i));
        }
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "class {class} has {} clip(s); need at least 2 for a split",
                members.len()
            )));
        }
        let n_test =
            ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Train a classifier on the given per-item feature vectors and report test
/// accuracy. `hidden = 0` trains a plain linear classifier, used as the
/// separability oracle; otherwise it is linear → tanh → linear.
pub fn classifier_accuracy(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    hidden: usize,
    opts: &ProbeOptions,
) -> Result<(f64, usize, usize)> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::Config(format!(
            "probe needs at least 2 classes, got {classes}"
        )));
    }
    let dim = features
        .first()
        .ok_or_else(|| Error::Config("no clips to probe".into()))?
        .len();
    let (train, test) = split_stratified(labels, classes, opts.test_fraction, opts.seed)?;

    // Standardize with train statistics only.
    let mut mean = vec![0.0; dim];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(&features[i]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= train.len() as f64;
    }
    let mut std = vec![0.0; dim];
    for &i in &train {
        for d in 0..dim {
            let t = features[i][d] - mean[d];
            std[d] += t * t;
        }
    }
    for s in &mut std {
        *s = (*s / train.len() as f64).sqrt().max(1e-8);
    }
    let norm_rows = |idx: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            for d in 0..dim {
                out.push((features[i][d] - mean[d]) / std[d]);
            }
        }
        out
    };

    let mut store = ParamStore::new();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(opts.seed, 0x9e0b, 0));
    let net: Vec<Dense> = if hidden == 0 {
        vec![Dense::new("probe.out", dim, classes, Activation::Linear)]
    } else {
        vec![
            Dense::new("probe.h", dim, hidden, Activation::Tanh),
            Dense::new("probe.out", hidden, classes, Activation::Linear),
        ]
    };
    for layer in &net {
        layer.init(&mut store, &mut rng)?;
    }
    let adam = AdamConfig {
        lr: opts.lr,
        ..AdamConfig::default()
    };

    let x_train = norm_rows(&train);
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    for _ in 0..opts.steps {
        let mut tape = Tape::new();
        let mut h = tape.leaf(Tensor::new(vec![train.len(), dim], x_train.clone())?);
        for layer in &net {
            h = layer.apply(&store, &mut tape, h)?;
        }
        let loss = tape.cross_entropy(h, &y_train)?;
        tape.backward(loss)?;
        let grads = collect_param_grads(&tape)?;
        store.adam_step(&grads, &adam)?;
    }

    let x_test = norm_rows(&test);
    let mut tape = Tape::new();
    let mut h = tape.leaf(Tensor::new(vec![test.len(), dim], x_test)?);
    for layer in &net {
        h = layer.apply(&store, &mut tape, h)?;
    }
    let logits = tape.value(h);
    let mut correct = 0usize;
    for (k, &i) in test.iter().enumerate() {
        let row = logits.row(k);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .expect("classes >= 2");
        if pred == labels[i] {
            correct += 1;
        }
    }
    Ok((correct as f64 / test.len() as f64, train.len(), test.len()))
}

/// Freeze the codec, embed every clip, and measure probe accuracy for the
/// chosen embedding layer.
pub fn probe_eval(
    clips: &[LabeledClip],
    models: &CodecModels,
    layer: ProbeLayer,
    opts: &ProbeOptions,
) -> Result<ProbeResult> {
    let (labels, classes) = dense_labels(clips);
    if classes < 2 {
        return Err(Error::Config(format!(
            "probe needs at least 2 classes, got {classes}"
        )));
    }
    let mut features = Vec::with_capacity(clips.len());
    for clip in clips {
        let (sem, aco) = clip_token_features(models, &clip.waveform)?;
        features.push(match layer {
            ProbeLayer::SemanticOnly => sem,
            ProbeLayer::AcousticOnly => aco,
            ProbeLayer::Both => sem.into_iter().chain(aco).collect(),
        });
    }
    let (accuracy, train_count, test_count) =
        classifier_accuracy(&features, &labels, classes, opts.hidden, opts)?;
    Ok(ProbeResult {
        layer,
        accuracy,
        classes,
        train_count,
        test_count,
    })
}

#[derive(Debug, Clone)]
pub struct DomainMetrics {
    pub domain: Domain,
    pub clips: usize,
    pub mel_distance: f64,
    pub stft_distance: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub clips: usize,
    pub mel_distance: f64,
    pub stft_distance: f64,
    pub kbps: f64,
    pub tokens_per_second: f64,
    pub per_domain: Vec<DomainMetrics>,
}

/// Encode and decode every clip, then aggregate distances per domain and
/// overall. Clip i decodes with a seed derived from `seed` and i, so the
/// whole report is reproducible.
pub fn eval_reconstruction(
    clips: &[LabeledClip],
    models: &CodecModels,
    seed: u64,
) -> Result<MetricReport> {
    if clips.is_empty() {
        return Err(Error::Config("no clips to evaluate".into()));
    }
    let mut rate = None;
    let mut per_clip = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let packet = encode_file(&clip.waveform, models)?;
        if rate.is_none() {
            let (header, _, _) = unpack(&packet)?;
            rate = Some(bitrate_report(&header)?);
        }
        let decoded = decode_file(&packet, models, derive_seed(seed, 0xe7a1, i as u64))?;
        let (mel, stft) = spectral_distance(&clip.waveform, &decoded)?;
        per_clip.push((clip.domain, mel, stft));
    }
    let rate = rate.expect("at least one clip");

    let mut per_domain = Vec::new();
    for &domain in &Domain::ALL {
        let rows: Vec<&(Domain, f64, f64)> =
            per_clip.iter().filter(|(d, _, _)| *d == domain).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        per_domain.push(DomainMetrics {
            domain,
            clips: rows.len(),
            mel_distance: rows.iter().map(|(_, m, _)| m).sum::<f64>() / n,
            stft_distance: rows.iter().map(|(_, _, s)| s).sum::<f64>() / n,
        });
    }
    let n = per_clip.len() as f64;
    Ok(MetricReport {
        clips: per_clip.len(),
        mel_distance: per_clip.iter().map(|(_, m, _)| m).sum::<f64>() / n,
        stft_distance: per_clip.iter().map(|(_, _, s)| s).sum::<f64>() / n,
        kbps: rate.kbps_total,
        tokens_per_second: rate.tokens_per_second,
        per_domain,
    })
}

/// Line-oriented report, one `key=value` pair set per line.
pub fn write_text_report(out: &mut impl Write, r: &MetricReport) -> std::io::Result<()> {
    writeln!(out, "clips={}", r.clips)?;
    writeln!(out, "mel_distance={:.6}", r.mel_distance)?;
    writeln!(out, "stft_distance={:.6}", r.stft_distance)?;
    writeln!(out, "kbps={:.4}", r.kbps)?;
    writeln!(out, "tokens_per_second={}", r.tokens_per_second)?;
    for d in &r.per_domain {
        writeln!(
            out,
            "domain={} clips={} mel_distance={:.6} stft_distance={:.6}",
            d.domain, d.clips, d.mel_distance, d.stft_distance
        )?;
    }
    Ok(())
}

/// The same report as a comma-separated table with a header row.
pub fn write_csv_report(out: &mut impl Write, r: &MetricReport) -> std::io::Result<()> {
    writeln!(
        out,
        "scope,clips,mel_distance,stft_distance,kbps,tokens_per_second"
    )?;
    writeln!(
        out,
        "overall,{},{:.6},{:.6},{:.4},{}",
        r.clips, r.mel_distance, r.stft_distance, r.kbps, r.tokens_per_second
    )?;
    for d in &r.per_domain {
        writeln!(
            out,
            "{},{},{:.6},{:.6},,",
            d.domain, d.clips, d.mel_distance, d.stft_distance
        )?;
    }
    Ok(())
}
