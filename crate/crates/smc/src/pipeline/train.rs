//! Joint training of the acoustic encoder, acoustic VQ, and denoiser.
//!
//! The frozen stages (extractor, semantic codebooks, latent coder) are used
//! only to precompute per-window features and latent targets up front, so
//! each step touches no audio. One step draws an ensemble size for the
//! whole batch, runs the encoder, quantizes its output, and regresses the
//! denoiser's velocity prediction with the token-derived condition; the
//! condition is dropped per item with a small probability so the sampler
//! can be guided at decode time. The VQ codebook follows assignment
//! averages after each step instead of gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::diffusion::{diffusion_recon_loss, sample_noise, sample_timesteps, DiffusionBatch};
use crate::error::{Error, Result};
use crate::features::StackedFeatures;
use crate::nn::{collect_param_grads, AdamConfig, Tape, Tensor};
use crate::pipeline::{window_chunks, CodecModels, SEED_TRAIN};
use crate::quantizers::semantic_quantize;
use crate::seeds::derive_seed;
use crate::spectral::waveform_to_logmel;
use crate::synthcorpus::LabeledClip;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Optimizer steps to run in this call (training resumes from the
    /// store's persisted step counter).
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    /// Weight on ‖encoder output − assigned code‖² pulling the encoder
    /// toward the codebook.
    pub commitment_weight: f64,
    /// Per-item probability of replacing the condition with the learned
    /// null row.
    pub cfg_drop: f64,
    pub log_every: usize,
    pub val_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            steps: 2000,
            batch: 8,
            lr: 1e-3,
            warmup_steps: 100,
            commitment_weight: 0.25,
            cfg_drop: 0.1,
            log_every: 50,
            val_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainEntry {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub commit: f64,
    /// Semantic ensemble size drawn for this step's batch.
    pub ensemble: usize,
    /// Fraction of VQ codes hit by this batch.
    pub vq_usage: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub entries: Vec<TrainEntry>,
    /// (step, validation reconstruction loss), including the pre-training
    /// point at the starting step.
    pub val_history: Vec<(u64, f64)>,
    pub initial_val: f64,
    pub final_val: f64,
}

/// Everything a training step needs from one analysis window.
struct WindowData {
    y: StackedFeatures,
    /// Dequantized semantic features per family size, smallest first.
    e_s: Vec<Vec<f64>>,
    /// Latent target, rows × latent_dim.
    z0: Vec<f64>,
}

fn precompute_windows(models: &CodecModels, clips: &[LabeledClip]) -> Result<Vec<WindowData>> {
    let cfg = &models.config;
    let mut out = Vec::new();
    for clip in clips {
        if clip.waveform.sample_rate != cfg.sample_rate {
            return Err(Error::Config(format!(
                "clip at {} Hz, codec runs at {} Hz",
                clip.waveform.sample_rate, cfg.sample_rate
            )));
        }
        for chunk in window_chunks(&clip.waveform.samples, cfg.window_samples()) {
            let mel = waveform_to_logmel(
                &crate::audio_io::Waveform::new(chunk),
                &cfg.spectral,
            )?;
            let y = models.window_features_from_mel(&mel)?;
            let mut e_s = Vec::with_capacity(4);
            for size in cfg.family_sizes() {
                e_s.push(semantic_quantize(&y, models.ensemble(size)?)?.features);
            }
            let z0 = models.latent.encode(&mel)?;
            out.push(WindowData { y, e_s, z0 });
        }
    }
    Ok(out)
}

/// One batched loss graph. Returns the recon and commitment nodes plus the
/// encoder output values and their VQ assignments (for the EMA update).
#[allow(clippy::too_many_arguments)]
fn batch_loss(
    tape: &mut Tape,
    models: &CodecModels,
    windows: &[WindowData],
    items: &[usize],
    size_idx: usize,
    drops: &[bool],
    data: &DiffusionBatch,
) -> Result<(crate::nn::NodeId, crate::nn::NodeId, Vec<f64>, Vec<u32>)> {
    let cfg = &models.config;
    let batch = items.len();
    let ppw = cfg.pairs_per_window();
    let dim = cfg.token_dim();
    let rows = cfg.latent_rows_per_window();

    let mut x = Vec::with_capacity(batch * ppw * 2 * dim);
    let mut es = Vec::with_capacity(batch * ppw * dim);
    for &i in items {
        let w = &windows[i];
        for r in 0..ppw {
            x.extend_from_slice(w.y.row(r));
            x.extend_from_slice(&w.e_s[size_idx][r * dim..(r + 1) * dim]);
        }
        es.extend_from_slice(&w.e_s[size_idx]);
    }
    let x = tape.leaf(Tensor::new(vec![batch * ppw, 2 * dim], x)?);
    let ya = models.encoder.apply(&models.store, tape, x, batch, ppw)?;
    let ya_values = tape.value(ya).data.clone();
    let (assignments, e_a) = models.vq.quantize(&ya_values, batch * ppw)?;

    let e_a_tensor = Tensor::new(vec![batch * ppw, dim], e_a)?;
    let commit = {
        let target = tape.leaf(e_a_tensor.clone());
        tape.mse(ya, target)?
    };
    let st = tape.straight_through(ya, e_a_tensor)?;
    let es_node = tape.leaf(Tensor::new(vec![batch * ppw, dim], es)?);
    let cond_full = tape.concat_cols(es_node, st)?;
    let cond = if drops.iter().any(|&d| d) {
        let mut parts = Vec::with_capacity(batch);
        for (i, &dropped) in drops.iter().enumerate() {
            parts.push(if dropped {
                models.denoiser.null_cond_node(&models.store, tape, ppw)?
            } else {
                tape.slice_rows(cond_full, i * ppw, ppw)?
            });
        }
        tape.stack_rows(&parts)?
    } else {
        cond_full
    };
    let recon = diffusion_recon_loss(
        tape,
        &models.denoiser,
        &models.store,
        &models.schedule,
        data,
        cond,
        batch,
        rows,
        ppw,
    )?;
    Ok((recon, commit, ya_values, assignments))
}

/// Validation reconstruction loss on fixed windows with fixed timesteps and
/// noise, full condition, no dropout, at the configured encode vocabulary.
fn val_loss(
    models: &CodecModels,
    windows: &[WindowData],
    val_items: &[usize],
    size_idx: usize,
    data: &DiffusionBatch,
) -> Result<f64> {
    let mut tape = Tape::new();
    let drops = vec![false; val_items.len()];
    let (recon, _, _, _) =
        batch_loss(&mut tape, models, windows, val_items, size_idx, &drops, data)?;
    Ok(tape.value(recon).item())
}

pub fn train_codec(
    models: &mut CodecModels,
    clips: &[LabeledClip],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if opts.steps == 0 || opts.batch == 0 {
        return Err(Error::Config("need at least one step and one item".into()));
    }
    if !(0.0..=1.0).contains(&opts.cfg_drop) {
        return Err(Error::Config(format!(
            "condition drop probability {} outside [0, 1]",
            opts.cfg_drop
        )));
    }
    let windows = precompute_windows(models, clips)?;
    if windows.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 windows of audio, got {}",
            windows.len()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(opts.seed, SEED_TRAIN, 0));
    let mut val_rng = ChaCha20Rng::seed_from_u64(derive_seed(opts.seed, SEED_TRAIN, 1));

    // Deterministic split; validation gets a small fixed slice.
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, val_rng.random_range(0..=i));
    }
    let val_count = (windows.len() / 8).clamp(1, opts.batch.max(1));
    let (val_items, train_items) = order.split_at(val_count);

    let cfg = models.config.clone();
    let n = models.schedule.n;
    let per_item = cfg.latent_rows_per_window() * cfg.latent.latent_dim();
    let sizes = cfg.family_sizes();
    let val_size_idx = sizes
        .iter()
        .position(|&s| s == cfg.semantic_vocab)
        .expect("validated: semantic_vocab is in the family");

    // Fixed validation batch: evenly spread timesteps, noise drawn once.
    let val_data = DiffusionBatch {
        z0: val_items
            .iter()
            .flat_map(|&i| windows[i].z0.iter().copied())
            .collect(),
        timesteps: (0..val_items.len())
            .map(|i| (((i as f64 + 0.5) * n as f64 / val_items.len() as f64).round() as usize)
                .clamp(1, n))
            .collect(),
        eps: sample_noise(&mut val_rng, val_items.len() * per_item),
    };

    let adam = AdamConfig {
        lr: opts.lr,
        warmup_steps: opts.warmup_steps,
        ..AdamConfig::default()
    };

    let initial_val = val_loss(models, &windows, val_items, val_size_idx, &val_data)?;
    let mut report = TrainReport {
        entries: Vec::new(),
        val_history: vec![(models.store.step(), initial_val)],
        initial_val,
        final_val: initial_val,
    };

    for k in 0..opts.steps {
        let size_idx = rng.random_range(0..sizes.len());
        let items: Vec<usize> = (0..opts.batch)
            .map(|_| train_items[rng.random_range(0..train_items.len())])
            .collect();
        let drops: Vec<bool> = (0..opts.batch)
            .map(|_| rng.random_bool(opts.cfg_drop))
            .collect();
        let data = DiffusionBatch {
            z0: items
                .iter()
                .flat_map(|&i| windows[i].z0.iter().copied())
                .collect(),
            timesteps: sample_timesteps(&mut rng, opts.batch, n),
            eps: sample_noise(&mut rng, opts.batch * per_item),
        };

        let mut tape = Tape::new();
        let (recon, commit, ya_values, assignments) =
            batch_loss(&mut tape, models, &windows, &items, size_idx, &drops, &data)?;
        let scaled = tape.scale(commit, opts.commitment_weight);
        let total = tape.add(recon, scaled)?;
        tape.backward(total)?;
        let grads = collect_param_grads(&tape)?;
        models.store.adam_step(&grads, &adam)?;
        models.vq.ema_update(&ya_values, &assignments)?;

        let step = models.store.step();
        let last = k + 1 == opts.steps;
        if opts.log_every > 0 && ((k + 1) % opts.log_every == 0 || last) {
            report.entries.push(TrainEntry {
                step,
                total: tape.value(total).item(),
                recon: tape.value(recon).item(),
                commit: tape.value(commit).item(),
                ensemble: sizes[size_idx],
                vq_usage: models.vq.usage_fraction(&assignments),
            });
        }
        if (opts.val_every > 0 && (k + 1) % opts.val_every == 0) || last {
            let v = val_loss(models, &windows, val_items, val_size_idx, &val_data)?;
            report.val_history.push((step, v));
            report.final_val = v;
        }
    }
    Ok(report)
}
