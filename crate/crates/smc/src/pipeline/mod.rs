//! End-to-end orchestration: configuration profiles, the bundle of fitted
//! and trainable models, frozen-stage fitting, checkpointing, windowed
//! encode/decode of arbitrary-length audio, and the joint training loop.

pub mod chunk;
pub mod codec;
pub mod train;

pub use chunk::ChunkPlan;
pub use codec::{decode_file, decode_file_with, encode_file, ConditionSource};
pub use train::{train_codec, TrainOptions, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

use crate::audio_io::SAMPLE_RATE;
use crate::clustering::{build_family, CodebookFamily, EnsembleCodebook, KmeansOptions};
use crate::diffusion::{
    build_schedule, DenoiserConfig, DenoiserNet, GuidanceForm, LatentCoder, LatentCoderConfig,
    NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::features::{stack, SurrogateExtractor};
use crate::nn::checkpoint::{
    load_records, record_value_to_u64, save_records, u64_to_record_value, Record,
};
use crate::nn::ParamStore;
use crate::quantizers::{AcousticEncoder, AcousticVq};
use crate::seeds::derive_seed;
use crate::spectral::{patchify, waveform_to_logmel, SpectralConfig};
use crate::synthcorpus::{Domain, LabeledClip};

/// Seed derivation tags so every stage draws from an independent stream.
pub(crate) const SEED_EXTRACTOR: u64 = 1;
pub(crate) const SEED_KMEANS: u64 = 2;
pub(crate) const SEED_LATENT: u64 = 3;
pub(crate) const SEED_INIT: u64 = 4;
pub(crate) const SEED_TRAIN: u64 = 5;
pub(crate) const SEED_SAMPLER: u64 = 6;
pub(crate) const SEED_VOCODER: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub spectral: SpectralConfig,
    pub sample_rate: u32,
    /// Patch embedding width E produced by the frozen extractor.
    pub feature_dim: usize,
    /// Stack factor K: adjacent patch embeddings concatenated per token.
    pub stack_factor: usize,
    /// Smallest ensemble size; the family holds {S, 2S, 4S, 8S}.
    pub semantic_base: usize,
    /// Ensemble size used when encoding (any family size decodes).
    pub semantic_vocab: usize,
    pub acoustic_vocab: usize,
    pub lstm_hidden: usize,
    /// Training schedule length N.
    pub schedule_steps: usize,
    /// DDIM steps S at decode time.
    pub sampler_steps: usize,
    pub guidance: f64,
    pub guidance_form: GuidanceForm,
    pub window_s: f64,
    pub overlap_fraction: f64,
    pub latent: LatentCoderConfig,
    pub denoiser_hidden: usize,
    pub denoiser_heads: usize,
    pub denoiser_t_embed: usize,
    pub denoiser_blocks: usize,
    pub griffin_lim_iters: usize,
}

impl Default for CodecConfig {
    /// The full-length profile: 10.24 s windows with 6.25% decode overlap.
    /// Network sizes are kept CPU-friendly.
    fn default() -> CodecConfig {
        CodecConfig {
            spectral: SpectralConfig::default(),
            sample_rate: SAMPLE_RATE,
            feature_dim: 64,
            stack_factor: 1,
            semantic_base: 64,
            semantic_vocab: 512,
            acoustic_vocab: 256,
            lstm_hidden: 32,
            schedule_steps: 1000,
            sampler_steps: 50,
            guidance: 3.0,
            guidance_form: GuidanceForm::Standard,
            window_s: 10.24,
            overlap_fraction: 0.0625,
            latent: LatentCoderConfig::default(),
            denoiser_hidden: 128,
            denoiser_heads: 4,
            denoiser_t_embed: 32,
            denoiser_blocks: 2,
            griffin_lim_iters: 32,
        }
    }
}

impl CodecConfig {
    /// Short-window profile for fast CPU runs: 2.56 s windows, same hop
    /// and patch geometry, so the token rate is unchanged.
    pub fn desk() -> CodecConfig {
        CodecConfig {
            window_s: 2.56,
            ..CodecConfig::default()
        }
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.spectral.hop as f64
    }

    pub fn window_frames(&self) -> usize {
        (self.window_s * self.frames_per_second()).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        self.window_frames() * self.spectral.hop
    }

    /// Patches in one window: (frames/P) time cells × (mels/P) mel cells.
    pub fn patches_per_window(&self) -> usize {
        (self.window_frames() / self.spectral.patch) * (self.spectral.n_mels / self.spectral.patch)
    }

    pub fn pairs_per_window(&self) -> usize {
        self.patches_per_window() / self.stack_factor
    }

    pub fn pairs_per_second(&self) -> f64 {
        self.pairs_per_window() as f64 / self.window_s
    }

    /// Dimension of one stacked feature vector (and of each codebook).
    pub fn token_dim(&self) -> usize {
        self.stack_factor * self.feature_dim
    }

    /// Condition row width: semantic and acoustic features side by side.
    pub fn cond_dim(&self) -> usize {
        2 * self.token_dim()
    }

    /// Token pairs kept for a clip of `samples` length: one pair covers
    /// window_samples / pairs_per_window samples, and partially covered
    /// audio still needs its pair.
    pub fn pairs_for_samples(&self, samples: usize) -> usize {
        (samples * self.pairs_per_window()).div_ceil(self.window_samples())
    }

    pub fn latent_rows_per_window(&self) -> usize {
        self.window_frames() / self.latent.block_t
    }

    /// Input dimension of the patch extractor.
    pub fn patch_dim(&self) -> usize {
        self.spectral.patch * self.spectral.patch
    }

    pub fn family_sizes(&self) -> [usize; 4] {
        [
            self.semantic_base,
            self.semantic_base * 2,
            self.semantic_base * 4,
            self.semantic_base * 8,
        ]
    }

    /// Wire id of the decode window geometry (see `docs/bitstream.md`).
    pub fn window_config_id(&self) -> Result<u16> {
        if (self.window_s - 10.24).abs() < 1e-9 {
            Ok(0)
        } else if (self.window_s - 2.56).abs() < 1e-9 {
            Ok(1)
        } else {
            Err(Error::Config(format!(
                "window length {} s has no wire id; use 10.24 or 2.56",
                self.window_s
            )))
        }
    }

    /// CRC32 of the canonical value list, for run-log provenance.
    pub fn content_hash(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in config_to_values(self) {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        let sp = &self.spectral;
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let frames = self.window_frames();
        if frames == 0 || frames % sp.patch != 0 {
            return Err(Error::Config(format!(
                "window of {frames} frames is not a multiple of patch {}",
                sp.patch
            )));
        }
        if sp.n_mels % sp.patch != 0 {
            return Err(Error::Config(format!(
                "{} mel bins not divisible by patch {}",
                sp.n_mels, sp.patch
            )));
        }
        if ![1, 2, 4].contains(&self.stack_factor) {
            return Err(Error::Config(format!(
                "stack factor {} not one of 1, 2, 4",
                self.stack_factor
            )));
        }
        if self.patches_per_window() % self.stack_factor != 0 {
            return Err(Error::Config(format!(
                "{} patches per window not divisible by stack factor {}",
                self.patches_per_window(),
                self.stack_factor
            )));
        }
        if !(0.0..0.5).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction {} outside [0, 0.5)",
                self.overlap_fraction
            )));
        }
        let overlap_pairs = self.pairs_per_window() as f64 * self.overlap_fraction;
        if overlap_pairs.fract() != 0.0 {
            return Err(Error::Config(format!(
                "overlap of {overlap_pairs} token pairs is not integral"
            )));
        }
        for n in [self.semantic_vocab, self.acoustic_vocab] {
            if n < 2 || !n.is_power_of_two() {
                return Err(Error::Config(format!(
                    "vocabulary size {n} is not a power of two >= 2"
                )));
            }
        }
        if !self.family_sizes().contains(&self.semantic_vocab) {
            return Err(Error::Config(format!(
                "semantic vocabulary {} not in the family {:?}",
                self.semantic_vocab,
                self.family_sizes()
            )));
        }
        if self.latent.n_mels != sp.n_mels {
            return Err(Error::Config(format!(
                "latent coder expects {} mel bins, spectral front end has {}",
                self.latent.n_mels, sp.n_mels
            )));
        }
        self.latent.validate()?;
        if frames % self.latent.block_t != 0 {
            return Err(Error::Config(format!(
                "window of {frames} frames not divisible by latent block {}",
                self.latent.block_t
            )));
        }
        if self.schedule_steps < 2 || self.sampler_steps == 0 {
            return Err(Error::Config(
                "schedule needs >= 2 steps and the sampler >= 1".into(),
            ));
        }
        if self.sampler_steps > self.schedule_steps {
            return Err(Error::Config(format!(
                "sampler steps {} exceed schedule length {}",
                self.sampler_steps, self.schedule_steps
            )));
        }
        DenoiserConfig {
            latent_dim: self.latent.latent_dim(),
            cond_dim: self.cond_dim(),
            hidden: self.denoiser_hidden,
            heads: self.denoiser_heads,
            t_embed_dim: self.denoiser_t_embed,
            blocks: self.denoiser_blocks,
        }
        .validate()?;
        Ok(())
    }
}

/// Everything needed to run the codec. The extractor, semantic codebook
/// family, and latent coder are frozen; the parameter store carries the
/// trainable acoustic encoder and denoiser plus optimizer state; the
/// acoustic VQ keeps its own EMA statistics.
#[derive(Clone)]
pub struct CodecModels {
    pub config: CodecConfig,
    pub extractor_seed: u64,
    pub extractor: SurrogateExtractor,
    pub family: CodebookFamily,
    pub latent: LatentCoder,
    pub store: ParamStore,
    pub encoder: AcousticEncoder,
    pub vq: AcousticVq,
    pub denoiser: DenoiserNet,
    pub schedule: NoiseSchedule,
}

/// Fit the frozen stages on a corpus: k-means codebook family over stacked
/// extractor features (per domain, 2:1:1 general-weighted merge) and the
/// mel-block latent coder.
pub fn fit_frozen_components(
    config: &CodecConfig,
    clips: &[LabeledClip],
    master_seed: u64,
) -> Result<(CodebookFamily, LatentCoder)> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Config("cannot fit on an empty corpus".into()));
    }
    let extractor = SurrogateExtractor::new(
        config.patch_dim(),
        config.feature_dim,
        derive_seed(master_seed, SEED_EXTRACTOR, 0),
    );
    let mut per_domain: Vec<(Domain, Vec<f64>)> = Domain::ALL
        .iter()
        .map(|&d| (d, Vec::new()))
        .collect();
    let mut mels = Vec::with_capacity(clips.len());
    for clip in clips {
        for chunk in window_chunks(&clip.waveform.samples, config.window_samples()) {
            let mel = waveform_to_logmel(
                &crate::audio_io::Waveform::new(chunk),
                &config.spectral,
            )?;
            let y = stack(
                &extractor.extract(&patchify(&mel)?)?,
                config.stack_factor,
            )?;
            let bucket = per_domain
                .iter_mut()
                .find(|(d, _)| *d == clip.domain)
                .expect("Domain::ALL covers every variant");
            bucket.1.extend_from_slice(&y.vectors);
            mels.push(mel);
        }
    }
    let family = build_family(
        &per_domain,
        config.token_dim(),
        config.semantic_base,
        config.stack_factor,
        &KmeansOptions {
            seed: derive_seed(master_seed, SEED_KMEANS, 0),
            ..KmeansOptions::default()
        },
    )?;
    let latent = LatentCoder::fit(
        &mels,
        config.latent,
        derive_seed(master_seed, SEED_LATENT, 0),
    )?;
    Ok((family, latent))
}

/// Split samples into zero-padded windows covering the whole signal.
pub(crate) fn window_chunks(samples: &[f64], window: usize) -> Vec<Vec<f64>> {
    let count = samples.len().div_ceil(window).max(1);
    (0..count)
        .map(|i| {
            let start = i * window;
            let end = (start + window).min(samples.len());
            let mut chunk = samples[start..end].to_vec();
            chunk.resize(window, 0.0);
            chunk
        })
        .collect()
}

impl CodecModels {
    /// Fresh trainable parameters around already-fitted frozen components.
    pub fn new(
        config: CodecConfig,
        family: CodebookFamily,
        latent: LatentCoder,
        master_seed: u64,
    ) -> Result<CodecModels> {
        config.validate()?;
        if family.stack_factor != config.stack_factor
            || family.feature_dim != config.token_dim()
        {
            return Err(Error::Config(format!(
                "codebook family fit for K={} dim {}, config wants K={} dim {}",
                family.stack_factor,
                family.feature_dim,
                config.stack_factor,
                config.token_dim()
            )));
        }
        if family.sizes() != config.family_sizes() {
            return Err(Error::Config(format!(
                "family sizes {:?} do not match config {:?}",
                family.sizes(),
                config.family_sizes()
            )));
        }
        let extractor_seed = derive_seed(master_seed, SEED_EXTRACTOR, 0);
        let extractor =
            SurrogateExtractor::new(config.patch_dim(), config.feature_dim, extractor_seed);
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(master_seed, SEED_INIT, 0));
        let mut store = ParamStore::new();
        let encoder = AcousticEncoder::new(config.token_dim(), config.lstm_hidden);
        encoder.init(&mut store, &mut rng)?;
        let denoiser = DenoiserNet::new(DenoiserConfig {
            latent_dim: config.latent.latent_dim(),
            cond_dim: config.cond_dim(),
            hidden: config.denoiser_hidden,
            heads: config.denoiser_heads,
            t_embed_dim: config.denoiser_t_embed,
            blocks: config.denoiser_blocks,
        })?;
        denoiser.init(&mut store, &mut rng)?;
        let vq = AcousticVq::new_random(config.acoustic_vocab, config.token_dim(), 0.1, &mut rng)?;
        let schedule = build_schedule(config.schedule_steps)?;
        Ok(CodecModels {
            config,
            extractor_seed,
            extractor,
            family,
            latent,
            store,
            encoder,
            vq,
            denoiser,
            schedule,
        })
    }

    /// Fit frozen stages and initialize trainables in one call.
    pub fn bootstrap(
        config: CodecConfig,
        clips: &[LabeledClip],
        master_seed: u64,
    ) -> Result<CodecModels> {
        let (family, latent) = fit_frozen_components(&config, clips, master_seed)?;
        CodecModels::new(config, family, latent, master_seed)
    }

    pub fn ensemble(&self, size: usize) -> Result<&EnsembleCodebook> {
        self.family.by_size(size).ok_or_else(|| {
            Error::Config(format!(
                "no semantic codebook of size {size}; family has {:?}",
                self.family.sizes()
            ))
        })
    }

    /// Reject checkpoints whose geometry differs from what the caller
    /// expects to run with.
    pub fn check_compatible(&self, expected: &CodecConfig) -> Result<()> {
        let mine = &self.config;
        let fields: [(&str, f64, f64); 7] = [
            ("feature_dim", mine.feature_dim as f64, expected.feature_dim as f64),
            ("stack_factor", mine.stack_factor as f64, expected.stack_factor as f64),
            ("semantic_base", mine.semantic_base as f64, expected.semantic_base as f64),
            ("acoustic_vocab", mine.acoustic_vocab as f64, expected.acoustic_vocab as f64),
            ("window_s", mine.window_s, expected.window_s),
            ("n_mels", mine.spectral.n_mels as f64, expected.spectral.n_mels as f64),
            ("lstm_hidden", mine.lstm_hidden as f64, expected.lstm_hidden as f64),
        ];
        for (name, got, want) in fields {
            if got != want {
                return Err(Error::Config(format!(
                    "checkpoint {name} = {got}, requested config wants {want}"
                )));
            }
        }
        Ok(())
    }

    /// Checksums of the frozen components, for before/after comparisons.
    pub fn frozen_checksums(&self) -> (u32, u32, u32) {
        (
            self.extractor.weight_checksum(),
            self.family.checksum(),
            self.latent.checksum(),
        )
    }
}

const CONFIG_RECORD: &str = "codec.config";
const CONFIG_FIELDS: usize = 30;

fn config_to_values(c: &CodecConfig) -> Vec<f64> {
    vec![
        1.0, // layout sub-version
        c.spectral.n_fft as f64,
        c.spectral.hop as f64,
        c.spectral.n_mels as f64,
        c.spectral.fmin,
        c.spectral.fmax,
        c.spectral.log_floor,
        c.spectral.patch as f64,
        c.sample_rate as f64,
        c.feature_dim as f64,
        c.stack_factor as f64,
        c.semantic_base as f64,
        c.semantic_vocab as f64,
        c.acoustic_vocab as f64,
        c.lstm_hidden as f64,
        c.schedule_steps as f64,
        c.sampler_steps as f64,
        c.guidance,
        match c.guidance_form {
            GuidanceForm::Standard => 0.0,
            GuidanceForm::SwappedWeights => 1.0,
        },
        c.window_s,
        c.overlap_fraction,
        c.latent.block_t as f64,
        c.latent.block_f as f64,
        c.latent.d_z as f64,
        c.latent.train_steps as f64,
        c.latent.batch as f64,
        c.denoiser_hidden as f64,
        c.denoiser_heads as f64,
        c.denoiser_t_embed as f64,
        c.denoiser_blocks as f64,
        c.griffin_lim_iters as f64,
    ]
}

fn config_from_values(v: &[f64]) -> Result<CodecConfig> {
    if v.len() != CONFIG_FIELDS + 1 || v[0] != 1.0 {
        return Err(Error::Format(format!(
            "unrecognized config record layout (len {}, sub-version {})",
            v.len(),
            v.first().copied().unwrap_or(f64::NAN)
        )));
    }
    let u = |i: usize| v[i] as usize;
    Ok(CodecConfig {
        spectral: SpectralConfig {
            n_fft: u(1),
            hop: u(2),
            n_mels: u(3),
            fmin: v[4],
            fmax: v[5],
            log_floor: v[6],
            patch: u(7),
        },
        sample_rate: v[8] as u32,
        feature_dim: u(9),
        stack_factor: u(10),
        semantic_base: u(11),
        semantic_vocab: u(12),
        acoustic_vocab: u(13),
        lstm_hidden: u(14),
        schedule_steps: u(15),
        sampler_steps: u(16),
        guidance: v[17],
        guidance_form: if v[18] == 0.0 {
            GuidanceForm::Standard
        } else {
            GuidanceForm::SwappedWeights
        },
        window_s: v[19],
        overlap_fraction: v[20],
        latent: LatentCoderConfig {
            block_t: u(21),
            block_f: u(22),
            d_z: u(23),
            n_mels: u(3),
            train_steps: u(24),
            batch: u(25),
        },
        denoiser_hidden: u(26),
        denoiser_heads: u(27),
        denoiser_t_embed: u(28),
        denoiser_blocks: u(29),
        griffin_lim_iters: u(30),
    })
}

fn domain_code(d: Domain) -> f64 {
    match d {
        Domain::SpeechLike => 0.0,
        Domain::MusicLike => 1.0,
        Domain::General => 2.0,
    }
}

fn domain_from_code(c: f64) -> Result<Domain> {
    match c as i64 {
        0 => Ok(Domain::SpeechLike),
        1 => Ok(Domain::MusicLike),
        2 => Ok(Domain::General),
        other => Err(Error::Format(format!("unknown domain code {other}"))),
    }
}

fn family_to_records(f: &CodebookFamily) -> Vec<Record> {
    let mut out = vec![(
        "family.meta".to_string(),
        vec![1, 3],
        vec![
            f.ensembles.len() as f64,
            f.stack_factor as f64,
            f.feature_dim as f64,
        ],
    )];
    for (i, e) in f.ensembles.iter().enumerate() {
        out.push((
            format!("family.{i}.centroids"),
            vec![e.n, e.dim],
            e.centroids.clone(),
        ));
        let mut prov = Vec::with_capacity(e.provenance.len() * 3);
        for &(d, off, cnt) in &e.provenance {
            prov.extend_from_slice(&[domain_code(d), off as f64, cnt as f64]);
        }
        out.push((
            format!("family.{i}.provenance"),
            vec![e.provenance.len(), 3],
            prov,
        ));
    }
    out
}

fn family_from_records(records: &[Record]) -> Result<CodebookFamily> {
    let find = |name: &str| -> Result<&Record> {
        records
            .iter()
            .find(|r| r.0 == name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing record {name:?}")))
    };
    let meta = find("family.meta")?;
    let count = meta.2[0] as usize;
    let stack_factor = meta.2[1] as usize;
    let feature_dim = meta.2[2] as usize;
    let mut ensembles = Vec::with_capacity(count);
    for i in 0..count {
        let c = find(&format!("family.{i}.centroids"))?;
        let p = find(&format!("family.{i}.provenance"))?;
        let (n, dim) = (c.1[0], c.1[1]);
        if dim != feature_dim || c.2.len() != n * dim {
            return Err(Error::Format(format!(
                "family ensemble {i} centroid record is inconsistent"
            )));
        }
        let mut provenance = Vec::with_capacity(p.1[0]);
        for row in p.2.chunks(3) {
            provenance.push((domain_from_code(row[0])?, row[1] as usize, row[2] as usize));
        }
        ensembles.push(EnsembleCodebook {
            centroids: c.2.clone(),
            n,
            dim,
            provenance,
        });
    }
    Ok(CodebookFamily {
        ensembles,
        stack_factor,
        feature_dim,
    })
}

/// Serialize the complete codec state: config, frozen component state,
/// acoustic VQ with EMA statistics, and every trainable parameter with its
/// optimizer moments. save → load → save is byte-identical.
pub fn save_checkpoint(path: impl AsRef<Path>, models: &CodecModels) -> Result<()> {
    let mut records: Vec<Record> = vec![
        (
            CONFIG_RECORD.to_string(),
            vec![1, CONFIG_FIELDS + 1],
            config_to_values(&models.config),
        ),
        (
            "codec.extractor_seed".to_string(),
            vec![1, 1],
            vec![u64_to_record_value(models.extractor_seed)],
        ),
    ];
    records.extend(family_to_records(&models.family));
    records.extend(models.latent.export_records("latent"));
    records.extend(models.vq.export_records("vq"));
    records.extend(models.store.export_records());
    save_records(path.as_ref(), &records)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CodecModels> {
    let records = load_records(path.as_ref())?;
    let find = |name: &str| -> Result<&Record> {
        records
            .iter()
            .find(|r| r.0 == name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing record {name:?}")))
    };
    let config = config_from_values(&find(CONFIG_RECORD)?.2)?;
    config.validate()?;
    let extractor_seed = record_value_to_u64(find("codec.extractor_seed")?.2[0]);
    let extractor =
        SurrogateExtractor::new(config.patch_dim(), config.feature_dim, extractor_seed);
    let family = family_from_records(&records)?;
    let latent = LatentCoder::from_records("latent", &records)?;
    let vq = AcousticVq::from_records("vq", &records)?;
    let store_records: Vec<Record> = records
        .iter()
        .filter(|r| {
            !(r.0.starts_with("codec.")
                || r.0.starts_with("family.")
                || r.0.starts_with("latent.")
                || r.0.starts_with("vq."))
        })
        .cloned()
        .collect();
    let store = ParamStore::from_records(&store_records)?;
    for required in ["acoustic.proj.w", "denoiser.out.w", "denoiser.null_cond"] {
        if !store.contains(required) {
            return Err(Error::Format(format!(
                "checkpoint has no parameter {required:?}"
            )));
        }
    }
    let encoder = AcousticEncoder::new(config.token_dim(), config.lstm_hidden);
    let denoiser = DenoiserNet::new(DenoiserConfig {
        latent_dim: config.latent.latent_dim(),
        cond_dim: config.cond_dim(),
        hidden: config.denoiser_hidden,
        heads: config.denoiser_heads,
        t_embed_dim: config.denoiser_t_embed,
        blocks: config.denoiser_blocks,
    })?;
    let schedule = build_schedule(config.schedule_steps)?;
    if vq.n != config.acoustic_vocab || vq.dim != config.token_dim() {
        return Err(Error::Format(format!(
            "acoustic VQ of {}x{} does not match config {}x{}",
            vq.n,
            vq.dim,
            config.acoustic_vocab,
            config.token_dim()
        )));
    }
    Ok(CodecModels {
        config,
        extractor_seed,
        extractor,
        family,
        latent,
        store,
        encoder,
        vq,
        denoiser,
        schedule,
    })
}

/// Shared miniature fixture: real 2.56 s window geometry with shrunken
/// vocabularies and networks, bootstrapped once and cloned per test.
#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::synthcorpus::{default_templates, generate_corpus, LabeledClip};
    use std::sync::OnceLock;

    pub(crate) fn tiny_config() -> CodecConfig {
        CodecConfig {
            feature_dim: 16,
            semantic_base: 8,
            semantic_vocab: 16,
            acoustic_vocab: 32,
            lstm_hidden: 8,
            schedule_steps: 50,
            sampler_steps: 10,
            guidance: 2.0,
            window_s: 2.56,
            latent: LatentCoderConfig {
                block_t: 16,
                block_f: 8,
                d_z: 4,
                n_mels: 128,
                train_steps: 60,
                batch: 32,
            },
            denoiser_hidden: 32,
            denoiser_heads: 2,
            denoiser_t_embed: 8,
            denoiser_blocks: 1,
            griffin_lim_iters: 4,
            ..CodecConfig::default()
        }
    }

    pub(crate) fn tiny_corpus() -> Vec<LabeledClip> {
        generate_corpus(2, &default_templates(2.56), 77).unwrap()
    }

    pub(crate) fn tiny_models() -> CodecModels {
        static TINY: OnceLock<CodecModels> = OnceLock::new();
        TINY.get_or_init(|| {
            CodecModels::bootstrap(tiny_config(), &tiny_corpus(), 11).unwrap()
        })
        .clone()
    }
}
