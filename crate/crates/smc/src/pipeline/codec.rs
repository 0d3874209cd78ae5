//! File-level encode and decode.
//!
//! Encoding walks non-overlapping analysis windows (last one zero-padded),
//! concatenates the per-window token pairs, and keeps the first
//! ⌈duration · pairs_per_second⌉ pairs so padding never leaks into the
//! stream. It never touches the diffusion decoder. Decoding re-pads the
//! stream to whole windows by repeating the final pair, renders each
//! overlapping decode window (tokens → condition → DDIM → latent decode →
//! phase reconstruction), and crossfades the seams.

use crate::audio_io::Waveform;
use crate::bitstream::{pack, unpack, PacketHeader, PACKET_VERSION};
use crate::error::{Error, Result};
use crate::features::{stack, StackedFeatures};
use crate::pipeline::{chunk::ChunkPlan, window_chunks, CodecModels, SEED_SAMPLER, SEED_VOCODER};
use crate::quantizers::{encode as encode_tokens, tokens_to_features, EncoderOutput};
use crate::seeds::derive_seed;
use crate::spectral::{griffin_lim, patchify, waveform_to_logmel, MelSpectrogram};

/// Which halves of the token-derived condition reach the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionSource {
    Both,
    /// Zero the acoustic half; measures what the semantic layer alone
    /// can reconstruct.
    SemanticOnly,
}

impl CodecModels {
    /// Stacked extractor features for one exact analysis window.
    pub fn window_features(&self, chunk: &[f64]) -> Result<StackedFeatures> {
        if chunk.len() != self.config.window_samples() {
            return Err(Error::Shape(format!(
                "window of {} samples, expected {}",
                chunk.len(),
                self.config.window_samples()
            )));
        }
        let mel = waveform_to_logmel(&Waveform::new(chunk.to_vec()), &self.config.spectral)?;
        self.window_features_from_mel(&mel)
    }

    /// Same, starting from an already-computed window mel.
    pub fn window_features_from_mel(&self, mel: &MelSpectrogram) -> Result<StackedFeatures> {
        let grid = patchify(mel)?;
        stack(&self.extractor.extract(&grid)?, self.config.stack_factor)
    }

    /// Token pairs for one window at the configured semantic vocabulary.
    pub fn encode_window(&self, chunk: &[f64]) -> Result<EncoderOutput> {
        let y = self.window_features(chunk)?;
        let cb = self.ensemble(self.config.semantic_vocab)?;
        encode_tokens(&y, cb, &self.encoder, &self.store, &self.vq)
    }
}

/// Encode a waveform into a complete packet.
pub fn encode_file(audio: &Waveform, models: &CodecModels) -> Result<Vec<u8>> {
    if audio.is_empty() {
        return Err(Error::Config("cannot encode empty audio".into()));
    }
    if audio.sample_rate != models.config.sample_rate {
        return Err(Error::Config(format!(
            "audio at {} Hz, codec runs at {} Hz",
            audio.sample_rate, models.config.sample_rate
        )));
    }
    let ws = models.config.window_samples();
    let mut semantic: Vec<u32> = Vec::new();
    let mut acoustic: Vec<u32> = Vec::new();
    for chunk in window_chunks(&audio.samples, ws) {
        let out = models.encode_window(&chunk)?;
        semantic.extend_from_slice(out.semantic_tokens());
        acoustic.extend_from_slice(out.acoustic_tokens());
    }
    let keep = models.config.pairs_for_samples(audio.len());
    semantic.truncate(keep);
    acoustic.truncate(keep);
    let header = PacketHeader {
        version: PACKET_VERSION,
        sample_rate: models.config.sample_rate,
        stack_factor: models.config.stack_factor as u8,
        semantic_vocab: models.config.semantic_vocab as u32,
        acoustic_vocab: models.config.acoustic_vocab as u32,
        token_pairs: keep as u32,
        original_sample_count: audio.len() as u64,
        window_config: models.config.window_config_id()?,
    };
    pack(&semantic, &acoustic, &header)
}

/// Decode a packet back to audio with the full condition.
pub fn decode_file(packet: &[u8], models: &CodecModels, seed: u64) -> Result<Waveform> {
    decode_file_with(packet, models, seed, ConditionSource::Both)
}

/// Decode with an explicit choice of condition halves.
pub fn decode_file_with(
    packet: &[u8],
    models: &CodecModels,
    seed: u64,
    source: ConditionSource,
) -> Result<Waveform> {
    let (header, semantic, acoustic) = unpack(packet)?;
    let cfg = &models.config;
    if header.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "packet at {} Hz, codec runs at {} Hz",
            header.sample_rate, cfg.sample_rate
        )));
    }
    if header.stack_factor as usize != cfg.stack_factor {
        return Err(Error::Config(format!(
            "packet stack factor {} but codec is configured for {}",
            header.stack_factor, cfg.stack_factor
        )));
    }
    if header.window_config != cfg.window_config_id()? {
        return Err(Error::Config(format!(
            "packet window id {} but codec window is {} s",
            header.window_config, cfg.window_s
        )));
    }
    if header.acoustic_vocab as usize != models.vq.n {
        return Err(Error::Config(format!(
            "packet acoustic vocabulary {} but the VQ has {} codes",
            header.acoustic_vocab, models.vq.n
        )));
    }
    let cb = models.ensemble(header.semantic_vocab as usize)?;

    let ws = cfg.window_samples();
    let ppw = cfg.pairs_per_window();
    let plan = ChunkPlan::plan(
        header.original_sample_count as usize,
        ws,
        cfg.overlap_fraction,
    )?;
    // Token stride mirrors the sample stride exactly: one pair covers
    // ws / ppw samples and the overlap is an integer number of pairs.
    let stride_pairs = plan.stride_samples * ppw / ws;
    let needed_pairs = plan.starts.len().saturating_sub(1) * stride_pairs + ppw;
    let pad_pair = (
        *semantic.last().expect("validated token_pairs >= 1"),
        *acoustic.last().expect("validated token_pairs >= 1"),
    );
    let mut sem = semantic;
    let mut aco = acoustic;
    while sem.len() < needed_pairs {
        sem.push(pad_pair.0);
        aco.push(pad_pair.1);
    }

    let rows = cfg.latent_rows_per_window();
    let frames = cfg.window_frames();
    let mut windows = Vec::with_capacity(plan.starts.len());
    for w in 0..plan.starts.len() {
        let off = w * stride_pairs;
        let mut cond = tokens_to_features(
            &sem[off..off + ppw],
            &aco[off..off + ppw],
            cb,
            &models.vq,
        )?;
        if source == ConditionSource::SemanticOnly {
            let dim = cfg.cond_dim();
            let half = cfg.token_dim();
            for row in cond.chunks_mut(dim) {
                for v in &mut row[half..] {
                    *v = 0.0;
                }
            }
        }
        let model = crate::diffusion::ConditionedDenoiser::new(
            &models.denoiser,
            &models.store,
            cond,
            ppw,
            rows,
        )?;
        let z = crate::diffusion::ddim_sample(
            &model,
            &models.schedule,
            &crate::diffusion::SamplerConfig {
                steps: cfg.sampler_steps,
                guidance: cfg.guidance,
                form: cfg.guidance_form,
                seed: derive_seed(seed, SEED_SAMPLER, w as u64),
            },
        )?;
        let mel = models.latent.decode(&z, frames)?;
        let wave = griffin_lim(
            &mel,
            cfg.griffin_lim_iters,
            derive_seed(seed, SEED_VOCODER, w as u64),
        )?;
        windows.push(wave.samples);
    }
    let samples = plan.stitch(&windows)?;
    for v in &samples {
        if !v.is_finite() {
            return Err(Error::Numeric("decode produced non-finite audio".into()));
        }
    }
    Ok(Waveform::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::unpack as unpack_packet;
    use crate::pipeline::testutil::{tiny_config, tiny_models};
    use crate::pipeline::CodecModels;
    use crate::synthcorpus::{generate_clip, ClipSpec, Domain};

    fn clip(samples: usize, seed: u64) -> Waveform {
        generate_clip(&ClipSpec {
            domain: Domain::MusicLike,
            class_label: 1,
            duration_s: samples as f64 / 16000.0,
            seed,
        })
        .unwrap()
        .waveform
    }

    #[test]
    fn encode_writes_exact_pair_count_and_header() {
        let models = tiny_models();
        let audio = clip(61440, 5); // 1.5 windows
        let packet = encode_file(&audio, &models).unwrap();
        let (header, sem, aco) = unpack_packet(&packet).unwrap();
        assert_eq!(header.token_pairs, 192);
        assert_eq!(header.original_sample_count, 61440);
        assert_eq!(header.window_config, 1);
        assert_eq!(header.semantic_vocab, 16);
        assert_eq!(header.acoustic_vocab, 32);
        assert_eq!(header.stack_factor, 1);
        assert_eq!(sem.len(), 192);
        assert_eq!(aco.len(), 192);
        assert!(sem.iter().all(|&t| t < 16));
        assert!(aco.iter().all(|&t| t < 32));

        // Windows encode independently: the first window's tokens do not
        // depend on audio that follows it.
        let first = encode_file(&Waveform::new(audio.samples[..40960].to_vec()), &models).unwrap();
        let (_, s1, a1) = unpack_packet(&first).unwrap();
        assert_eq!(&sem[..128], &s1[..]);
        assert_eq!(&aco[..128], &a1[..]);
    }

    #[test]
    fn decode_restores_exact_length_deterministically() {
        use rand::SeedableRng;
        let mut models = tiny_models();
        // The output layer is zero at init, which makes the untrained
        // denoiser a constant function; give it weights so the condition
        // actually reaches the samples.
        let shape = models.store.get("denoiser.out.w").unwrap().shape.clone();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(123);
        models
            .store
            .set(
                "denoiser.out.w",
                crate::nn::Tensor::randn(&shape, 0.05, &mut rng),
            )
            .unwrap();
        let audio = clip(48000, 7); // 3.0 s spans two decode windows
        let packet = encode_file(&audio, &models).unwrap();
        let out = decode_file(&packet, &models, 9).unwrap();
        assert_eq!(out.len(), 48000);
        assert_eq!(out.sample_rate, 16000);
        assert!(out.samples.iter().all(|v| v.is_finite()));

        let again = decode_file(&packet, &models, 9).unwrap();
        assert_eq!(out.samples, again.samples, "same seed must be bit-identical");
        let other = decode_file(&packet, &models, 10).unwrap();
        assert_ne!(out.samples, other.samples, "seed must matter");

        let sem_only =
            decode_file_with(&packet, &models, 9, ConditionSource::SemanticOnly).unwrap();
        assert_eq!(sem_only.len(), 48000);
        assert_ne!(sem_only.samples, out.samples);
    }

    #[test]
    fn short_clips_round_trip_with_token_padding() {
        let models = tiny_models();
        let audio = clip(8000, 3); // half a second, far below one window
        let packet = encode_file(&audio, &models).unwrap();
        let (header, _, _) = unpack_packet(&packet).unwrap();
        assert_eq!(header.token_pairs, 25);
        let out = decode_file(&packet, &models, 1).unwrap();
        assert_eq!(out.len(), 8000);
    }

    #[test]
    fn encode_rejects_empty_audio_and_wrong_rate() {
        let models = tiny_models();
        let err = encode_file(&Waveform::new(Vec::new()), &models).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let wrong_rate = Waveform {
            samples: vec![0.1; 100],
            sample_rate: 8000,
        };
        let err = encode_file(&wrong_rate, &models).unwrap_err();
        assert!(err.to_string().contains("Hz"), "{err}");
    }

    #[test]
    fn decode_rejects_mismatched_geometry() {
        let models = tiny_models();
        let packet = encode_file(&clip(8000, 3), &models).unwrap();

        let mut wider_vq = tiny_config();
        wider_vq.acoustic_vocab = 64;
        let other = CodecModels::new(
            wider_vq,
            models.family.clone(),
            models.latent.clone(),
            11,
        )
        .unwrap();
        let err = decode_file(&packet, &other, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let mut long_window = tiny_config();
        long_window.window_s = 10.24;
        let other = CodecModels::new(
            long_window,
            models.family.clone(),
            models.latent.clone(),
            11,
        )
        .unwrap();
        let err = decode_file(&packet, &other, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
