//! Full encode and decode of one clip with a freshly bootstrapped codec:
//! shows the token stream, the packet header, the rate figures, and the
//! reconstruction distances. Uses a shrunken geometry so the whole run
//! takes seconds; the trained quality path goes through `train_desk`.
//!
//!     cargo run --example tokenize_file

use smc::bitstream::{bitrate_report, unpack};
use smc::error::Result;
use smc::eval::spectral_distance;
use smc::pipeline::{decode_file, encode_file, CodecConfig, CodecModels};
use smc::synthcorpus::{default_templates, generate_clip, generate_corpus, ClipSpec, Domain};

fn small_config() -> CodecConfig {
    let mut c = CodecConfig::desk();
    c.feature_dim = 16;
    c.semantic_base = 8;
    c.semantic_vocab = 16;
    c.acoustic_vocab = 32;
    c.lstm_hidden = 8;
    c.schedule_steps = 50;
    c.sampler_steps = 10;
    c.guidance = 2.0;
    c.latent.d_z = 4;
    c.latent.train_steps = 60;
    c.latent.batch = 32;
    c.denoiser_hidden = 32;
    c.denoiser_heads = 2;
    c.denoiser_t_embed = 8;
    c.denoiser_blocks = 1;
    c.griffin_lim_iters = 4;
    c
}

fn main() -> Result<()> {
    let corpus = generate_corpus(2, &default_templates(2.56), 77)?;
    println!("bootstrapping frozen stages on {} clips...", corpus.len());
    let models = CodecModels::bootstrap(small_config(), &corpus, 11)?;

    let clip = generate_clip(&ClipSpec {
        domain: Domain::SpeechLike,
        class_label: 2,
        duration_s: 1.5,
        seed: 404,
    })?;
    let packet = encode_file(&clip.waveform, &models)?;
    let (header, semantic, acoustic) = unpack(&packet)?;
    let rate = bitrate_report(&header)?;

    println!(
        "packet: {} bytes for {} samples ({} token pairs)",
        packet.len(),
        header.original_sample_count,
        header.token_pairs
    );
    println!(
        "rate: {} pairs/s, {:.3} kbps semantic + {:.3} kbps acoustic = {:.3} kbps",
        rate.pairs_per_second, rate.kbps_semantic, rate.kbps_acoustic, rate.kbps_total
    );
    println!("first semantic tokens: {:?}", &semantic[..12]);
    println!("first acoustic tokens: {:?}", &acoustic[..12]);

    let decoded = decode_file(&packet, &models, 7)?;
    println!(
        "decoded {} samples (original {})",
        decoded.len(),
        clip.waveform.len()
    );
    let (mel_d, stft_d) = spectral_distance(&clip.waveform, &decoded)?;
    println!("untrained reconstruction: mel_distance={mel_d:.4} stft_distance={stft_d:.4}");
    Ok(())
}
