//! Trains the learnable half of the codec (acoustic encoder, VQ, diffusion
//! decoder) for a few hundred steps on the synthetic corpus and reports the
//! validation curve plus before/after reconstruction distances on a held-out
//! clip under identical sampler seeds.
//!
//!     cargo run --example train_desk [steps]
//!
//! The default 200 steps show the loss moving; the desk-scale recipe used by
//! the test suite runs 2000 steps at batch 8 on the same geometry family.

use smc::error::Result;
use smc::eval::spectral_distance;
use smc::pipeline::{
    decode_file, encode_file, train_codec, CodecConfig, CodecModels, TrainOptions,
};
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
    let steps: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("steps must be an integer"))
        .unwrap_or(200);

    let corpus = generate_corpus(3, &default_templates(2.56), 21)?;
    println!("bootstrapping on {} clips...", corpus.len());
    let mut models = CodecModels::bootstrap(small_config(), &corpus, 5)?;

    let held_out = generate_clip(&ClipSpec {
        domain: Domain::General,
        class_label: 0,
        duration_s: 2.56,
        seed: 9090,
    })?;
    let packet = encode_file(&held_out.waveform, &models)?;
    let before = decode_file(&packet, &models, 33)?;
    let (mel_before, _) = spectral_distance(&held_out.waveform, &before)?;

    let opts = TrainOptions {
        steps,
        batch: 4,
        log_every: 25,
        val_every: 50,
        seed: 1,
        ..TrainOptions::default()
    };
    let report = train_codec(&mut models, &corpus, &opts)?;
    for e in &report.entries {
        println!(
            "step {:>5}: total={:.5} recon={:.5} commit={:.5} ensemble={} vq_usage={:.2}",
            e.step, e.total, e.recon, e.commit, e.ensemble, e.vq_usage
        );
    }
    for (step, v) in &report.val_history {
        println!("val @ {step:>5}: recon={v:.5}");
    }
    println!(
        "validation loss: {:.5} -> {:.5}",
        report.initial_val, report.final_val
    );

    // Same packet, same sampler seed, updated weights.
    let after = decode_file(&packet, &models, 33)?;
    let (mel_after, _) = spectral_distance(&held_out.waveform, &after)?;
    println!("held-out mel_distance: untrained={mel_before:.4} trained={mel_after:.4}");
    Ok(())
}
