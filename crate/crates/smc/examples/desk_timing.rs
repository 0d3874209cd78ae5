//! Temporary: calibration for the desk training acceptance thresholds.

use std::time::Instant;

use smc::error::Result;
use smc::eval::spectral_distance;
use smc::pipeline::{
    decode_file_with, encode_file, train_codec, CodecConfig, CodecModels, ConditionSource,
    TrainOptions,
};
use smc::synthcorpus::{default_templates, generate_corpus, LabeledClip};

fn mean_mel(
    models: &CodecModels,
    clips: &[LabeledClip],
    guidance: f64,
    source: ConditionSource,
    verbose: bool,
) -> Result<f64> {
    let mut m = models.clone();
    m.config.guidance = guidance;
    let mut total = 0.0;
    for (i, clip) in clips.iter().enumerate() {
        let p = encode_file(&clip.waveform, &m)?;
        let w = decode_file_with(&p, &m, 1000 + i as u64, source)?;
        let d = spectral_distance(&clip.waveform, &w)?.0;
        if verbose {
            println!("  clip {i:>2} {}: mel={d:.4}", clip.domain);
        }
        total += d;
    }
    Ok(total / clips.len() as f64)
}

fn report_ablation(models: &CodecModels, held: &[LabeledClip], tag: &str) -> Result<()> {
    for g in [3.0, 1.0] {
        let both = mean_mel(models, held, g, ConditionSource::Both, false)?;
        let sem = mean_mel(models, held, g, ConditionSource::SemanticOnly, false)?;
        println!(
            "{tag} guidance={g}: both={both:.4} semantic_only={sem:.4} degradation={:.1}%",
            100.0 * (sem - both) / both
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let wall = Instant::now();
    let config = CodecConfig::desk();
    let corpus = generate_corpus(4, &default_templates(2.56), 21)?;
    let held_out = generate_corpus(1, &default_templates(2.56), 22)?;

    let untrained = CodecModels::bootstrap(config, &corpus, 5)?;
    let mut models = untrained.clone();

    let opts = TrainOptions {
        log_every: 1000,
        val_every: 500,
        seed: 1,
        ..TrainOptions::default()
    };
    let report = train_codec(&mut models, &corpus, &opts)?;
    println!(
        "@2000: initial_val={:.5} final_val={:.5} drop={:.1}% ({:.0}s)",
        report.initial_val,
        report.final_val,
        100.0 * (1.0 - report.final_val / report.initial_val),
        wall.elapsed().as_secs_f64()
    );
    let both3 = mean_mel(&models, &held_out, 3.0, ConditionSource::Both, true)?;
    println!("@2000 trained both g3 mean={both3:.4}");
    report_ablation(&models, &held_out, "@2000")?;

    let extend = TrainOptions {
        steps: 1000,
        log_every: 1000,
        val_every: 500,
        seed: 1,
        ..TrainOptions::default()
    };
    let r2 = train_codec(&mut models, &corpus, &extend)?;
    println!("@3000: final_val={:.5}", r2.final_val);
    report_ablation(&models, &held_out, "@3000")?;

    println!("total wall: {:.0?}", wall.elapsed());
    Ok(())
}
