//! End-to-end exercise of the `smc` binary: synthesize a corpus, fit the
//! frozen stages, train briefly, then encode, inspect, decode, and evaluate,
//! checking exit codes and the printed run headers along the way.

use std::path::Path;
use std::process::{Command, Output};

use smc::audio_io::{read_wav, write_wav};
use smc::synthcorpus::{generate_clip, ClipSpec, Domain};

fn smc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smc"))
}

fn run(args: &[&str]) -> Output {
    smc_bin().args(args).output().expect("spawn smc")
}

fn assert_ok(out: &Output, what: &str) -> String {
    assert!(
        out.status.success(),
        "{what} failed: status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// The shrunken geometry used across the smoke run; wire-compatible with the
/// 2.56 s window profile but small enough to train in seconds.
const TINY: &[&str] = &[
    "--set", "feature_dim=16",
    "--set", "semantic_base=8",
    "--set", "semantic_vocab=16",
    "--set", "acoustic_vocab=32",
    "--set", "lstm_hidden=8",
    "--set", "schedule_steps=50",
    "--set", "sampler_steps=10",
    "--set", "guidance=2.0",
    "--set", "latent_dz=4",
    "--set", "latent_train_steps=60",
    "--set", "latent_batch=32",
    "--set", "denoiser_hidden=32",
    "--set", "denoiser_heads=2",
    "--set", "denoiser_t_embed=8",
    "--set", "denoiser_blocks=1",
    "--set", "griffin_lim_iters=4",
];

fn p(path: &Path) -> String {
    path.to_str().expect("utf-8 path").to_string()
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = data.join("manifest.tsv");
    let ckpt0 = dir.path().join("boot.ckpt");
    let ckpt1 = dir.path().join("trained.ckpt");

    // Corpus synthesis.
    let out = run(&[
        "synth-data",
        "--out-dir", &p(&data),
        "--per-class", "2",
        "--duration", "2.56",
        "--seed", "5",
    ]);
    let text = assert_ok(&out, "synth-data");
    assert!(text.contains("# smc cmd=synth-data seed=5"), "{text}");
    assert!(text.contains("clips=24"), "{text}");
    assert!(manifest.is_file(), "manifest missing");

    // Frozen stages.
    let mut args: Vec<String> = [
        "train-kmeans",
        "--data", &p(&manifest),
        "--out", &p(&ckpt0),
        "--profile", "desk",
        "--seed", "11",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(TINY.iter().map(|s| s.to_string()));
    let out = smc_bin().args(&args).output().unwrap();
    let text = assert_ok(&out, "train-kmeans");
    assert!(text.contains("family_sizes=[8, 16, 32, 64]"), "{text}");
    assert!(text.contains("config_hash=0x"), "{text}");
    assert!(ckpt0.is_file());

    // A few optimizer steps; checkpoint must load and carry the step count.
    let out = run(&[
        "train-codec",
        "--data", &p(&manifest),
        "--checkpoint", &p(&ckpt0),
        "--out", &p(&ckpt1),
        "--steps", "3",
        "--batch", "2",
        "--log-every", "1",
        "--val-every", "2",
        "--seed", "1",
    ]);
    let text = assert_ok(&out, "train-codec");
    assert!(text.contains("step=1 "), "{text}");
    assert!(text.contains("step=3 "), "{text}");
    assert!(text.contains("final_val="), "{text}");
    assert!(text.contains("# wrote checkpoint"), "{text}");

    // One-second clip through encode, info, decode, eval.
    let clip = generate_clip(&ClipSpec {
        domain: Domain::MusicLike,
        class_label: 1,
        duration_s: 1.0,
        seed: 31,
    })
    .unwrap();
    let wav = dir.path().join("clip.wav");
    write_wav(&wav, &clip.waveform).unwrap();
    let packet = dir.path().join("clip.smc");

    let out = run(&[
        "encode",
        "--in", &p(&wav),
        "--out", &p(&packet),
        "--checkpoint", &p(&ckpt1),
        "--vocab", "16",
        "--seed", "0",
    ]);
    let text = assert_ok(&out, "encode");
    assert!(text.contains("pairs=50 "), "{text}");
    assert!(text.contains("# smc cmd=encode seed=0"), "{text}");

    // 4-bit semantic + 5-bit acoustic tokens at 50 pairs/s = 0.450 kbps.
    let out = run(&["info", "--in", &p(&packet)]);
    let text = assert_ok(&out, "info");
    assert!(text.contains("kbps_total=0.450"), "{text}");
    assert!(text.contains("token_pairs=50"), "{text}");
    assert!(text.contains("original_sample_count=16000"), "{text}");
    assert!(text.contains("tokens_per_second=100"), "{text}");

    let recon = dir.path().join("out.wav");
    let out = run(&[
        "decode",
        "--in", &p(&packet),
        "--out", &p(&recon),
        "--checkpoint", &p(&ckpt1),
        "--steps", "4",
        "--cfg", "1.5",
        "--seed", "7",
    ]);
    assert_ok(&out, "decode");
    let decoded = read_wav(&recon).unwrap();
    assert_eq!(decoded.len(), 16000, "decode must restore the exact length");

    // Same seed, same bytes; the ablation flag still restores the length.
    let again = dir.path().join("out2.wav");
    let out = run(&[
        "decode",
        "--in", &p(&packet),
        "--out", &p(&again),
        "--checkpoint", &p(&ckpt1),
        "--steps", "4",
        "--cfg", "1.5",
        "--seed", "7",
    ]);
    assert_ok(&out, "decode repeat");
    assert_eq!(
        std::fs::read(&recon).unwrap(),
        std::fs::read(&again).unwrap(),
        "same seed must give identical output files"
    );
    let ablated = dir.path().join("out3.wav");
    let out = run(&[
        "decode",
        "--in", &p(&packet),
        "--out", &p(&ablated),
        "--checkpoint", &p(&ckpt1),
        "--steps", "4",
        "--semantic-only",
        "--seed", "7",
    ]);
    assert_ok(&out, "decode --semantic-only");
    assert_eq!(read_wav(&ablated).unwrap().len(), 16000);

    // Metrics over the corpus plus a quick probe, with a CSV side file.
    let csv = dir.path().join("eval.csv");
    let out = run(&[
        "eval",
        "--data", &p(&manifest),
        "--checkpoint", &p(&ckpt1),
        "--csv", &p(&csv),
        "--probe", "semantic_only",
        "--probe-steps", "40",
        "--seed", "3",
    ]);
    let text = assert_ok(&out, "eval");
    assert!(text.contains("mel_distance="), "{text}");
    assert!(text.contains("domain=music_like "), "{text}");
    assert!(text.contains("probe_layer=semantic_only accuracy="), "{text}");
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("scope,clips,"), "{csv_text}");
}

#[test]
fn exit_codes_distinguish_usage_data_and_env_errors() {
    let dir = tempfile::tempdir().unwrap();

    // No subcommand and unknown flags are usage errors.
    let out = smc_bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["encode", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    // Help is not an error.
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth-data"));

    // Missing and malformed data files are data errors.
    let missing = dir.path().join("missing.smc");
    let out = run(&["info", "--in", &p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let garbage = dir.path().join("garbage.smc");
    std::fs::write(&garbage, b"not a packet at all").unwrap();
    let out = run(&["info", "--in", &p(&garbage)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("smc info"), "{stderr}");

    // Bad thread requests are usage errors; a valid one lands in the header.
    let out = smc_bin()
        .env("SMC_THREADS", "zippy")
        .args(["info", "--in", &p(&garbage)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = smc_bin()
        .env("SMC_THREADS", "1")
        .args(["synth-data", "--out-dir", &p(&dir.path().join("d")), "--per-class", "1", "--duration", "0.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("threads=1"));
}
