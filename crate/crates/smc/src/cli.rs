//! Operator surface: one subcommand per pipeline stage, reproducible runs.
//!
//! Every run prints a `# smc cmd=...` header carrying the seed, the resolved
//! config hash, and the input checkpoint hash, so a log line is enough to
//! reproduce the run. Configuration comes from a geometry profile, then an
//! optional key=value file, then repeatable `--set key=value` flags, in that
//! order of precedence (later wins). The only environment variable honored
//! is `SMC_THREADS`; `SMC_THREADS=1` forces fully serial execution.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio_io::{read_wav, write_wav};
use crate::bitstream::{bitrate_report, unpack};
use crate::diffusion::GuidanceForm;
use crate::error::{Error, Result};
use crate::eval::{
    eval_reconstruction, probe_eval, write_csv_report, write_text_report, ProbeLayer, ProbeOptions,
};
use crate::pipeline::{
    decode_file_with, encode_file, load_checkpoint, save_checkpoint, train_codec, CodecConfig,
    CodecModels, ConditionSource, TrainOptions,
};
use crate::synthcorpus::{default_templates, generate_corpus, load_corpus, write_corpus};

#[derive(Parser, Debug)]
#[command(
    name = "smc",
    version,
    about = "Dual-layer neural audio codec: tokenize, reconstruct, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the labeled synthetic corpus and write wav files + manifest.
    SynthData(SynthDataArgs),
    /// Fit the frozen stages (extractor features, k-means codebook family,
    /// mel latent coder) and write an untrained checkpoint.
    TrainKmeans(TrainKmeansArgs),
    /// Train the acoustic encoder, VQ, and diffusion decoder from a checkpoint.
    TrainCodec(TrainCodecArgs),
    /// Encode a wav file into a token packet.
    Encode(EncodeArgs),
    /// Decode a token packet back into a wav file.
    Decode(DecodeArgs),
    /// Reconstruction metrics over a corpus, optionally with a probe run.
    Eval(EvalArgs),
    /// Print packet header fields and bitrate figures.
    Info(InfoArgs),
}

/// Config resolution shared by commands that build a codec from scratch.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Geometry profile to start from: "full" (10.24 s windows) or "desk" (2.56 s).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Plain-text key=value file applied on top of the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline key=value override; repeatable, wins over --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug)]
struct SynthDataArgs {
    /// Directory to write wav files and the manifest into.
    #[arg(long)]
    out_dir: PathBuf,
    /// Clips per (domain, class) pair; 12 classes total.
    #[arg(long, default_value_t = 4)]
    per_class: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 2.56)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainKmeansArgs {
    /// Corpus manifest produced by synth-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainCodecArgs {
    /// Corpus manifest produced by synth-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to start from (from train-kmeans or a previous run).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Checkpoint file to write after training.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    warmup: u64,
    /// Commitment loss weight on the acoustic VQ.
    #[arg(long, default_value_t = 0.25)]
    commitment: f64,
    /// Probability of dropping the condition per item (classifier-free training).
    #[arg(long, default_value_t = 0.1)]
    cfg_drop: f64,
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    #[arg(long, default_value_t = 100)]
    val_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// Input wav file (16 kHz mono).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output packet file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Semantic codebook size to encode with (any size in the trained family).
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Input packet file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output wav file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// DDIM step count override.
    #[arg(long)]
    steps: Option<usize>,
    /// Guidance weight override.
    #[arg(long)]
    cfg: Option<f64>,
    /// Zero the acoustic half of the condition (layer ablation).
    #[arg(long, default_value_t = false)]
    semantic_only: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Corpus manifest to evaluate on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the report as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run a classifier probe on this embedding layer:
    /// semantic_only | acoustic_only | both.
    #[arg(long)]
    probe: Option<String>,
    #[arg(long, default_value_t = 300)]
    probe_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InfoArgs {
    /// Packet file to inspect.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parse `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_lines(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{source} line {}: expected key=value, got `{line}`", i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn p_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("config key `{key}`: `{v}` is not an integer")))
}

fn p_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("config key `{key}`: `{v}` is not a number")))
}

/// Apply one config key. Unknown keys are rejected so typos cannot silently
/// fall back to defaults.
pub fn apply_config_key(c: &mut CodecConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "n_fft" => c.spectral.n_fft = p_usize(key, v)?,
        "hop" => c.spectral.hop = p_usize(key, v)?,
        "patch" => c.spectral.patch = p_usize(key, v)?,
        "n_mels" => {
            c.spectral.n_mels = p_usize(key, v)?;
            c.latent.n_mels = c.spectral.n_mels;
        }
        "sample_rate" => c.sample_rate = p_usize(key, v)? as u32,
        "feature_dim" => c.feature_dim = p_usize(key, v)?,
        "stack_factor" => c.stack_factor = p_usize(key, v)?,
        "semantic_base" => c.semantic_base = p_usize(key, v)?,
        "semantic_vocab" => c.semantic_vocab = p_usize(key, v)?,
        "acoustic_vocab" => c.acoustic_vocab = p_usize(key, v)?,
        "lstm_hidden" => c.lstm_hidden = p_usize(key, v)?,
        "schedule_steps" => c.schedule_steps = p_usize(key, v)?,
        "sampler_steps" => c.sampler_steps = p_usize(key, v)?,
        "guidance" => c.guidance = p_f64(key, v)?,
        "guidance_form" => {
            c.guidance_form = match v {
                "standard" => GuidanceForm::Standard,
                "swapped_weights" => GuidanceForm::SwappedWeights,
                other => {
                    return Err(Error::Config(format!(
                        "config key `guidance_form`: `{other}` is not standard or swapped_weights"
                    )))
                }
            }
        }
        "window_s" => c.window_s = p_f64(key, v)?,
        "overlap_fraction" => c.overlap_fraction = p_f64(key, v)?,
        "denoiser_hidden" => c.denoiser_hidden = p_usize(key, v)?,
        "denoiser_heads" => c.denoiser_heads = p_usize(key, v)?,
        "denoiser_t_embed" => c.denoiser_t_embed = p_usize(key, v)?,
        "denoiser_blocks" => c.denoiser_blocks = p_usize(key, v)?,
        "griffin_lim_iters" => c.griffin_lim_iters = p_usize(key, v)?,
        "latent_block_t" => c.latent.block_t = p_usize(key, v)?,
        "latent_block_f" => c.latent.block_f = p_usize(key, v)?,
        "latent_dz" => c.latent.d_z = p_usize(key, v)?,
        "latent_train_steps" => c.latent.train_steps = p_usize(key, v)?,
        "latent_batch" => c.latent.batch = p_usize(key, v)?,
        other => return Err(Error::Config(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// Resolve profile, file, and flag overrides into a validated config.
pub fn build_config(profile: &str, file: Option<&Path>, sets: &[String]) -> Result<CodecConfig> {
    let mut config = match profile {
        "full" => CodecConfig::default(),
        "desk" => CodecConfig::desk(),
        other => {
            return Err(Error::Usage(format!(
                "unknown profile `{other}` (expected full or desk)"
            )))
        }
    };
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_kv_lines(&text, &path.display().to_string())? {
            apply_config_key(&mut config, &k, &v)?;
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{s}`")))?;
        apply_config_key(&mut config, k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn file_crc(path: &Path) -> Result<u32> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crc32fast::hash(&bytes))
}

/// Honor SMC_THREADS if set; returns the worker count actually in effect.
fn init_threads() -> Result<usize> {
    match std::env::var("SMC_THREADS") {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                Error::Usage(format!("SMC_THREADS=`{v}` is not a positive integer"))
            })?;
            if n == 0 {
                return Err(Error::Usage("SMC_THREADS must be at least 1".into()));
            }
            // A later call cannot re-shape an existing global pool; that only
            // happens in-process in tests, where the first setting wins.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(n)
        }
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

fn print_run_header(
    cmd: &str,
    seed: u64,
    threads: usize,
    config: Option<&CodecConfig>,
    checkpoint: Option<u32>,
) {
    let ch = match config {
        Some(c) => format!("0x{:08x}", c.content_hash()),
        None => "none".into(),
    };
    let kh = match checkpoint {
        Some(h) => format!("0x{h:08x}"),
        None => "none".into(),
    };
    println!("# smc cmd={cmd} seed={seed} threads={threads} config_hash={ch} checkpoint_hash={kh}");
}

fn load_models(path: &Path) -> Result<(CodecModels, u32)> {
    let hash = file_crc(path)?;
    let models = load_checkpoint(path)?;
    Ok((models, hash))
}

fn write_packet(path: &Path, packet: &[u8]) -> Result<()> {
    fs::write(path, packet).map_err(|e| Error::io(path, e))
}

fn run_synth_data(a: &SynthDataArgs, threads: usize) -> Result<()> {
    print_run_header("synth-data", a.seed, threads, None, None);
    let templates = default_templates(a.duration);
    let clips = generate_corpus(a.per_class, &templates, a.seed)?;
    let manifest = write_corpus(&a.out_dir, &clips)?;
    println!("clips={} manifest={}", clips.len(), manifest.display());
    Ok(())
}

fn run_train_kmeans(a: &TrainKmeansArgs, threads: usize) -> Result<()> {
    let config = build_config(&a.cfg.profile, a.cfg.config.as_deref(), &a.cfg.sets)?;
    print_run_header("train-kmeans", a.seed, threads, Some(&config), None);
    let clips = load_corpus(&a.data)?;
    println!("clips={}", clips.len());
    let models = CodecModels::bootstrap(config, &clips, a.seed)?;
    save_checkpoint(&a.out, &models)?;
    let (ex, fam, lat) = models.frozen_checksums();
    println!("family_sizes={:?}", models.family.sizes());
    println!("frozen_checksums=0x{ex:08x},0x{fam:08x},0x{lat:08x}");
    println!(
        "# wrote checkpoint path={} hash=0x{:08x}",
        a.out.display(),
        file_crc(&a.out)?
    );
    Ok(())
}

fn run_train_codec(a: &TrainCodecArgs, threads: usize) -> Result<()> {
    let (mut models, in_hash) = load_models(&a.checkpoint)?;
    print_run_header("train-codec", a.seed, threads, Some(&models.config), Some(in_hash));
    let clips = load_corpus(&a.data)?;
    println!("clips={}", clips.len());
    let opts = TrainOptions {
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        warmup_steps: a.warmup,
        commitment_weight: a.commitment,
        cfg_drop: a.cfg_drop,
        log_every: a.log_every,
        val_every: a.val_every,
        seed: a.seed,
    };
    let report = train_codec(&mut models, &clips, &opts)?;
    for e in &report.entries {
        println!(
            "step={} total={:.6} recon={:.6} commit={:.6} ensemble={} vq_usage={:.3}",
            e.step, e.total, e.recon, e.commit, e.ensemble, e.vq_usage
        );
    }
    for (step, v) in &report.val_history {
        println!("val step={step} recon={v:.6}");
    }
    println!(
        "initial_val={:.6} final_val={:.6}",
        report.initial_val, report.final_val
    );
    save_checkpoint(&a.out, &models)?;
    println!(
        "# wrote checkpoint path={} hash=0x{:08x}",
        a.out.display(),
        file_crc(&a.out)?
    );
    Ok(())
}

fn run_encode(a: &EncodeArgs, threads: usize) -> Result<()> {
    let (mut models, in_hash) = load_models(&a.checkpoint)?;
    if let Some(v) = a.vocab {
        models.config.semantic_vocab = v;
    }
    print_run_header("encode", a.seed, threads, Some(&models.config), Some(in_hash));
    let wave = read_wav(&a.input)?;
    let packet = encode_file(&wave, &models)?;
    write_packet(&a.out, &packet)?;
    let (header, _, _) = unpack(&packet)?;
    let rate = bitrate_report(&header)?;
    println!(
        "pairs={} bytes={} kbps_total={:.3}",
        header.token_pairs,
        packet.len(),
        rate.kbps_total
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_decode(a: &DecodeArgs, threads: usize) -> Result<()> {
    let (mut models, in_hash) = load_models(&a.checkpoint)?;
    if let Some(s) = a.steps {
        models.config.sampler_steps = s;
    }
    if let Some(w) = a.cfg {
        models.config.guidance = w;
    }
    print_run_header("decode", a.seed, threads, Some(&models.config), Some(in_hash));
    let packet = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let source = if a.semantic_only {
        ConditionSource::SemanticOnly
    } else {
        ConditionSource::Both
    };
    let wave = decode_file_with(&packet, &models, a.seed, source)?;
    write_wav(&a.out, &wave)?;
    println!("samples={}", wave.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let (models, in_hash) = load_models(&a.checkpoint)?;
    print_run_header("eval", a.seed, threads, Some(&models.config), Some(in_hash));
    let clips = load_corpus(&a.data)?;
    let report = eval_reconstruction(&clips, &models, a.seed)?;
    let mut stdout = std::io::stdout().lock();
    write_text_report(&mut stdout, &report).map_err(|e| Error::io("stdout", e))?;
    stdout.flush().map_err(|e| Error::io("stdout", e))?;
    if let Some(csv_path) = &a.csv {
        let mut f = fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        write_csv_report(&mut f, &report).map_err(|e| Error::io(csv_path, e))?;
        println!("# wrote csv path={}", csv_path.display());
    }
    if let Some(layer_name) = &a.probe {
        let layer = match layer_name.as_str() {
            "semantic_only" => ProbeLayer::SemanticOnly,
            "acoustic_only" => ProbeLayer::AcousticOnly,
            "both" => ProbeLayer::Both,
            other => {
                return Err(Error::Usage(format!(
                    "unknown probe layer `{other}` (expected semantic_only, acoustic_only, both)"
                )))
            }
        };
        let opts = ProbeOptions {
            steps: a.probe_steps,
            seed: a.seed,
            ..ProbeOptions::default()
        };
        let r = probe_eval(&clips, &models, layer, &opts)?;
        println!(
            "probe_layer={} accuracy={:.4} classes={} train={} test={}",
            r.layer.label(),
            r.accuracy,
            r.classes,
            r.train_count,
            r.test_count
        );
    }
    Ok(())
}

fn run_info(a: &InfoArgs, threads: usize) -> Result<()> {
    print_run_header("info", a.seed, threads, None, None);
    let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let (header, _, _) = unpack(&bytes)?;
    let rate = bitrate_report(&header)?;
    println!("version={}", header.version);
    println!("sample_rate={}", header.sample_rate);
    println!("stack_factor={}", header.stack_factor);
    println!("semantic_vocab={}", header.semantic_vocab);
    println!("acoustic_vocab={}", header.acoustic_vocab);
    println!("token_pairs={}", header.token_pairs);
    println!("original_sample_count={}", header.original_sample_count);
    println!(
        "duration_s={:.3}",
        header.original_sample_count as f64 / header.sample_rate as f64
    );
    println!("window_config={}", header.window_config);
    println!("pairs_per_second={}", rate.pairs_per_second);
    println!("tokens_per_second={}", rate.tokens_per_second);
    println!("kbps_semantic={:.3}", rate.kbps_semantic);
    println!("kbps_acoustic={:.3}", rate.kbps_acoustic);
    println!("kbps_total={:.3}", rate.kbps_total);
    Ok(())
}

fn dispatch(cli: &Cli, threads: usize) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => run_synth_data(a, threads),
        Command::TrainKmeans(a) => run_train_kmeans(a, threads),
        Command::TrainCodec(a) => run_train_codec(a, threads),
        Command::Encode(a) => run_encode(a, threads),
        Command::Decode(a) => run_decode(a, threads),
        Command::Eval(a) => run_eval(a, threads),
        Command::Info(a) => run_info(a, threads),
    }
}

fn command_name(cli: &Cli) -> &'static str {
    match &cli.command {
        Command::SynthData(_) => "synth-data",
        Command::TrainKmeans(_) => "train-kmeans",
        Command::TrainCodec(_) => "train-codec",
        Command::Encode(_) => "encode",
        Command::Decode(_) => "decode",
        Command::Eval(_) => "eval",
        Command::Info(_) => "info",
    }
}

/// Entry point for the binary. Returns the process exit code:
/// 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match init_threads() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("smc: {e}");
            return e.exit_code();
        }
    };
    match dispatch(&cli, threads) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("smc {}: {e}", command_name(&cli));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_resolution_orders_profile_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\n\nsemantic_vocab = 128\nguidance = 2.5\n").unwrap();

        let cfg = build_config("desk", Some(&path), &[]).unwrap();
        assert_eq!(cfg.window_s, 2.56);
        assert_eq!(cfg.semantic_vocab, 128);
        assert_eq!(cfg.guidance, 2.5);

        let cfg = build_config(
            "desk",
            Some(&path),
            &["semantic_vocab=256".into(), "guidance_form=swapped_weights".into()],
        )
        .unwrap();
        assert_eq!(cfg.semantic_vocab, 256, "flag must beat the file");
        assert_eq!(cfg.guidance, 2.5, "file survives where no flag is given");
        assert_eq!(cfg.guidance_form, GuidanceForm::SwappedWeights);
    }

    #[test]
    fn bad_config_inputs_are_rejected() {
        assert!(matches!(
            build_config("tiny", None, &[]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            build_config("desk", None, &["no_such_key=3".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_config("desk", None, &["guidance=fast".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_config("desk", None, &["oops".into()]),
            Err(Error::Usage(_))
        ));
        // A geometry that breaks the patch grid fails validation.
        assert!(build_config("desk", None, &["patch=7".into()]).is_err());

        let bad = parse_kv_lines("a=1\nnonsense\n", "test.cfg");
        let msg = format!("{}", bad.unwrap_err());
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(Error::Usage("x".into()).exit_code(), 1);
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Corruption("x".into()).exit_code(), 2);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 3);
    }
}
