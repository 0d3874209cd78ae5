//! Compact latent representation of log-mel windows.
//!
//! The coder tiles a mel window into fixed blocks (16 frames × 8 mel bins),
//! sends each block through a linear bottleneck, and lays the per-block
//! codes out as one latent row per block-row of time. It is pretrained by
//! reconstruction MSE, standardized, and then frozen; the diffusion model
//! only ever sees its output.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::Record;
use crate::nn::{collect_param_grads, AdamConfig, ParamStore, Tape, Tensor};
use crate::spectral::{MelSpectrogram, SpectralConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentCoderConfig {
    pub block_t: usize,
    pub block_f: usize,
    pub d_z: usize,
    pub n_mels: usize,
    pub train_steps: usize,
    pub batch: usize,
}

impl Default for LatentCoderConfig {
    fn default() -> Self {
        LatentCoderConfig {
            block_t: 16,
            block_f: 8,
            d_z: 8,
            n_mels: 128,
            train_steps: 800,
            batch: 64,
        }
    }
}

impl LatentCoderConfig {
    pub fn block_len(&self) -> usize {
        self.block_t * self.block_f
    }

    pub fn grid_f(&self) -> usize {
        self.n_mels / self.block_f
    }

    /// Latent row width: one row carries every frequency block of a time slab.
    pub fn latent_dim(&self) -> usize {
        self.grid_f() * self.d_z
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_t == 0 || self.block_f == 0 || self.d_z == 0 {
            return Err(Error::Config("latent coder dims must be positive".into()));
        }
        if self.n_mels % self.block_f != 0 {
            return Err(Error::Config(format!(
                "mel count {} not divisible by block height {}",
                self.n_mels, self.block_f
            )));
        }
        if self.d_z > self.block_len() {
            return Err(Error::Config(
                "latent dim per block exceeds block size".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LatentCoder {
    pub cfg: LatentCoderConfig,
    /// block_len × d_z
    pub enc_w: Vec<f64>,
    pub enc_b: Vec<f64>,
    /// d_z × block_len
    pub dec_w: Vec<f64>,
    pub dec_b: Vec<f64>,
    /// Standardization over training latents; applied after encoding.
    pub z_mean: f64,
    pub z_std: f64,
    /// Per-element reconstruction MSE on the training blocks at freeze time.
    pub frozen_mse: f64,
}

/// Cut a mel window into row-major blocks; block (bt, bf) covers frames
/// bt·block_t.. and bins bf·block_f.., flattened frame-major.
fn extract_blocks(mel: &MelSpectrogram, cfg: &LatentCoderConfig) -> Result<Vec<f64>> {
    if mel.n_mels != cfg.n_mels {
        return Err(Error::Shape(format!(
            "mel has {} bins, latent coder expects {}",
            mel.n_mels, cfg.n_mels
        )));
    }
    if mel.frames % cfg.block_t != 0 {
        return Err(Error::Shape(format!(
            "mel frame count {} not divisible by block length {}",
            mel.frames, cfg.block_t
        )));
    }
    let grid_t = mel.frames / cfg.block_t;
    let grid_f = cfg.grid_f();
    let mut out = Vec::with_capacity(mel.frames * mel.n_mels);
    for bt in 0..grid_t {
        for bf in 0..grid_f {
            for dt in 0..cfg.block_t {
                let frame = bt * cfg.block_t + dt;
                let base = frame * mel.n_mels + bf * cfg.block_f;
                out.extend_from_slice(&mel.values[base..base + cfg.block_f]);
            }
        }
    }
    Ok(out)
}

impl LatentCoder {
    /// Pretrain on every block of the given mel windows, then freeze.
    pub fn fit(mels: &[MelSpectrogram], cfg: LatentCoderConfig, seed: u64) -> Result<LatentCoder> {
        cfg.validate()?;
        if mels.is_empty() {
            return Err(Error::Config("latent coder needs training windows".into()));
        }
        let block_len = cfg.block_len();
        let mut blocks = Vec::new();
        for m in mels {
            blocks.extend(extract_blocks(m, &cfg)?);
        }
        let n_blocks = blocks.len() / block_len;
        if n_blocks < cfg.batch {
            return Err(Error::Config(format!(
                "latent coder: {n_blocks} training blocks is fewer than batch {}",
                cfg.batch
            )));
        }

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert(
            "enc.w",
            Tensor::randn(&[block_len, cfg.d_z], 1.0 / (block_len as f64).sqrt(), &mut rng),
        )?;
        store.insert("enc.b", Tensor::zeros(&[1, cfg.d_z]))?;
        store.insert(
            "dec.w",
            Tensor::randn(&[cfg.d_z, block_len], 1.0 / (cfg.d_z as f64).sqrt(), &mut rng),
        )?;
        store.insert("dec.b", Tensor::zeros(&[1, block_len]))?;
        let adam = AdamConfig {
            lr: 1e-3,
            warmup_steps: 50,
            ..AdamConfig::default()
        };

        let mut recent = Vec::new();
        for _ in 0..cfg.train_steps {
            let mut batch = Vec::with_capacity(cfg.batch * block_len);
            for _ in 0..cfg.batch {
                let b = rng.random_range(0..n_blocks);
                batch.extend_from_slice(&blocks[b * block_len..(b + 1) * block_len]);
            }
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![cfg.batch, block_len], batch)?);
            let ew = store.bind(&mut tape, "enc.w")?;
            let eb = store.bind(&mut tape, "enc.b")?;
            let dw = store.bind(&mut tape, "dec.w")?;
            let db = store.bind(&mut tape, "dec.b")?;
            let z = tape.matmul(x, ew)?;
            let z = tape.add(z, eb)?;
            let y = tape.matmul(z, dw)?;
            let y = tape.add(y, db)?;
            let loss = tape.mse(y, x)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Numeric("latent coder loss became non-finite".into()));
            }
            tape.backward(loss)?;
            let grads = collect_param_grads(&tape)?;
            store.adam_step(&grads, &adam)?;
            recent.push(loss_val);
            if recent.len() > 50 {
                recent.remove(0);
            }
        }

        let mut coder = LatentCoder {
            cfg,
            enc_w: store.get("enc.w")?.data.clone(),
            enc_b: store.get("enc.b")?.data.clone(),
            dec_w: store.get("dec.w")?.data.clone(),
            dec_b: store.get("dec.b")?.data.clone(),
            z_mean: 0.0,
            z_std: 1.0,
            frozen_mse: recent.iter().sum::<f64>() / recent.len() as f64,
        };

        // Standardize latents over the training blocks.
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let mut count = 0usize;
        for b in 0..n_blocks {
            let code = coder.encode_block(&blocks[b * block_len..(b + 1) * block_len]);
            for v in code {
                acc += v;
                acc2 += v * v;
                count += 1;
            }
        }
        let mean = acc / count as f64;
        let var = (acc2 / count as f64 - mean * mean).max(0.0);
        coder.z_mean = mean;
        coder.z_std = var.sqrt().max(1e-6);
        Ok(coder)
    }

    fn encode_block(&self, block: &[f64]) -> Vec<f64> {
        let (bl, dz) = (self.cfg.block_len(), self.cfg.d_z);
        let mut code = self.enc_b.clone();
        for (i, &x) in block.iter().enumerate() {
            if x != 0.0 {
                for j in 0..dz {
                    code[j] += x * self.enc_w[i * dz + j];
                }
            }
        }
        debug_assert_eq!(block.len(), bl);
        code
    }

    fn decode_block(&self, code: &[f64]) -> Vec<f64> {
        let bl = self.cfg.block_len();
        let mut block = self.dec_b.clone();
        for (j, &z) in code.iter().enumerate() {
            for i in 0..bl {
                block[i] += z * self.dec_w[j * bl + i];
            }
        }
        block
    }

    pub fn latent_rows(&self, frames: usize) -> usize {
        frames / self.cfg.block_t
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim()
    }

    /// Mel window → standardized latent, grid_t rows × latent_dim.
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let blocks = extract_blocks(mel, &self.cfg)?;
        let block_len = self.cfg.block_len();
        let n_blocks = blocks.len() / block_len;
        let mut z = Vec::with_capacity(n_blocks * self.cfg.d_z);
        for b in 0..n_blocks {
            for v in self.encode_block(&blocks[b * block_len..(b + 1) * block_len]) {
                z.push((v - self.z_mean) / self.z_std);
            }
        }
        Ok(z)
    }

    /// Standardized latent → mel window with the given frame count.
    pub fn decode(&self, z: &[f64], frames: usize) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        if frames % cfg.block_t != 0 {
            return Err(Error::Shape(format!(
                "decode frame count {frames} not divisible by block length {}",
                cfg.block_t
            )));
        }
        let grid_t = frames / cfg.block_t;
        let grid_f = cfg.grid_f();
        if z.len() != grid_t * grid_f * cfg.d_z {
            return Err(Error::Shape(format!(
                "latent has {} values, expected {} for {frames} frames",
                z.len(),
                grid_t * grid_f * cfg.d_z
            )));
        }
        let mut values = vec![0.0; frames * cfg.n_mels];
        let mut idx = 0;
        for bt in 0..grid_t {
            for bf in 0..grid_f {
                let code: Vec<f64> = z[idx..idx + cfg.d_z]
                    .iter()
                    .map(|v| v * self.z_std + self.z_mean)
                    .collect();
                idx += cfg.d_z;
                let block = self.decode_block(&code);
                for dt in 0..cfg.block_t {
                    let frame = bt * cfg.block_t + dt;
                    let base = frame * cfg.n_mels + bf * cfg.block_f;
                    values[base..base + cfg.block_f]
                        .copy_from_slice(&block[dt * cfg.block_f..(dt + 1) * cfg.block_f]);
                }
            }
        }
        Ok(MelSpectrogram {
            values,
            frames,
            n_mels: cfg.n_mels,
            cfg: SpectralConfig {
                n_mels: cfg.n_mels,
                ..SpectralConfig::default()
            },
        })
    }

    /// Per-element reconstruction MSE over whole windows.
    pub fn reconstruction_mse(&self, mels: &[MelSpectrogram]) -> Result<f64> {
        let mut acc = 0.0;
        let mut count = 0usize;
        for m in mels {
            let z = self.encode(m)?;
            let back = self.decode(&z, m.frames)?;
            for (a, b) in m.values.iter().zip(&back.values) {
                acc += (a - b) * (a - b);
                count += 1;
            }
        }
        Ok(acc / count as f64)
    }

    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for group in [&self.enc_w, &self.enc_b, &self.dec_w, &self.dec_b] {
            for v in group {
                h.update(&v.to_le_bytes());
            }
        }
        for v in [self.z_mean, self.z_std, self.frozen_mse] {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    pub fn export_records(&self, prefix: &str) -> Vec<Record> {
        let c = &self.cfg;
        vec![
            (
                format!("{prefix}.meta"),
                vec![1, 4],
                vec![
                    c.block_t as f64,
                    c.block_f as f64,
                    c.d_z as f64,
                    c.n_mels as f64,
                ],
            ),
            (
                format!("{prefix}.enc_w"),
                vec![c.block_len(), c.d_z],
                self.enc_w.clone(),
            ),
            (format!("{prefix}.enc_b"), vec![1, c.d_z], self.enc_b.clone()),
            (
                format!("{prefix}.dec_w"),
                vec![c.d_z, c.block_len()],
                self.dec_w.clone(),
            ),
            (
                format!("{prefix}.dec_b"),
                vec![1, c.block_len()],
                self.dec_b.clone(),
            ),
            (
                format!("{prefix}.stats"),
                vec![1, 3],
                vec![self.z_mean, self.z_std, self.frozen_mse],
            ),
        ]
    }

    pub fn from_records(prefix: &str, records: &[Record]) -> Result<LatentCoder> {
        let by_name: HashMap<&str, &Record> =
            records.iter().map(|r| (r.0.as_str(), r)).collect();
        let find = |suffix: &str| -> Result<&Record> {
            by_name
                .get(format!("{prefix}.{suffix}").as_str())
                .copied()
                .ok_or_else(|| {
                    Error::Format(format!("checkpoint missing record {prefix}.{suffix}"))
                })
        };
        let meta = &find("meta")?.2;
        let cfg = LatentCoderConfig {
            block_t: meta[0] as usize,
            block_f: meta[1] as usize,
            d_z: meta[2] as usize,
            n_mels: meta[3] as usize,
            ..LatentCoderConfig::default()
        };
        cfg.validate()?;
        let stats = &find("stats")?.2;
        let coder = LatentCoder {
            cfg,
            enc_w: find("enc_w")?.2.clone(),
            enc_b: find("enc_b")?.2.clone(),
            dec_w: find("dec_w")?.2.clone(),
            dec_b: find("dec_b")?.2.clone(),
            z_mean: stats[0],
            z_std: stats[1],
            frozen_mse: stats[2],
        };
        if coder.enc_w.len() != cfg.block_len() * cfg.d_z
            || coder.dec_w.len() != cfg.block_len() * cfg.d_z
        {
            return Err(Error::Shape("latent coder records have wrong sizes".into()));
        }
        Ok(coder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_mel(frames: usize, n_mels: usize, phase: f64) -> MelSpectrogram {
        // Smooth low-rank structure a linear bottleneck can capture well.
        let mut values = vec![0.0; frames * n_mels];
        for t in 0..frames {
            for m in 0..n_mels {
                values[t * n_mels + m] = (0.02 * t as f64 + phase).sin() * (0.05 * m as f64).cos();
            }
        }
        MelSpectrogram {
            values,
            frames,
            n_mels,
            cfg: SpectralConfig {
                n_mels,
                ..SpectralConfig::default()
            },
        }
    }

    fn small_cfg() -> LatentCoderConfig {
        LatentCoderConfig {
            block_t: 4,
            block_f: 4,
            d_z: 3,
            n_mels: 16,
            train_steps: 400,
            batch: 32,
            }
    }

    #[test]
    fn latent_shape_matches_grid() {
        let cfg = LatentCoderConfig::default();
        assert_eq!(cfg.latent_dim(), 128);
        let mels: Vec<MelSpectrogram> = (0..2).map(|i| ramp_mel(64, 128, i as f64)).collect();
        let quick = LatentCoderConfig {
            train_steps: 30,
            batch: 16,
            ..cfg
        };
        let coder = LatentCoder::fit(&mels, quick, 1).unwrap();
        let z = coder.encode(&mels[0]).unwrap();
        // 64 frames / 16 per block = 4 latent rows of 16·8 = 128 values.
        assert_eq!(z.len(), 4 * 128);
        assert_eq!(coder.latent_rows(64), 4);
        let back = coder.decode(&z, 64).unwrap();
        assert_eq!(back.frames, 64);
        assert_eq!(back.n_mels, 128);
    }

    #[test]
    fn trains_to_low_error_and_generalizes() {
        let mels: Vec<MelSpectrogram> = (0..4).map(|i| ramp_mel(32, 16, i as f64 * 0.7)).collect();
        let coder = LatentCoder::fit(&mels, small_cfg(), 2).unwrap();
        assert!(coder.frozen_mse.is_finite() && coder.frozen_mse >= 0.0);
        let held_out = [ramp_mel(32, 16, 9.1)];
        let mse = coder.reconstruction_mse(&held_out).unwrap();
        assert!(
            mse <= (2.0 * coder.frozen_mse).max(1e-6),
            "held-out MSE {mse} exceeds 2× frozen {}",
            coder.frozen_mse
        );
    }

    #[test]
    fn standardization_is_applied_and_invertible() {
        let mels: Vec<MelSpectrogram> = (0..3).map(|i| ramp_mel(32, 16, i as f64)).collect();
        let coder = LatentCoder::fit(&mels, small_cfg(), 3).unwrap();
        assert!(coder.z_std > 0.0);
        // Training latents should be near zero mean, unit variance.
        let mut all = Vec::new();
        for m in &mels {
            all.extend(coder.encode(m).unwrap());
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-6, "standardized mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "standardized variance {var}");
    }

    #[test]
    fn frozen_coder_is_deterministic() {
        let mels: Vec<MelSpectrogram> = (0..2).map(|i| ramp_mel(32, 16, i as f64)).collect();
        let cfg = LatentCoderConfig {
            train_steps: 60,
            ..small_cfg()
        };
        let a = LatentCoder::fit(&mels, cfg, 7).unwrap();
        let b = LatentCoder::fit(&mels, cfg, 7).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let za = a.encode(&mels[0]).unwrap();
        let zb = b.encode(&mels[0]).unwrap();
        assert_eq!(za, zb);
    }

    #[test]
    fn records_round_trip() {
        let mels: Vec<MelSpectrogram> = (0..2).map(|i| ramp_mel(32, 16, i as f64)).collect();
        let cfg = LatentCoderConfig {
            train_steps: 40,
            ..small_cfg()
        };
        let coder = LatentCoder::fit(&mels, cfg, 8).unwrap();
        let records = coder.export_records("latent");
        let back = LatentCoder::from_records("latent", &records).unwrap();
        assert_eq!(back.checksum(), coder.checksum());
        let z = coder.encode(&mels[1]).unwrap();
        assert_eq!(back.encode(&mels[1]).unwrap(), z);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mels = [ramp_mel(32, 16, 0.0)];
        let coder = LatentCoder::fit(
            &mels,
            LatentCoderConfig {
                train_steps: 10,
                ..small_cfg()
            },
            9,
        )
        .unwrap();
        let wrong_bins = ramp_mel(32, 8, 0.0);
        assert!(matches!(coder.encode(&wrong_bins), Err(Error::Shape(_))));
        let wrong_frames = ramp_mel(30, 16, 0.0);
        assert!(matches!(coder.encode(&wrong_frames), Err(Error::Shape(_))));
        assert!(matches!(coder.decode(&[0.0; 10], 32), Err(Error::Shape(_))));
    }
}
