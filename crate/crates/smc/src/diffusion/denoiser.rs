//! Velocity-prediction network: a residual MLP over latent rows with
//! cross-attention onto the token-derived condition sequence.
//!
//! Latent rows and condition rows both receive fixed sinusoidal positional
//! embeddings (one joint embedding over the concatenated condition), and the
//! sampled timestep enters through a small embedding MLP added to every row
//! of its batch item. The final projection starts at zero so the net begins
//! as the identity-free predictor v̂ = 0.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    Activation, CrossAttention, Dense, LayerNorm, NodeId, ParamStore, Tape, Tensor,
};

#[derive(Debug, Clone, Copy)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub t_embed_dim: usize,
    /// Number of residual MLP + cross-attention block pairs.
    pub blocks: usize,
}

impl DenoiserConfig {
    pub fn desk(latent_dim: usize, cond_dim: usize) -> DenoiserConfig {
        DenoiserConfig {
            latent_dim,
            cond_dim,
            hidden: 128,
            heads: 4,
            t_embed_dim: 32,
            blocks: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.cond_dim == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::Config("denoiser dims must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "denoiser hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.t_embed_dim % 2 != 0 {
            return Err(Error::Config("timestep embedding dim must be even".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Block {
    ln_mlp: LayerNorm,
    mlp1: Dense,
    mlp2: Dense,
    ln_attn: LayerNorm,
    attn: CrossAttention,
}

#[derive(Clone)]
pub struct DenoiserNet {
    pub cfg: DenoiserConfig,
    in_proj: Dense,
    t1: Dense,
    t2: Dense,
    blocks: Vec<Block>,
    out_ln: LayerNorm,
    out_proj: Dense,
}

/// Interleaved sin/cos features of a scalar position.
pub fn sinusoidal_embedding(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim.div_ceil(2);
    let mut out = Vec::with_capacity(half * 2);
    for k in 0..half {
        let freq = (10_000f64).powf(-(k as f64) / half as f64);
        out.push((pos * freq).sin());
        out.push((pos * freq).cos());
    }
    out.truncate(dim);
    out
}

/// Rows 0..len−1 of positional features, tiled `batch` times (item-major).
fn position_rows(batch: usize, len: usize, dim: usize) -> Vec<f64> {
    let mut one = Vec::with_capacity(len * dim);
    for p in 0..len {
        one.extend(sinusoidal_embedding(p as f64, dim));
    }
    let mut out = Vec::with_capacity(batch * len * dim);
    for _ in 0..batch {
        out.extend_from_slice(&one);
    }
    out
}

impl DenoiserNet {
    pub fn new(cfg: DenoiserConfig) -> Result<DenoiserNet> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            blocks.push(Block {
                ln_mlp: LayerNorm::new(&format!("denoiser.b{i}.ln_mlp"), cfg.hidden),
                mlp1: Dense::new(
                    &format!("denoiser.b{i}.mlp1"),
                    cfg.hidden,
                    cfg.hidden,
                    Activation::Silu,
                ),
                mlp2: Dense::new(
                    &format!("denoiser.b{i}.mlp2"),
                    cfg.hidden,
                    cfg.hidden,
                    Activation::Linear,
                ),
                ln_attn: LayerNorm::new(&format!("denoiser.b{i}.ln_attn"), cfg.hidden),
                attn: CrossAttention::new(
                    &format!("denoiser.b{i}.attn"),
                    cfg.hidden,
                    cfg.cond_dim,
                    cfg.heads,
                )?,
            });
        }
        Ok(DenoiserNet {
            cfg,
            in_proj: Dense::new("denoiser.in", cfg.latent_dim, cfg.hidden, Activation::Linear),
            t1: Dense::new("denoiser.t1", cfg.t_embed_dim, cfg.hidden, Activation::Silu),
            t2: Dense::new("denoiser.t2", cfg.hidden, cfg.hidden, Activation::Linear),
            blocks,
            out_ln: LayerNorm::new("denoiser.out_ln", cfg.hidden),
            out_proj: Dense::new("denoiser.out", cfg.hidden, cfg.latent_dim, Activation::Linear),
        })
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.in_proj.init(store, rng)?;
        self.t1.init(store, rng)?;
        self.t2.init(store, rng)?;
        for b in &self.blocks {
            b.ln_mlp.init(store)?;
            b.mlp1.init(store, rng)?;
            b.mlp2.init(store, rng)?;
            b.ln_attn.init(store)?;
            b.attn.init(store, rng)?;
        }
        self.out_ln.init(store)?;
        self.out_proj.init(store, rng)?;
        store.set(
            "denoiser.out.w",
            Tensor::zeros(&[self.cfg.hidden, self.cfg.latent_dim]),
        )?;
        store.insert(
            "denoiser.null_cond",
            Tensor::randn(&[1, self.cfg.cond_dim], 0.1, rng),
        )?;
        Ok(())
    }

    /// The learned unconditional embedding tiled over a condition sequence.
    pub fn null_cond_node(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        len: usize,
    ) -> Result<NodeId> {
        let row = store.bind(tape, "denoiser.null_cond")?;
        Ok(tape.repeat_rows(row, len))
    }

    pub fn null_cond_rows(&self, store: &ParamStore, len: usize) -> Result<Vec<f64>> {
        let row = &store.get("denoiser.null_cond")?.data;
        let mut out = Vec::with_capacity(len * row.len());
        for _ in 0..len {
            out.extend_from_slice(row);
        }
        Ok(out)
    }

    /// Predict velocities. `z` is [batch·rows, latent_dim] item-major,
    /// `timesteps` has one diffusion step per item, `cond` is
    /// [batch·cond_len, cond_dim] item-major.
    pub fn apply(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        z: NodeId,
        timesteps: &[usize],
        cond: NodeId,
        batch: usize,
        rows: usize,
        cond_len: usize,
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        if timesteps.len() != batch {
            return Err(Error::Shape(format!(
                "denoiser: {} timesteps for batch {batch}",
                timesteps.len()
            )));
        }
        if tape.value(z).rows() != batch * rows || tape.value(z).cols() != cfg.latent_dim {
            return Err(Error::Shape(format!(
                "denoiser: latent shape {:?}, expected [{}, {}]",
                tape.value(z).shape,
                batch * rows,
                cfg.latent_dim
            )));
        }
        if tape.value(cond).rows() != batch * cond_len
            || tape.value(cond).cols() != cfg.cond_dim
        {
            return Err(Error::Shape(format!(
                "denoiser: condition shape {:?}, expected [{}, {}]",
                tape.value(cond).shape,
                batch * cond_len,
                cfg.cond_dim
            )));
        }

        // Condition with joint positional embedding.
        let pe_cond = tape.leaf(Tensor::new(
            vec![batch * cond_len, cfg.cond_dim],
            position_rows(batch, cond_len, cfg.cond_dim),
        )?);
        let cond_p = tape.add(cond, pe_cond)?;

        // Latent rows into hidden space, plus positions and timestep.
        let mut h = self.in_proj.apply(store, tape, z)?;
        let pe_h = tape.leaf(Tensor::new(
            vec![batch * rows, cfg.hidden],
            position_rows(batch, rows, cfg.hidden),
        )?);
        h = tape.add(h, pe_h)?;
        let mut t_rows = Vec::with_capacity(batch * cfg.t_embed_dim);
        for &n in timesteps {
            t_rows.extend(sinusoidal_embedding(n as f64, cfg.t_embed_dim));
        }
        let t_in = tape.leaf(Tensor::new(vec![batch, cfg.t_embed_dim], t_rows)?);
        let t_h = self.t1.apply(store, tape, t_in)?;
        let t_h = self.t2.apply(store, tape, t_h)?;
        let t_tiled = tape.repeat_rows(t_h, rows);
        h = tape.add(h, t_tiled)?;

        for b in &self.blocks {
            let a = b.ln_mlp.apply(store, tape, h)?;
            let m = b.mlp1.apply(store, tape, a)?;
            let m = b.mlp2.apply(store, tape, m)?;
            h = tape.add(h, m)?;
            let a = b.ln_attn.apply(store, tape, h)?;
            let att = b.attn.apply(store, tape, a, cond_p, batch, rows, cond_len)?;
            h = tape.add(h, att)?;
        }
        let out = self.out_ln.apply(store, tape, h)?;
        self.out_proj.apply(store, tape, out)
    }

    /// Single-item inference convenience: plain values in and out.
    pub fn forward(
        &self,
        store: &ParamStore,
        z: &[f64],
        rows: usize,
        n: usize,
        cond: &[f64],
        cond_len: usize,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z_node = tape.leaf(Tensor::new(vec![rows, self.cfg.latent_dim], z.to_vec())?);
        let cond_node = tape.leaf(Tensor::new(
            vec![cond_len, self.cfg.cond_dim],
            cond.to_vec(),
        )?);
        let out = self.apply(store, &mut tape, z_node, &[n], cond_node, 1, rows, cond_len)?;
        Ok(tape.value(out).data.clone())
    }
}
