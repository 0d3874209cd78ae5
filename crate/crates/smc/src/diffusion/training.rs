//! Velocity-regression training loss.
//!
//! Each batch item gets its own timestep and noise draw; the clean latents
//! are noised with the schedule's closed form and the network regresses the
//! matching velocity target under mean squared error.

use rand::Rng;

use crate::diffusion::denoiser::DenoiserNet;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{NodeId, ParamStore, Tape, Tensor};
use crate::seeds::standard_normal;

/// One training batch: clean latents, per-item timesteps, per-item noise.
/// Latents and noise are item-major [batch·rows, dim] flattened.
pub struct DiffusionBatch {
    pub z0: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub eps: Vec<f64>,
}

pub fn sample_timesteps<R: Rng>(rng: &mut R, batch: usize, n: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(1..=n)).collect()
}

pub fn sample_noise<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| standard_normal(rng)).collect()
}

/// Build the velocity-regression loss on the tape. `cond` must already be a
/// node of shape [batch·cond_len, cond_dim]; gradients flow through it into
/// whatever produced the condition.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_recon_loss(
    tape: &mut Tape,
    net: &DenoiserNet,
    store: &ParamStore,
    schedule: &NoiseSchedule,
    data: &DiffusionBatch,
    cond: NodeId,
    batch: usize,
    rows: usize,
    cond_len: usize,
) -> Result<NodeId> {
    let dim = net.cfg.latent_dim;
    let per_item = rows * dim;
    if data.z0.len() != batch * per_item || data.eps.len() != batch * per_item {
        return Err(Error::Shape(format!(
            "diffusion batch: {} latent values for batch {batch} x {per_item}",
            data.z0.len()
        )));
    }
    if data.timesteps.len() != batch {
        return Err(Error::Shape(format!(
            "diffusion batch: {} timesteps for batch {batch}",
            data.timesteps.len()
        )));
    }

    for &n in &data.timesteps {
        if n < 1 || n > schedule.n {
            return Err(Error::Config(format!(
                "diffusion timestep {n} outside 1..={}",
                schedule.n
            )));
        }
    }
    let mut z_n = vec![0.0; batch * per_item];
    let mut v_t = vec![0.0; batch * per_item];
    for (i, &n) in data.timesteps.iter().enumerate() {
        let sa = schedule.sqrt_alpha_bar(n);
        let sb = schedule.sqrt_one_minus_alpha_bar(n);
        for j in 0..per_item {
            let k = i * per_item + j;
            z_n[k] = sa * data.z0[k] + sb * data.eps[k];
            v_t[k] = sa * data.eps[k] - sb * data.z0[k];
        }
    }
    let z_node = tape.leaf(Tensor::new(vec![batch * rows, dim], z_n)?);
    let v_node = tape.leaf(Tensor::new(vec![batch * rows, dim], v_t)?);
    let v_hat = net.apply(
        store,
        tape,
        z_node,
        &data.timesteps,
        cond,
        batch,
        rows,
        cond_len,
    )?;
    tape.mse(v_hat, v_node)
}
