//! DDIM sampling with classifier-free guidance.
//!
//! The sampler walks a strictly increasing subsequence τ_i = round(i·N/S) of
//! the training schedule from pure noise down to the clean latent. Each step
//! converts the (guided) velocity prediction into (ẑ0, ε̂) and re-noises to
//! the previous level; the final step lands on ᾱ = 1 and returns ẑ0 itself.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::diffusion::denoiser::DenoiserNet;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::seeds::standard_normal;

/// Anything that predicts velocities for a whole latent window at a given
/// diffusion step, with or without conditioning.
pub trait VelocityModel {
    fn latent_rows(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn velocity(&self, z: &[f64], n: usize, conditioned: bool) -> Result<Vec<f64>>;
}

/// How the conditional and unconditional branches are mixed.
///
/// `Standard` is v_u + w·(v_c − v_u), the usual formulation where w = 1 is
/// plain conditional sampling and larger w extrapolates toward the
/// condition. `SwappedWeights` is (1 − w)·v_c + w·v_u, the transcription
/// that appears in some writeups; it is kept selectable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceForm {
    Standard,
    SwappedWeights,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Number of DDIM steps S, 1 ≤ S ≤ N.
    pub steps: usize,
    /// Guidance weight w.
    pub guidance: f64,
    pub form: GuidanceForm,
    /// Seed for the initial noise draw.
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> SamplerConfig {
        SamplerConfig {
            steps: 50,
            guidance: 3.0,
            form: GuidanceForm::Standard,
            seed: 0,
        }
    }
}

/// Mix the two velocity branches. The w = 1 and w = 0 endpoints return the
/// corresponding branch verbatim so no floating-point residue sneaks in.
pub fn guided_velocity(v_cond: &[f64], v_uncond: &[f64], w: f64, form: GuidanceForm) -> Vec<f64> {
    match form {
        GuidanceForm::Standard => {
            if w == 1.0 {
                return v_cond.to_vec();
            }
            if w == 0.0 {
                return v_uncond.to_vec();
            }
            v_uncond
                .iter()
                .zip(v_cond)
                .map(|(u, c)| u + w * (c - u))
                .collect()
        }
        GuidanceForm::SwappedWeights => {
            if w == 0.0 {
                return v_cond.to_vec();
            }
            if w == 1.0 {
                return v_uncond.to_vec();
            }
            v_cond
                .iter()
                .zip(v_uncond)
                .map(|(c, u)| (1.0 - w) * c + w * u)
                .collect()
        }
    }
}

/// The DDIM timestep subsequence, strictly increasing and ending at N.
pub fn ddim_timesteps(n: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    if steps > n {
        return Err(Error::Config(format!(
            "sampler steps {steps} exceed schedule length {n}"
        )));
    }
    let mut taus = Vec::with_capacity(steps);
    for i in 1..=steps {
        let tau = ((i * n) as f64 / steps as f64).round() as usize;
        taus.push(tau.clamp(1, n));
    }
    for w in taus.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config(format!(
                "sampler timesteps not strictly increasing: {:?}",
                taus
            )));
        }
    }
    Ok(taus)
}

/// Run DDIM from seeded Gaussian noise down to a clean latent.
pub fn ddim_sample(
    model: &dyn VelocityModel,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<f64>> {
    let taus = ddim_timesteps(schedule.n, cfg.steps)?;
    let total = model.latent_rows() * model.latent_dim();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut z: Vec<f64> = (0..total).map(|_| standard_normal(&mut rng)).collect();

    for i in (0..taus.len()).rev() {
        let n = taus[i];
        let n_prev = if i == 0 { 0 } else { taus[i - 1] };
        let v_c = model.velocity(&z, n, true)?;
        let v = if cfg.guidance == 1.0 && cfg.form == GuidanceForm::Standard {
            v_c
        } else {
            let v_u = model.velocity(&z, n, false)?;
            guided_velocity(&v_c, &v_u, cfg.guidance, cfg.form)
        };
        if v.len() != total {
            return Err(Error::Shape(format!(
                "velocity model returned {} values, expected {total}",
                v.len()
            )));
        }
        let (z0_hat, eps_hat) = schedule.split_state(&z, &v, n);
        let sa = schedule.sqrt_alpha_bar(n_prev);
        let sb = schedule.sqrt_one_minus_alpha_bar(n_prev);
        for j in 0..total {
            z[j] = sa * z0_hat[j] + sb * eps_hat[j];
        }
    }
    for v in &z {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite value during sampling".into()));
        }
    }
    Ok(z)
}

/// A trained denoiser bound to one condition sequence, ready to sample.
pub struct ConditionedDenoiser<'a> {
    pub net: &'a DenoiserNet,
    pub store: &'a ParamStore,
    pub cond: Vec<f64>,
    pub cond_len: usize,
    pub rows: usize,
    null_cond: Vec<f64>,
}

impl<'a> ConditionedDenoiser<'a> {
    pub fn new(
        net: &'a DenoiserNet,
        store: &'a ParamStore,
        cond: Vec<f64>,
        cond_len: usize,
        rows: usize,
    ) -> Result<ConditionedDenoiser<'a>> {
        if cond.len() != cond_len * net.cfg.cond_dim {
            return Err(Error::Shape(format!(
                "condition has {} values, expected {}",
                cond.len(),
                cond_len * net.cfg.cond_dim
            )));
        }
        let null_cond = net.null_cond_rows(store, cond_len)?;
        Ok(ConditionedDenoiser {
            net,
            store,
            cond,
            cond_len,
            rows,
            null_cond,
        })
    }
}

impl VelocityModel for ConditionedDenoiser<'_> {
    fn latent_rows(&self) -> usize {
        self.rows
    }

    fn latent_dim(&self) -> usize {
        self.net.cfg.latent_dim
    }

    fn velocity(&self, z: &[f64], n: usize, conditioned: bool) -> Result<Vec<f64>> {
        let cond = if conditioned { &self.cond } else { &self.null_cond };
        self.net
            .forward(self.store, z, self.rows, n, cond, self.cond_len)
    }
}
