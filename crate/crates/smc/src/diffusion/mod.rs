//! Conditional latent diffusion: mel-block latent coder, cosine noise
//! schedule with a forced-zero terminal level, velocity-prediction network,
//! DDIM sampler with classifier-free guidance, and the training loss.

pub mod denoiser;
pub mod latent;
pub mod sampler;
pub mod schedule;
pub mod training;

pub use denoiser::{sinusoidal_embedding, DenoiserConfig, DenoiserNet};
pub use latent::{LatentCoder, LatentCoderConfig};
pub use sampler::{
    ddim_sample, ddim_timesteps, guided_velocity, ConditionedDenoiser, GuidanceForm,
    SamplerConfig, VelocityModel,
};
pub use schedule::{build_schedule, NoiseSchedule};
pub use training::{diffusion_recon_loss, sample_noise, sample_timesteps, DiffusionBatch};
