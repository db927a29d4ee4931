//! Latent denoising diffusion: schedule, noise predictor, forward kernel and
//! the reverse sampler, including the composed `k`-step operator.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{diffusion_loss, train_denoiser, DenoiserConfig, DenoiserModel};
pub use sampler::{
    forward_noise, forward_noise_with, forward_step, macro_step, posterior_mean, reverse_step, reverse_step_with_drift,
    LatentState,
};
pub use schedule::{time_embedding, NoiseSchedule, ScheduleKind};
