//! Coupling between latent diffusion and discrete structure: the
//! time-conditioned VAE, the discrete refiner, guidance toward re-encoded
//! refined structures, and trajectory distillation.

mod distill;
mod refiner;
mod step;
mod vae;

pub use distill::{
    distill_trajectories, refiner_pairs, rollout, train_refiner, train_vae, train_vae_bootstrap, Trajectory,
    TrajectoryState, TrajectoryStore,
};
pub use refiner::{
    decode_logits, refine, refiner_loss, DiscreteRefiner, RefinerConfig, RefinerInputs, RefinerLogits, RefinerNet,
};
pub use step::{
    dual_space_macro_step, guidance_vector, guided_reverse_step, DualModels, DualStepOutput, GuidanceConfig,
};
pub use vae::{kl_divergence, vae_loss, TimeVae, VaeBatch, VaeConfig};

#[cfg(test)]
mod tests;
