//! Network-evaluation bookkeeping shared by every sampler.

use core::ops::AddAssign;
use serde::{Deserialize, Serialize};

/// Calls made to each learned component.
///
/// `latent_steps` counts denoiser evaluations and is the budget currency;
/// the others are reported alongside it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounters {
    pub latent_steps: u64,
    pub refiner_calls: u64,
    pub codec_calls: u64,
    pub verifier_calls: u64,
}

impl AddAssign for CallCounters {
    fn add_assign(&mut self, o: Self) {
        self.latent_steps += o.latent_steps;
        self.refiner_calls += o.refiner_calls;
        self.codec_calls += o.codec_calls;
        self.verifier_calls += o.verifier_calls;
    }
}

/// Optional charges for non-latent calls, in units of one latent step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub refiner: f64,
    pub codec: f64,
    pub verifier: f64,
}

impl CallCounters {
    /// Latent steps plus weighted auxiliary calls; equals `latent_steps` under
    /// the default zero weights.
    pub fn charged_nfe(&self, w: &CostWeights) -> f64 {
        self.latent_steps as f64
            + w.refiner * self.refiner_calls as f64
            + w.codec * self.codec_calls as f64
            + w.verifier * self.verifier_calls as f64
    }
}
