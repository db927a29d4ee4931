//! Tree search over macro-step transitions, scored by the verifier.

mod run;
mod tree;


pub use run::{run_search, ExpansionRecord, RoundRecord, SearchModels, SearchRun, SearchTrace};
pub use tree::{backpropagate, commit, select, select_child, NodeId, SelectionRule, Tree, TreeNode};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dual::GuidanceConfig;
use crate::error::{config, Result};
use crate::math::round;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub d_max: usize,
    /// Children per expansion.
    pub k: usize,
    /// Select/expand/backprop iterations per round; one round per commit.
    pub n_r: usize,
    pub c_ucb: f64,
    pub sigma_k: f64,
    /// Root children kept at commit, the committed one included.
    pub m: usize,
    pub selection: SelectionRule,
    /// Time at which the search starts; steps above it are plain denoising.
    /// `None` starts at `T`.
    pub t_s: Option<usize>,
    /// Step lengths below the root use the remaining depth along the path,
    /// `D_rem − depth`, instead of the committed chain's `D_rem`.
    pub depth_aware_steps: bool,
    /// When selection ends on a terminal node, give its parent `K` more
    /// children instead of only re-backing up the stored score.
    pub widen_on_terminal: bool,
    pub guidance: GuidanceConfig,
    /// Keep every `(path, value)` backup in the trace.
    pub record_backups: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            d_max: 10,
            k: 4,
            n_r: 4,
            c_ucb: core::f64::consts::SQRT_2,
            sigma_k: 0.1,
            m: 1,
            selection: SelectionRule::Ucb1,
            t_s: None,
            depth_aware_steps: true,
            widen_on_terminal: true,
            guidance: GuidanceConfig::default(),
            record_backups: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 || self.k == 0 || self.n_r == 0 || self.m == 0 {
            return Err(config("d_max, k, n_r and m must all be at least 1"));
        }
        if !(self.sigma_k >= 0.0 && self.sigma_k.is_finite()) {
            return Err(config("sigma_k must be finite and non-negative"));
        }
        if !(self.c_ucb >= 0.0 && self.c_ucb.is_finite()) {
            return Err(config("c_ucb must be finite and non-negative"));
        }
        if self.t_s == Some(0) {
            return Err(config("t_s must be at least 1"));
        }
        if self.guidance.enabled {
            self.guidance.validate()?;
        }
        Ok(())
    }
}

/// Macro-step length centred on `t / d_rem` with relative spread `sigma_k`,
/// rounded and clipped to `[1, t]`. With one level of depth left the whole
/// remainder is taken.
pub fn sample_step_length<R: Rng + ?Sized>(t: usize, d_rem: usize, sigma_k: f64, rng: &mut R) -> usize {
    debug_assert!(t >= 1 && d_rem >= 1);
    let k_base = t as f64 / d_rem.max(1) as f64;
    if d_rem <= 1 {
        return t;
    }
    let draw = if sigma_k > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        k_base + sigma_k * k_base * z
    } else {
        k_base
    };
    let k = round(draw);
    if k.is_nan() || k < 1.0 {
        1
    } else if k >= t as f64 {
        t
    } else {
        k as usize
    }
}
