use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::refiner::{refine, DiscreteRefiner};
use super::vae::TimeVae;
use crate::counters::CallCounters;
use crate::diffusion::{macro_step, reverse_step_with_drift, DenoiserModel, LatentState, NoiseSchedule};
use crate::error::{config, contract, Result};
use crate::graph::{Graph, ValidityRule};
use crate::math::round;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// When false the macro step is a plain latent macro step followed by a
    /// decode; no structure-space work is done.
    pub enabled: bool,
    pub sigma_g: f64,
    /// Constant guidance weight `h`.
    pub h: f64,
    pub n_fraction: f64,
    pub m_fraction: f64,
    /// Recompute `g` against the held anchor before every guided step.
    pub recompute_each_step: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma_g: 0.4,
            h: 1.0,
            n_fraction: 0.5,
            m_fraction: 0.1,
            recompute_each_step: true,
        }
    }
}

impl GuidanceConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_g > 0.0 && self.sigma_g.is_finite()) {
            return Err(config("sigma_g must be positive and finite"));
        }
        let frac = |f: f64| f > 0.0 && f <= 1.0;
        if !frac(self.n_fraction) || !frac(self.m_fraction) {
            return Err(config("n and m fractions must lie in (0, 1]"));
        }
        if !self.h.is_finite() {
            return Err(config("h must be finite"));
        }
        Ok(())
    }

    /// Unguided steps before the structure-space detour.
    pub fn unguided_steps(&self, k: usize) -> usize {
        (round(k as f64 * self.n_fraction) as usize).clamp(1, k.max(1))
    }

    pub fn refine_steps(&self, k: usize) -> usize {
        (round(k as f64 * self.m_fraction) as usize).max(1)
    }
}

/// `(z_anchor − z_current) / σ_g²`.
pub fn guidance_vector(anchor: &[f64], current: &[f64], sigma_g: f64) -> Result<Vec<f64>> {
    if anchor.len() != current.len() {
        return Err(contract("guidance vector operands differ in dimension"));
    }
    if sigma_g.is_nan() || sigma_g <= 0.0 {
        return Err(contract("sigma_g must be positive"));
    }
    let inv = 1.0 / (sigma_g * sigma_g);
    Ok(anchor.iter().zip(current).map(|(a, c)| (a - c) * inv).collect())
}

/// `z_{t'−1} = μ̃(z_{t'}, t') + h·β̃_{t'}·g + √β̃_{t'}·ξ`.
pub fn guided_reverse_step(
    s: &LatentState,
    g: &[f64],
    h: f64,
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    xi: &[f64],
) -> Result<LatentState> {
    reverse_step_with_drift(s, model, schedule, Some((g, h)), xi)
}

/// Borrowed view of the models a dual-space step needs.
#[derive(Clone, Copy)]
pub struct DualModels<'a> {
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a DenoiserModel,
    pub vae: &'a TimeVae,
    pub refiner: &'a DiscreteRefiner,
    pub rule: &'a ValidityRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualStepOutput {
    /// Latent at time `t − k`.
    pub state: LatentState,
    /// Structure decoded from `state`.
    pub graph: Graph,
    /// Refined structure that served as the guidance anchor, if guidance ran.
    pub anchor: Option<Graph>,
    pub counters: CallCounters,
}

/// One search transition of length `k`: `n` unguided steps, a decode/refine/
/// re-encode detour through structure space, then `k − n` steps pulled toward
/// the re-encoded anchor. `noises` are consumed in time order `t, …, t−k+1`.
pub fn dual_space_macro_step(
    s: &LatentState,
    k: usize,
    cfg: &GuidanceConfig,
    models: &DualModels<'_>,
    noises: &[Vec<f64>],
) -> Result<DualStepOutput> {
    if k == 0 || k > s.t {
        return Err(contract(alloc::format!("macro step length {k} outside 1..={}", s.t)));
    }
    if noises.len() != k {
        return Err(contract("noise count differs from macro step length"));
    }
    let mut counters = CallCounters {
        latent_steps: k as u64,
        ..CallCounters::default()
    };
    if !cfg.enabled {
        let state = macro_step(s, k, models.denoiser, models.schedule, noises)?;
        let graph = models.vae.decode(&state)?;
        counters.codec_calls = 1;
        return Ok(DualStepOutput {
            state,
            graph,
            anchor: None,
            counters,
        });
    }
    let n = cfg.unguided_steps(k);
    let m = cfg.refine_steps(k);
    let mut cur = macro_step(s, n, models.denoiser, models.schedule, &noises[..n])?;
    let coarse = models.vae.decode(&cur)?;
    let anchor_graph = refine(&coarse, cur.t, m, models.refiner, models.rule);
    let anchor = models.vae.encode(&anchor_graph, cur.t)?;
    let mut g = guidance_vector(&anchor.z, &cur.z, cfg.sigma_g)?;
    for (i, xi) in noises[n..].iter().enumerate() {
        if cfg.recompute_each_step && i > 0 {
            g = guidance_vector(&anchor.z, &cur.z, cfg.sigma_g)?;
        }
        cur = guided_reverse_step(&cur, &g, cfg.h, models.denoiser, models.schedule, xi)?;
    }
    let graph = models.vae.decode(&cur)?;
    counters.codec_calls = 3;
    counters.refiner_calls = m as u64;
    Ok(DualStepOutput {
        state: cur,
        graph,
        anchor: Some(anchor_graph),
        counters,
    })
}
