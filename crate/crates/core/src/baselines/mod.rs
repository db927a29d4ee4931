//! Reference samplers compared against the search at matched latent-step
//! budgets. Every sampler starts its first candidate on the caller's stream,
//! so one candidate reproduces [`sample_standard`] exactly.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::counters::CallCounters;
use crate::diffusion::{macro_step, LatentState};
use crate::dual::DualModels;
use crate::error::{config, Result};
use crate::graph::{reward, Graph, RewardSpec};
use crate::noise::{child_stream, mix, NoiseStreams};
use crate::search::{run_search, SearchConfig, SearchModels, SearchTrace};
use crate::verifier::predict_value;


const BON_SALT: u64 = 0xb0;
const BEAM_SALT: u64 = 0xbea;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub graph: Graph,
    pub reward: f64,
    pub counters: CallCounters,
}

fn full_rollout(models: &DualModels<'_>, noise: &NoiseStreams, stream: u64) -> Result<(Graph, CallCounters)> {
    let steps = models.schedule.steps;
    let z_t = LatentState::new(noise.normal(stream, 0), steps);
    let z0 = macro_step(
        &z_t,
        steps,
        models.denoiser,
        models.schedule,
        &noise.macro_noises(stream, steps, steps),
    )?;
    let graph = models.vae.decode(&z0)?;
    let counters = CallCounters {
        latent_steps: steps as u64,
        codec_calls: 1,
        ..CallCounters::default()
    };
    Ok((graph, counters))
}

/// One unguided rollout on `stream`, decoded at `t = 0`.
pub fn sample_standard(
    models: &DualModels<'_>,
    spec: &RewardSpec,
    noise: &NoiseStreams,
    stream: u64,
) -> Result<SampleOutcome> {
    let (graph, counters) = full_rollout(models, noise, stream)?;
    Ok(SampleOutcome {
        reward: reward(&graph, spec),
        graph,
        counters,
    })
}

/// `n_cand` independent rollouts, the best by true reward kept (first on ties).
pub fn sample_best_of_n(
    n_cand: usize,
    models: &DualModels<'_>,
    spec: &RewardSpec,
    noise: &NoiseStreams,
    stream: u64,
) -> Result<SampleOutcome> {
    if n_cand == 0 {
        return Err(config("best-of-n needs at least one candidate"));
    }
    let mut best: Option<SampleOutcome> = None;
    let mut counters = CallCounters::default();
    for c in 0..n_cand {
        let s = if c == 0 {
            stream
        } else {
            child_stream(stream, mix(&[BON_SALT, c as u64]))
        };
        let out = sample_standard(models, spec, noise, s)?;
        counters += out.counters;
        if best.as_ref().is_none_or(|b| out.reward > b.reward) {
            best = Some(out);
        }
    }
    let mut best = best.expect("at least one candidate");
    best.counters = counters;
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    /// Continuations spawned per beam at each boundary.
    pub branch: usize,
    pub stride: usize,
}

impl BeamConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.width == 0 || self.branch == 0 || self.stride == 0 {
            return Err(config("beam width, branch and stride must be at least 1"));
        }
        if !steps.is_multiple_of(self.stride) {
            return Err(config(alloc::format!(
                "beam stride {} does not divide T = {steps}",
                self.stride
            )));
        }
        Ok(())
    }
}

struct Beam {
    state: LatentState,
    stream: u64,
}

/// Beam search over latent trajectories. At every `stride` boundary each beam
/// spawns `branch` continuations; intermediate candidates are ranked by the
/// verifier and the top `width` survive, the final ones by true reward.
pub fn sample_beam(
    cfg: &BeamConfig,
    models: &SearchModels<'_>,
    spec: &RewardSpec,
    noise: &NoiseStreams,
    stream: u64,
) -> Result<SampleOutcome> {
    let dual = &models.dual;
    let steps = dual.schedule.steps;
    cfg.validate(steps)?;
    let mut counters = CallCounters::default();
    let mut beams: Vec<Beam> = (0..cfg.width)
        .map(|b| {
            let s = if b == 0 {
                stream
            } else {
                child_stream(stream, mix(&[BEAM_SALT, b as u64]))
            };
            Beam {
                state: LatentState::new(noise.normal(s, 0), steps),
                stream: s,
            }
        })
        .collect();
    loop {
        let t = beams[0].state.t;
        let len = cfg.stride.min(t);
        let mut cands: Vec<(Beam, Graph)> = Vec::with_capacity(beams.len() * cfg.branch);
        for beam in &beams {
            for c in 0..cfg.branch {
                let s = if c == 0 {
                    beam.stream
                } else {
                    child_stream(beam.stream, mix(&[BEAM_SALT, c as u64, t as u64]))
                };
                let state = macro_step(
                    &beam.state,
                    len,
                    dual.denoiser,
                    dual.schedule,
                    &noise.macro_noises(s, t, len),
                )?;
                let graph = dual.vae.decode(&state)?;
                counters.latent_steps += len as u64;
                counters.codec_calls += 1;
                cands.push((Beam { state, stream: s }, graph));
            }
        }
        if t == len {
            let mut best: Option<(f64, Graph)> = None;
            for (_, g) in cands {
                let r = reward(&g, spec);
                if best.as_ref().is_none_or(|b| r > b.0) {
                    best = Some((r, g));
                }
            }
            let (reward, graph) = best.expect("at least one candidate");
            return Ok(SampleOutcome {
                graph,
                reward,
                counters,
            });
        }
        let mut scored: Vec<(f64, usize)> = cands
            .iter()
            .enumerate()
            .map(|(i, (b, g))| (predict_value(models.verifier, &b.state, g), i))
            .collect();
        counters.verifier_calls += scored.len() as u64;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let keep: Vec<usize> = scored.iter().take(cfg.width).map(|s| s.1).collect();
        let mut slots: Vec<Option<Beam>> = cands.into_iter().map(|c| Some(c.0)).collect();
        beams = keep.iter().map(|&i| slots[i].take().expect("kept once")).collect();
    }
}

/// Search sample together with its trace.
pub fn sample_treediff(
    cfg: &SearchConfig,
    models: SearchModels<'_>,
    spec: &RewardSpec,
    noise: &NoiseStreams,
    stream: u64,
) -> Result<(SampleOutcome, SearchTrace)> {
    let (graph, trace) = run_search(cfg, models, *noise, stream)?;
    let out = SampleOutcome {
        reward: reward(&graph, spec),
        graph,
        counters: trace.counters,
    };
    Ok((out, trace))
}
