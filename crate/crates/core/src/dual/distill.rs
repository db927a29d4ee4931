use alloc::vec::Vec;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::refiner::{refiner_loss, DiscreteRefiner, RefinerInputs};
use super::vae::{vae_loss, TimeVae, VaeBatch};
use crate::diffusion::{reverse_step, DenoiserModel, LatentState, NoiseSchedule};
use crate::error::{config, contract, Result};
use crate::graph::{encode_dense, reward, Graph, RewardSpec};
use crate::nn::{train_epochs, TrainConfig, TrainReport};
use crate::noise::{standard_normal, NoiseStreams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub t: usize,
    pub z: Vec<f64>,
    pub graph: Graph,
}

/// One full rollout, states ordered from `t = T` down to `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<TrajectoryState>,
    pub terminal_reward: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &TrajectoryState {
        self.states.last().expect("trajectories are nonempty")
    }

    pub fn at(&self, t: usize) -> Option<&TrajectoryState> {
        // states are stored T, T-1, ..., 0
        let steps = self.states.first()?.t;
        self.states.get(steps.checked_sub(t)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStore {
    pub steps: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryStore {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_states(&self) -> usize {
        self.trajectories.iter().map(|t| t.states.len()).sum()
    }

    /// Every trajectory has `T + 1` states with times `T, T−1, …, 0`.
    pub fn validate(&self) -> Result<()> {
        for (i, tr) in self.trajectories.iter().enumerate() {
            let ok =
                tr.states.len() == self.steps + 1 && tr.states.iter().enumerate().all(|(j, s)| s.t == self.steps - j);
            if !ok {
                return Err(contract(alloc::format!(
                    "trajectory {i} is not a full time-ordered rollout"
                )));
            }
        }
        Ok(())
    }

    /// All `(trajectory, state)` index pairs.
    pub fn state_index(&self) -> Vec<(usize, usize)> {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, tr)| (0..tr.states.len()).map(move |j| (i, j)))
            .collect()
    }
}

/// Unguided rollout from `z_T = noise(stream, 0)`; the step at time `t`
/// consumes `noise(stream, t)`.
pub fn rollout(
    denoiser: &DenoiserModel,
    schedule: &NoiseSchedule,
    noise: &NoiseStreams,
    stream: u64,
) -> Result<Vec<LatentState>> {
    let mut cur = LatentState::new(noise.normal(stream, 0), schedule.steps);
    let mut out = Vec::with_capacity(schedule.steps + 1);
    out.push(cur.clone());
    while cur.t > 0 {
        let xi = noise.normal(stream, cur.t);
        cur = reverse_step(&cur, denoiser, schedule, &xi)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// `count` teacher rollouts, trajectory `i` on noise stream `i`, every state
/// decoded at its own time.
pub fn distill_trajectories(
    denoiser: &DenoiserModel,
    vae: &TimeVae,
    schedule: &NoiseSchedule,
    spec: &RewardSpec,
    count: usize,
    noise: &NoiseStreams,
) -> Result<TrajectoryStore> {
    let mut trajectories = Vec::with_capacity(count);
    for i in 0..count {
        let states = rollout(denoiser, schedule, noise, i as u64)?
            .into_iter()
            .map(|s| {
                let graph = vae.decode(&s)?;
                Ok(TrajectoryState { t: s.t, z: s.z, graph })
            })
            .collect::<Result<Vec<_>>>()?;
        let terminal_reward = reward(&states.last().expect("T + 1 states").graph, spec);
        trajectories.push(Trajectory {
            states,
            terminal_reward,
        });
    }
    Ok(TrajectoryStore {
        steps: schedule.steps,
        trajectories,
    })
}

fn vae_epochs<R: Rng + ?Sized>(
    vae: &mut TimeVae,
    items: usize,
    cfg: &TrainConfig,
    rng: &mut R,
    stage: &str,
    mut example: impl FnMut(usize, &mut R) -> (Vec<f64>, Vec<f64>, usize),
) -> Result<TrainReport> {
    let TimeVae {
        store,
        encoder,
        decoder,
        d_z,
        steps,
        lambda_kl,
        ..
    } = vae;
    let (d_z, steps, lambda_kl) = (*d_z, *steps, *lambda_kl);
    train_epochs(store, items, cfg, rng, stage, |tape, batch, rng| {
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        let mut times = Vec::with_capacity(batch.len());
        for &i in batch {
            let (x, y, t) = example(i, rng);
            inputs.push(x);
            targets.push(y);
            times.push(t);
        }
        let eps = standard_normal(rng, batch.len() * d_z);
        let b = VaeBatch {
            inputs: inputs.iter().map(|v| v.as_slice()).collect(),
            targets: targets.iter().map(|v| v.as_slice()).collect(),
            times,
            eps,
        };
        Ok(vae_loss(encoder, decoder, d_z, steps, lambda_kl, tape, &b))
    })
}

/// Bootstrap fit before any diffusion model exists: inputs are dense graph
/// features forward-noised in tensor space, targets are the clean features.
/// A `clean_fraction` of examples use `t = 0`; the rest draw `t ~ U{1..T}`.
pub fn train_vae_bootstrap<R: Rng + ?Sized>(
    graphs: &[Graph],
    vae: &mut TimeVae,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    clean_fraction: f64,
    rng: &mut R,
) -> Result<TrainReport> {
    if graphs.is_empty() {
        return Err(config("VAE bootstrap needs training graphs"));
    }
    if !(0.0..=1.0).contains(&clean_fraction) {
        return Err(config("clean_fraction must lie in [0, 1]"));
    }
    let clean: Vec<Vec<f64>> = graphs
        .iter()
        .map(|g| Ok(encode_dense(g, &vae.layout)?.to_features()))
        .collect::<Result<_>>()?;
    let steps = schedule.steps;
    vae_epochs(vae, clean.len(), cfg, rng, "vae-bootstrap", |i, rng| {
        let t = if rng.random::<f64>() < clean_fraction {
            0
        } else {
            rng.random_range(1..=steps)
        };
        let x0 = &clean[i];
        let x = if t == 0 {
            x0.clone()
        } else {
            let e = standard_normal(rng, x0.len());
            let (a, b) = (schedule.signal_scale(t), schedule.noise_scale(t));
            x0.iter().zip(&e).map(|(x, e)| a * x + b * e).collect()
        };
        (x, x0.clone(), t)
    })
}

/// Fit on distilled states: each decoded structure `𝒢_t` is reconstructed at
/// its own time. At most `max_states` states are drawn (without replacement).
pub fn train_vae<R: Rng + ?Sized>(
    trajs: &TrajectoryStore,
    vae: &mut TimeVae,
    cfg: &TrainConfig,
    max_states: usize,
    rng: &mut R,
) -> Result<TrainReport> {
    if trajs.is_empty() {
        return Err(config("VAE training needs a nonempty trajectory store"));
    }
    let all = trajs.state_index();
    let picked: Vec<(usize, usize)> = sample(rng, all.len(), max_states.min(all.len()))
        .into_iter()
        .map(|i| all[i])
        .collect();
    let examples: Vec<(Vec<f64>, usize)> = picked
        .iter()
        .map(|&(i, j)| {
            let s = &trajs.trajectories[i].states[j];
            Ok((encode_dense(&s.graph, &vae.layout)?.to_features(), s.t))
        })
        .collect::<Result<_>>()?;
    vae_epochs(vae, examples.len(), cfg, rng, "vae", |i, _| {
        let (x, t) = &examples[i];
        (x.clone(), x.clone(), *t)
    })
}

/// Teacher pairs `(𝒢_{t+1}, t+1) → 𝒢_t` with matching node counts, as
/// `(trajectory, index of the 𝒢_{t+1} state)`.
pub fn refiner_pairs(trajs: &TrajectoryStore) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, tr) in trajs.trajectories.iter().enumerate() {
        for j in 0..tr.states.len().saturating_sub(1) {
            if tr.states[j].graph.n() == tr.states[j + 1].graph.n() {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn train_refiner<R: Rng + ?Sized>(
    trajs: &TrajectoryStore,
    refiner: &mut DiscreteRefiner,
    cfg: &TrainConfig,
    max_pairs: usize,
    rng: &mut R,
) -> Result<TrainReport> {
    let all = refiner_pairs(trajs);
    if all.is_empty() {
        return Err(config("refiner training needs consecutive states of equal size"));
    }
    let picked: Vec<(usize, usize)> = sample(rng, all.len(), max_pairs.min(all.len()))
        .into_iter()
        .map(|i| all[i])
        .collect();
    let DiscreteRefiner { store, net } = refiner;
    let steps = net.steps;
    train_epochs(store, picked.len(), cfg, rng, "refiner", |tape, batch, _| {
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for &b in batch {
            let (i, j) = picked[b];
            let tr = &trajs.trajectories[i];
            // states run backwards in time: j + 1 is the less noisy one
            inputs.push((&tr.states[j].graph, tr.states[j].t));
            targets.push(&tr.states[j + 1].graph);
        }
        let x = RefinerInputs::new(&inputs, steps);
        Ok(refiner_loss(net, tape, &x, &targets))
    })
}
