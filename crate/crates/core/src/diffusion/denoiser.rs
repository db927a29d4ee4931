use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{time_embedding, NoiseSchedule};
use crate::error::{config, Result};
use crate::nn::{train_epochs, Mlp, ParamStore, Tape, Tensor, TrainConfig, TrainReport, Var};
use crate::noise::standard_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub d_z: usize,
    pub hidden: Vec<usize>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            d_z: 32,
            hidden: alloc::vec![64, 64],
        }
    }
}

/// Noise predictor `ε_θ(z_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub store: ParamStore,
    pub net: Mlp,
    pub d_z: usize,
    pub steps: usize,
}

impl DenoiserModel {
    pub fn new<R: Rng + ?Sized>(cfg: &DenoiserConfig, steps: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mut widths = Vec::with_capacity(cfg.hidden.len() + 2);
        widths.push(cfg.d_z + 3);
        widths.extend_from_slice(&cfg.hidden);
        widths.push(cfg.d_z);
        let net = Mlp::new(&mut store, "denoiser", &widths, rng);
        Self {
            store,
            net,
            d_z: cfg.d_z,
            steps,
        }
    }

    pub fn predict_eps(&self, z: &[f64], t: usize) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.d_z);
        self.net
            .eval(&self.store, &inputs(self.d_z, self.steps, &[z], &[t]))
            .into_data()
    }

    /// Records `mean((ε_θ(z_t, t) - ε)²)` on the tape for noised inputs `z_t`.
    pub fn loss(&self, tape: &mut Tape<'_>, zt: &[&[f64]], ts: &[usize], eps: &[f64]) -> Var {
        diffusion_loss(&self.net, self.d_z, self.steps, tape, zt, ts, eps)
    }
}

fn inputs(d_z: usize, steps: usize, zs: &[&[f64]], ts: &[usize]) -> Tensor {
    let w = d_z + 3;
    let mut data = Vec::with_capacity(zs.len() * w);
    for (z, &t) in zs.iter().zip(ts) {
        data.extend_from_slice(z);
        data.extend_from_slice(&time_embedding(t, steps));
    }
    Tensor::matrix(zs.len(), w, data).expect("denoiser input shape")
}

/// `L_diff` on a batch of noised latents; a free function so gradient checks
/// can borrow the network while mutating the parameter store.
pub fn diffusion_loss(
    net: &Mlp,
    d_z: usize,
    steps: usize,
    tape: &mut Tape<'_>,
    zt: &[&[f64]],
    ts: &[usize],
    eps: &[f64],
) -> Var {
    let x = tape.input(inputs(d_z, steps, zt, ts));
    let pred = net.forward(tape, x);
    let target = tape.input(Tensor::matrix(zt.len(), d_z, eps.to_vec()).expect("target shape"));
    let diff = tape.sub(pred, target);
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// Fits `ε_θ` on clean latents with the simple noise-prediction loss,
/// drawing a fresh `t ~ U{1..T}` and `ε ~ N(0, I)` per example.
pub fn train_denoiser<R: Rng + ?Sized>(
    latents: &[Vec<f64>],
    model: &mut DenoiserModel,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if latents.is_empty() {
        return Err(config("denoiser training needs at least one latent"));
    }
    if schedule.steps != model.steps {
        return Err(config("schedule length differs from the model's step count"));
    }
    let DenoiserModel { store, net, d_z, steps } = model;
    let (d_z, steps) = (*d_z, *steps);
    train_epochs(store, latents.len(), cfg, rng, "denoiser", |tape, batch, rng| {
        let mut zt = Vec::with_capacity(batch.len());
        let mut ts = Vec::with_capacity(batch.len());
        let mut eps = Vec::with_capacity(batch.len() * d_z);
        for &i in batch {
            let t = rng.random_range(1..=steps);
            let e = standard_normal(rng, d_z);
            let (a, b) = (schedule.signal_scale(t), schedule.noise_scale(t));
            zt.push(
                latents[i]
                    .iter()
                    .zip(&e)
                    .map(|(z, e)| a * z + b * e)
                    .collect::<Vec<f64>>(),
            );
            ts.push(t);
            eps.extend(e);
        }
        let rows: Vec<&[f64]> = zt.iter().map(|v| v.as_slice()).collect();
        Ok(diffusion_loss(net, d_z, steps, tape, &rows, &ts, &eps))
    })
}
