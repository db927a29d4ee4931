use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{time_embedding, LatentState};
use crate::error::{contract, Result};
use crate::graph::{decode_dense, encode_dense, Graph, GraphLayout};
use crate::nn::{Mlp, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub layout: GraphLayout,
    pub d_z: usize,
    pub hidden: Vec<usize>,
    pub lambda_kl: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            layout: GraphLayout::default(),
            d_z: 32,
            hidden: alloc::vec![64, 64],
            lambda_kl: 1e-3,
        }
    }
}

/// Time-conditioned encoder/decoder between dense graph features and latents.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVae {
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub layout: GraphLayout,
    pub d_z: usize,
    pub steps: usize,
    pub lambda_kl: f64,
}

fn with_time(rows: &[&[f64]], ts: &[usize], steps: usize) -> Tensor {
    let w = rows.first().map_or(0, |r| r.len()) + 3;
    let mut data = Vec::with_capacity(rows.len() * w);
    for (r, &t) in rows.iter().zip(ts) {
        data.extend_from_slice(r);
        data.extend_from_slice(&time_embedding(t, steps));
    }
    Tensor::matrix(rows.len(), w, data).expect("time-augmented rows")
}

impl TimeVae {
    pub fn new<R: Rng + ?Sized>(cfg: &VaeConfig, steps: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let f = cfg.layout.feature_width();
        let widths = |input: usize, output: usize| {
            let mut w = Vec::with_capacity(cfg.hidden.len() + 2);
            w.push(input);
            w.extend_from_slice(&cfg.hidden);
            w.push(output);
            w
        };
        let encoder = Mlp::new(&mut store, "encoder", &widths(f + 3, 2 * cfg.d_z), rng);
        let decoder = Mlp::new(&mut store, "decoder", &widths(cfg.d_z + 3, f), rng);
        Self {
            store,
            encoder,
            decoder,
            layout: cfg.layout,
            d_z: cfg.d_z,
            steps,
            lambda_kl: cfg.lambda_kl,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.layout.feature_width()
    }

    /// Posterior mean for a flat feature vector at time `t`.
    pub fn encode_features(&self, features: &[f64], t: usize) -> Vec<f64> {
        let out = self
            .encoder
            .eval(&self.store, &with_time(&[features], &[t], self.steps));
        out.data()[..self.d_z].to_vec()
    }

    pub fn encode(&self, g: &Graph, t: usize) -> Result<LatentState> {
        if t > self.steps {
            return Err(contract("encode time beyond the schedule"));
        }
        let x = encode_dense(g, &self.layout)?;
        Ok(LatentState::new(self.encode_features(&x.to_features(), t), t))
    }

    pub fn decode_features(&self, z: &[f64], t: usize) -> Vec<f64> {
        self.decoder
            .eval(&self.store, &with_time(&[z], &[t], self.steps))
            .into_data()
    }

    pub fn decode(&self, s: &LatentState) -> Result<Graph> {
        if s.z.len() != self.d_z {
            return Err(contract("latent dimension differs from the decoder's"));
        }
        let x = self.layout.from_features(&self.decode_features(&s.z, s.t))?;
        decode_dense(&x, &self.layout)
    }

    pub fn set_decoder_trainable(&mut self, trainable: bool) {
        let ids: Vec<_> = self.decoder.params().collect();
        for id in ids {
            self.store.set_trainable(id, trainable);
        }
    }

    pub fn set_encoder_trainable(&mut self, trainable: bool) {
        let ids: Vec<_> = self.encoder.params().collect();
        for id in ids {
            self.store.set_trainable(id, trainable);
        }
    }
}

/// `½ Σ (μ² + e^{logvar} − logvar − 1)` for one posterior.
pub fn kl_divergence(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + crate::math::exp(*lv) - lv - 1.0))
        .sum()
}

/// One VAE minibatch.
pub struct VaeBatch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub targets: Vec<&'a [f64]>,
    pub times: Vec<usize>,
    /// Reparameterization noise, `rows × d_z`.
    pub eps: Vec<f64>,
}

/// `L_VAE`: squared reconstruction error summed over features plus
/// `λ_KL·KL`, both averaged over the batch.
pub fn vae_loss(
    encoder: &Mlp,
    decoder: &Mlp,
    d_z: usize,
    steps: usize,
    lambda_kl: f64,
    tape: &mut Tape<'_>,
    batch: &VaeBatch<'_>,
) -> Var {
    let rows = batch.inputs.len();
    let inv = 1.0 / rows as f64;
    let x = tape.input(with_time(&batch.inputs, &batch.times, steps));
    let h = encoder.forward(tape, x);
    let mean = tape.slice_cols(h, 0, d_z);
    let logvar = tape.slice_cols(h, d_z, 2 * d_z);
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let eps = tape.input(Tensor::matrix(rows, d_z, batch.eps.clone()).expect("eps shape"));
    let noise = tape.mul(std, eps);
    let z = tape.add(mean, noise);
    let temb: Vec<f64> = batch.times.iter().flat_map(|&t| time_embedding(t, steps)).collect();
    let temb = tape.input(Tensor::matrix(rows, 3, temb).expect("time shape"));
    let zt = tape.concat_cols(&[z, temb]);
    let recon = decoder.forward(tape, zt);
    let target_rows: Vec<f64> = batch.targets.iter().flat_map(|r| r.iter().copied()).collect();
    let target = tape.input(Tensor::matrix(rows, target_rows.len() / rows, target_rows).expect("target shape"));
    let diff = tape.sub(recon, target);
    let sq = tape.square(diff);
    let rec = tape.sum(sq);
    let rec = tape.scale(rec, inv);
    if lambda_kl == 0.0 {
        return rec;
    }
    let m2 = tape.square(mean);
    let var = tape.exp(logvar);
    let a = tape.add(m2, var);
    let b = tape.sub(a, logvar);
    let b = tape.add_const(b, -1.0);
    let kl = tape.sum(b);
    let kl = tape.scale(kl, 0.5 * inv * lambda_kl);
    tape.add(rec, kl)
}
