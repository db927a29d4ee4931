//! Value model predicting a trajectory's terminal reward from an intermediate
//! `(latent, decoded structure, t)` state, trained on distilled trajectories.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{time_embedding, LatentState};
use crate::dual::{TimeVae, TrajectoryStore};
use crate::error::{config, Result};
use crate::graph::{Graph, EDGE_CATEGORIES, NODE_CATEGORIES};
use crate::nn::{
    train_epochs, Activation, Dense, GraphBatch, MessagePassing, ParamId, ParamStore, Tape, Tensor, TrainConfig,
    TrainReport, Var,
};
use crate::noise::standard_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub d_z: usize,
    pub latent_hidden: usize,
    pub graph_hidden: usize,
    pub rounds: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            d_z: 32,
            latent_hidden: 64,
            graph_hidden: 32,
            rounds: 2,
        }
    }
}

/// Layer layout of the verifier; parameters live in the owning store.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierNet {
    pub latent_in: Dense,
    pub latent_out: Dense,
    pub node_embed: Dense,
    pub layers: Vec<MessagePassing>,
    /// Bilinear form scoring latent query against node embeddings.
    pub attention: ParamId,
    pub head_hidden: Dense,
    pub head_out: Dense,
    pub graph_hidden: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierModel {
    pub store: ParamStore,
    pub net: VerifierNet,
    pub d_z: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierSample {
    pub z: Vec<f64>,
    pub graph: Graph,
    pub t: usize,
    pub target: f64,
}

/// Per-node input width: label one-hot plus weighted degree scaled by 1/4.
pub const NODE_INPUT_WIDTH: usize = NODE_CATEGORIES + 1;

/// Stacked verifier inputs for a batch of `(z, graph, t)` triples.
pub struct VerifierInputs {
    latents: Tensor,
    node_features: Tensor,
    batch: GraphBatch,
}

impl VerifierInputs {
    pub fn new(items: &[(&[f64], &Graph, usize)], steps: usize) -> Self {
        let d = items.first().map_or(0, |i| i.0.len());
        let mut lat = Vec::with_capacity(items.len() * (d + 3));
        let mut feats = Vec::new();
        let mut node_graph = Vec::new();
        let mut typed = vec![Vec::new(); EDGE_CATEGORIES - 1];
        let mut offset = 0;
        for (gi, (z, g, t)) in items.iter().enumerate() {
            lat.extend_from_slice(z);
            lat.extend_from_slice(&time_embedding(*t, steps));
            for i in 0..g.n() {
                let mut row = [0.0; NODE_INPUT_WIDTH];
                row[g.label(i) as usize] = 1.0;
                row[NODE_CATEGORIES] = g.weighted_degree(i) as f64 / 4.0;
                feats.extend_from_slice(&row);
                node_graph.push(gi);
                for j in i + 1..g.n() {
                    let l = g.edge(i, j) as usize;
                    if l > 0 {
                        typed[l - 1].push((offset + i, offset + j));
                        typed[l - 1].push((offset + j, offset + i));
                    }
                }
            }
            offset += g.n();
        }
        Self {
            latents: Tensor::matrix(items.len(), d + 3, lat).expect("latent rows"),
            node_features: Tensor::matrix(offset, NODE_INPUT_WIDTH, feats).expect("node rows"),
            batch: GraphBatch {
                node_graph,
                num_graphs: items.len(),
                typed_edges: typed,
            },
        }
    }
}

impl VerifierModel {
    pub fn new<R: Rng + ?Sized>(cfg: &VerifierConfig, steps: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let (lh, gh) = (cfg.latent_hidden, cfg.graph_hidden);
        let latent_in = Dense::new(&mut store, "verifier.latent0", cfg.d_z + 3, lh, Activation::Tanh, rng);
        let latent_out = Dense::new(&mut store, "verifier.latent1", lh, gh, Activation::Tanh, rng);
        let node_embed = Dense::new(
            &mut store,
            "verifier.embed",
            NODE_INPUT_WIDTH,
            gh,
            Activation::Tanh,
            rng,
        );
        let layers = (0..cfg.rounds)
            .map(|r| {
                MessagePassing::new(
                    &mut store,
                    &alloc::format!("verifier.mp{r}"),
                    gh,
                    gh,
                    EDGE_CATEGORIES - 1,
                    rng,
                )
            })
            .collect();
        let attention = store.add_glorot("verifier.attention", gh, gh, rng);
        let head_hidden = Dense::new(&mut store, "verifier.head0", 2 * gh, gh, Activation::Tanh, rng);
        let head_out = Dense::new(&mut store, "verifier.head1", gh, 1, Activation::Identity, rng);
        Self {
            store,
            net: VerifierNet {
                latent_in,
                latent_out,
                node_embed,
                layers,
                attention,
                head_hidden,
                head_out,
                graph_hidden: gh,
                steps,
            },
            d_z: cfg.d_z,
        }
    }

    /// `R̂_t` for one state.
    pub fn predict(&self, z: &[f64], g: &Graph, t: usize) -> f64 {
        let inputs = VerifierInputs::new(&[(z, g, t)], self.net.steps);
        let mut tape = Tape::new(&self.store);
        let v = self.net.forward(&mut tape, &inputs);
        tape.value(v).data()[0]
    }

    pub fn predict_batch(&self, items: &[(&[f64], &Graph, usize)]) -> Vec<f64> {
        if items.is_empty() {
            return Vec::new();
        }
        let inputs = VerifierInputs::new(items, self.net.steps);
        let mut tape = Tape::new(&self.store);
        let v = self.net.forward(&mut tape, &inputs);
        tape.value(v).data().to_vec()
    }
}

pub fn predict_value(v: &VerifierModel, s: &LatentState, g: &Graph) -> f64 {
    v.predict(&s.z, g, s.t)
}

impl VerifierNet {
    /// Records the forward pass; returns a `[batch, 1]` column of values.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: &VerifierInputs) -> Var {
        let lat = tape.input(inputs.latents.clone());
        let q = self.latent_in.forward(tape, lat);
        let q = self.latent_out.forward(tape, q);

        let x = tape.input(inputs.node_features.clone());
        let mut h = self.node_embed.forward(tape, x);
        for layer in &self.layers {
            h = layer.forward(tape, h, &inputs.batch);
        }

        // bilinear attention: score_i = q_{graph(i)}ᵀ · A · h_i / √d
        let a = tape.param(self.attention);
        let ha = tape.matmul(h, a);
        let qn = tape.gather_rows(q, inputs.batch.node_graph.clone());
        let prod = tape.mul(ha, qn);
        let score = tape.row_sum(prod);
        let score = tape.scale(score, 1.0 / crate::math::sqrt(self.graph_hidden as f64));
        let n = inputs.batch.num_graphs;
        let alpha = tape.segment_softmax(score, inputs.batch.node_graph.clone(), n);
        let weighted = tape.mul_col(h, alpha);
        let context = tape.segment_sum(weighted, inputs.batch.node_graph.clone(), n);

        let joint = tape.concat_cols(&[q, context]);
        let hid = self.head_hidden.forward(tape, joint);
        self.head_out.forward(tape, hid)
    }
}

/// `L_verifier`: mean squared error against terminal rewards.
pub fn verifier_loss(net: &VerifierNet, tape: &mut Tape<'_>, inputs: &VerifierInputs, targets: &[f64]) -> Var {
    let pred = net.forward(tape, inputs);
    let y = tape.input(Tensor::matrix(targets.len(), 1, targets.to_vec()).expect("targets"));
    let d = tape.sub(pred, y);
    let sq = tape.square(d);
    tape.mean(sq)
}

/// Each stored state plus `aug_per_state` copies with `z + ε`, `ε ~ N(0, σ_a² I)`,
/// decoded at the state's time. All copies keep the trajectory's terminal reward.
pub fn build_verifier_dataset<R: Rng + ?Sized>(
    trajs: &TrajectoryStore,
    vae: &TimeVae,
    sigma_a: f64,
    aug_per_state: usize,
    rng: &mut R,
) -> Result<Vec<VerifierSample>> {
    if sigma_a.is_nan() || sigma_a < 0.0 {
        return Err(config("sigma_a must be nonnegative"));
    }
    let mut out = Vec::with_capacity(trajs.total_states() * (1 + aug_per_state));
    for tr in &trajs.trajectories {
        for s in &tr.states {
            out.push(VerifierSample {
                z: s.z.clone(),
                graph: s.graph.clone(),
                t: s.t,
                target: tr.terminal_reward,
            });
            for _ in 0..aug_per_state {
                let e = standard_normal(rng, s.z.len());
                let z: Vec<f64> = s.z.iter().zip(&e).map(|(z, e)| z + sigma_a * e).collect();
                let graph = if sigma_a == 0.0 {
                    s.graph.clone()
                } else {
                    vae.decode(&LatentState::new(z.clone(), s.t))?
                };
                out.push(VerifierSample {
                    z,
                    graph,
                    t: s.t,
                    target: tr.terminal_reward,
                });
            }
        }
    }
    Ok(out)
}

pub fn train_verifier<R: Rng + ?Sized>(
    samples: &[VerifierSample],
    model: &mut VerifierModel,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(config("verifier training needs samples"));
    }
    let VerifierModel { store, net, .. } = model;
    let steps = net.steps;
    train_epochs(store, samples.len(), cfg, rng, "verifier", |tape, batch, _| {
        let items: Vec<(&[f64], &Graph, usize)> = batch
            .iter()
            .map(|&i| (samples[i].z.as_slice(), &samples[i].graph, samples[i].t))
            .collect();
        let targets: Vec<f64> = batch.iter().map(|&i| samples[i].target).collect();
        let x = VerifierInputs::new(&items, steps);
        Ok(verifier_loss(net, tape, &x, &targets))
    })
}

/// Mean squared error of the model on `samples`.
pub fn verifier_mse(model: &VerifierModel, samples: &[VerifierSample]) -> f64 {
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let items: Vec<(&[f64], &Graph, usize)> = chunk.iter().map(|s| (s.z.as_slice(), &s.graph, s.t)).collect();
        for (p, s) in model.predict_batch(&items).iter().zip(chunk) {
            total += (p - s.target) * (p - s.target);
        }
    }
    total / samples.len().max(1) as f64
}

#[cfg(test)]
mod tests;
