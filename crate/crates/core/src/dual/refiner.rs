use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::time_embedding;
use crate::graph::{repair_validity, Graph, ValidityRule, EDGE_CATEGORIES, NODE_CATEGORIES};
use crate::nn::{Activation, Dense, GraphBatch, MessagePassing, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub hidden: usize,
    pub rounds: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { hidden: 32, rounds: 2 }
    }
}

/// Message-passing model mapping a structure at time `t` to node and edge
/// logits for the next, less noisy structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRefiner {
    pub store: ParamStore,
    pub net: RefinerNet,
}

/// Layer layout of the refiner; parameters live in the owning store.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerNet {
    pub embed: Dense,
    pub layers: Vec<MessagePassing>,
    pub node_head: Dense,
    pub pair_hidden: Dense,
    pub pair_out: Dense,
    pub steps: usize,
}

/// Logits of one refiner application. `edges` follows the `(i, j)`, `i < j`,
/// row-major pair order of the input graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerLogits {
    pub nodes: Vec<[f64; NODE_CATEGORIES]>,
    pub edges: Vec<[f64; EDGE_CATEGORIES]>,
}

/// Stacked inputs for a batch of structures.
pub struct RefinerInputs {
    node_features: Tensor,
    batch: GraphBatch,
    pair_left: Vec<usize>,
    pair_right: Vec<usize>,
    pair_edges: Tensor,
}

impl RefinerInputs {
    pub fn new(graphs: &[(&Graph, usize)], steps: usize) -> Self {
        let mut feats = Vec::new();
        let mut node_graph = Vec::new();
        let mut typed = vec![Vec::new(); EDGE_CATEGORIES - 1];
        let (mut left, mut right, mut pe) = (Vec::new(), Vec::new(), Vec::new());
        let mut offset = 0;
        for (gi, (g, t)) in graphs.iter().enumerate() {
            let temb = time_embedding(*t, steps);
            for i in 0..g.n() {
                let mut row = [0.0; NODE_CATEGORIES];
                row[g.label(i) as usize] = 1.0;
                feats.extend_from_slice(&row);
                feats.extend_from_slice(&temb);
                node_graph.push(gi);
            }
            for i in 0..g.n() {
                for j in i + 1..g.n() {
                    let l = g.edge(i, j) as usize;
                    if l > 0 {
                        typed[l - 1].push((offset + i, offset + j));
                        typed[l - 1].push((offset + j, offset + i));
                    }
                    left.push(offset + i);
                    right.push(offset + j);
                    let mut row = [0.0; EDGE_CATEGORIES];
                    row[l] = 1.0;
                    pe.extend_from_slice(&row);
                }
            }
            offset += g.n();
        }
        let pairs = left.len();
        Self {
            node_features: Tensor::matrix(offset, NODE_CATEGORIES + 3, feats).expect("node features"),
            batch: GraphBatch {
                node_graph,
                num_graphs: graphs.len(),
                typed_edges: typed,
            },
            pair_left: left,
            pair_right: right,
            pair_edges: Tensor::matrix(pairs, EDGE_CATEGORIES, pe).expect("pair features"),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.batch.num_nodes()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_left.len()
    }
}

impl DiscreteRefiner {
    pub fn new<R: Rng + ?Sized>(cfg: &RefinerConfig, steps: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let h = cfg.hidden;
        let embed = Dense::new(
            &mut store,
            "refiner.embed",
            NODE_CATEGORIES + 3,
            h,
            Activation::Tanh,
            rng,
        );
        let layers = (0..cfg.rounds)
            .map(|r| {
                MessagePassing::new(
                    &mut store,
                    &alloc::format!("refiner.mp{r}"),
                    h,
                    h,
                    EDGE_CATEGORIES - 1,
                    rng,
                )
            })
            .collect();
        let node_head = Dense::new(
            &mut store,
            "refiner.node",
            h,
            NODE_CATEGORIES,
            Activation::Identity,
            rng,
        );
        let pair_hidden = Dense::new(
            &mut store,
            "refiner.pair",
            2 * h + EDGE_CATEGORIES,
            h,
            Activation::Tanh,
            rng,
        );
        let pair_out = Dense::new(
            &mut store,
            "refiner.edge",
            h,
            EDGE_CATEGORIES,
            Activation::Identity,
            rng,
        );
        Self {
            store,
            net: RefinerNet {
                embed,
                layers,
                node_head,
                pair_hidden,
                pair_out,
                steps,
            },
        }
    }

    pub fn logits(&self, g: &Graph, t: usize) -> RefinerLogits {
        let inputs = RefinerInputs::new(&[(g, t)], self.net.steps);
        let mut tape = Tape::new(&self.store);
        let (nv, ev) = self.net.forward(&mut tape, &inputs);
        let nodes = tape
            .value(nv)
            .data()
            .chunks(NODE_CATEGORIES)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        let edges = tape
            .value(ev)
            .data()
            .chunks(EDGE_CATEGORIES)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        RefinerLogits { nodes, edges }
    }
}

impl RefinerNet {
    /// Records the forward pass; returns `(node logits [N, 4], edge logits [P, 3])`.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: &RefinerInputs) -> (Var, Var) {
        let x = tape.input(inputs.node_features.clone());
        let mut h = self.embed.forward(tape, x);
        for layer in &self.layers {
            h = layer.forward(tape, h, &inputs.batch);
        }
        let nodes = self.node_head.forward(tape, h);
        let hl = tape.gather_rows(h, inputs.pair_left.clone());
        let hr = tape.gather_rows(h, inputs.pair_right.clone());
        let sum = tape.add(hl, hr);
        let prod = tape.mul(hl, hr);
        let cur = tape.input(inputs.pair_edges.clone());
        let pair = tape.concat_cols(&[sum, prod, cur]);
        let ph = self.pair_hidden.forward(tape, pair);
        let edges = self.pair_out.forward(tape, ph);
        (nodes, edges)
    }
}

fn argmax<const N: usize>(v: &[f64; N]) -> usize {
    let mut best = 0;
    for i in 1..N {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding of refiner logits onto the input's node set.
pub fn decode_logits(logits: &RefinerLogits, n: usize) -> Graph {
    let labels = logits.nodes.iter().map(|r| argmax(r) as u8).collect();
    let mut g = Graph::empty(labels).expect("labels in range");
    let mut p = 0;
    for i in 0..n {
        for j in i + 1..n {
            let l = argmax(&logits.edges[p]) as u8;
            if l > 0 {
                g.set_edge(i, j, l).expect("pair in range");
            }
            p += 1;
        }
    }
    g
}

/// `m` refiner applications, each decoded by argmax and then repaired to
/// satisfy `rule`. `m = 0` returns the input untouched.
pub fn refine(g: &Graph, t: usize, m: usize, refiner: &DiscreteRefiner, rule: &ValidityRule) -> Graph {
    let mut cur = g.clone();
    for _ in 0..m {
        let logits = refiner.logits(&cur, t);
        cur = repair_validity(&decode_logits(&logits, cur.n()), rule);
    }
    cur
}

/// `L_denoise`: mean squared error of node and edge logits against one-hot
/// encodings of the teacher structures (same node count as the inputs).
pub fn refiner_loss(net: &RefinerNet, tape: &mut Tape<'_>, inputs: &RefinerInputs, targets: &[&Graph]) -> Var {
    let (nodes, edges) = net.forward(tape, inputs);
    let mut tn = Vec::with_capacity(inputs.num_nodes() * NODE_CATEGORIES);
    let mut te = Vec::with_capacity(inputs.num_pairs() * EDGE_CATEGORIES);
    for g in targets {
        for i in 0..g.n() {
            let mut row = [0.0; NODE_CATEGORIES];
            row[g.label(i) as usize] = 1.0;
            tn.extend_from_slice(&row);
        }
        for i in 0..g.n() {
            for j in i + 1..g.n() {
                let mut row = [0.0; EDGE_CATEGORIES];
                row[g.edge(i, j) as usize] = 1.0;
                te.extend_from_slice(&row);
            }
        }
    }
    let total = (tn.len() + te.len()) as f64;
    let tn = tape.input(Tensor::matrix(inputs.num_nodes(), NODE_CATEGORIES, tn).expect("node targets"));
    let dn = tape.sub(nodes, tn);
    let sn = tape.square(dn);
    let mut loss = tape.sum(sn);
    if inputs.num_pairs() > 0 {
        let te = tape.input(Tensor::matrix(inputs.num_pairs(), EDGE_CATEGORIES, te).expect("edge targets"));
        let de = tape.sub(edges, te);
        let se = tape.square(de);
        let se = tape.sum(se);
        loss = tape.add(loss, se);
    }
    tape.scale(loss, 1.0 / total)
}
