use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{matmul_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

/// `activation(x · W + b)` with `W: [fan_in, fan_out]`, `b: [1, fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let bias = store.add_zeros(format!("{name}.b"), 1, fan_out);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let h = tape.matmul(x, w);
        let h = tape.add_bias(h, b);
        match self.activation {
            Activation::Tanh => tape.tanh(h),
            Activation::Identity => h,
        }
    }

    /// Tape-free evaluation on a `[rows, fan_in]` batch.
    pub fn eval(&self, store: &ParamStore, input: &Tensor) -> Tensor {
        let rows = input.rows();
        debug_assert_eq!(input.cols(), self.fan_in);
        let bias = store.value(self.bias).data();
        let mut out = alloc::vec![0.0; rows * self.fan_out];
        matmul_acc(
            input.data(),
            store.value(self.weight).data(),
            &mut out,
            rows,
            self.fan_in,
            self.fan_out,
        );
        // same operation order as the taped path, so both agree bit for bit
        for row in out.chunks_mut(self.fan_out) {
            for (o, b) in row.iter_mut().zip(bias) {
                *o += *b;
            }
        }
        if self.activation == Activation::Tanh {
            for v in &mut out {
                *v = crate::math::tanh(*v);
            }
        }
        Tensor::matrix(rows, self.fan_out, out).expect("shape computed above")
    }
}

/// Evaluates one dense layer outside of any training tape.
pub fn forward_dense(store: &ParamStore, layer: &Dense, input: &Tensor) -> Result<Tensor> {
    if input.cols() != layer.fan_in {
        return Err(Error::Shape {
            context: "forward_dense",
            expected: layer.fan_in,
            found: input.cols(),
        });
    }
    let mut tape = Tape::new(store);
    let x = tape.input(input.clone());
    let y = layer.forward(&mut tape, x);
    Ok(tape.value(y).clone())
}

/// Stack of dense layers: tanh on every hidden layer, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Tanh
                };
                Dense::new(store, &format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var) -> Var {
        for layer in &self.layers {
            x = layer.forward(tape, x);
        }
        x
    }

    /// Tape-free evaluation on a `[rows, input_width]` batch.
    pub fn eval(&self, store: &ParamStore, input: &Tensor) -> Tensor {
        let mut x = self.layers[0].eval(store, input);
        for layer in &self.layers[1..] {
            x = layer.eval(store, &x);
        }
        x
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

/// A batch of graphs flattened into one node table.
///
/// Node rows of all graphs are stacked; `node_graph[i]` names the graph of row
/// `i`. Each typed edge list holds directed pairs `(src, dst)` in both
/// directions, indexing the stacked rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphBatch {
    pub node_graph: Vec<usize>,
    pub num_graphs: usize,
    pub typed_edges: Vec<Vec<(usize, usize)>>,
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.node_graph.len()
    }
}

/// Sum-aggregation message passing with one weight matrix per edge type:
/// `h' = act(h·W_self + Σ_c Σ_{j ∈ N_c(i)} h_j·W_c + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePassing {
    pub self_weight: ParamId,
    pub edge_weights: Vec<ParamId>,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl MessagePassing {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        edge_types: usize,
        rng: &mut R,
    ) -> Self {
        let self_weight = store.add_glorot(format!("{name}.self"), fan_in, fan_out, rng);
        let edge_weights = (0..edge_types)
            .map(|c| store.add_glorot(format!("{name}.edge{c}"), fan_in, fan_out, rng))
            .collect();
        let bias = store.add_zeros(format!("{name}.b"), 1, fan_out);
        Self {
            self_weight,
            edge_weights,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, h: Var, batch: &GraphBatch) -> Var {
        let ws = tape.param(self.self_weight);
        let mut acc = tape.matmul(h, ws);
        let n = batch.num_nodes();
        for (w, edges) in self.edge_weights.iter().zip(&batch.typed_edges) {
            if edges.is_empty() {
                continue;
            }
            let wc = tape.param(*w);
            let projected = tape.matmul(h, wc);
            let src = edges.iter().map(|e| e.0).collect();
            let dst = edges.iter().map(|e| e.1).collect();
            let msgs = tape.gather_rows(projected, src);
            let agg = tape.segment_sum(msgs, dst, n);
            acc = tape.add(acc, agg);
        }
        let b = tape.param(self.bias);
        let acc = tape.add_bias(acc, b);
        tape.tanh(acc)
    }
}
