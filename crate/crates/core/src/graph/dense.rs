use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::structure::{Graph, EDGE_CATEGORIES, NODE_CATEGORIES};
use crate::error::{contract, Error, Result};

/// Channels per node slot: one existence indicator followed by the label one-hot.
pub const NODE_CHANNELS: usize = 1 + NODE_CATEGORIES;

/// Fixed-size padding used to relax graphs of varying size into tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphLayout {
    pub max_nodes: usize,
    pub min_nodes: usize,
}

impl Default for GraphLayout {
    fn default() -> Self {
        Self {
            max_nodes: 12,
            min_nodes: 4,
        }
    }
}

impl GraphLayout {
    pub fn num_pairs(&self) -> usize {
        self.max_nodes * (self.max_nodes - 1) / 2
    }

    /// Width of the flat feature vector: node slots then upper-triangle pairs.
    pub fn feature_width(&self) -> usize {
        self.max_nodes * NODE_CHANNELS + self.num_pairs() * EDGE_CATEGORIES
    }

    /// Upper-triangle pairs `(i, j)`, `i < j`, in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_pairs());
        for i in 0..self.max_nodes {
            for j in i + 1..self.max_nodes {
                out.push((i, j));
            }
        }
        out
    }

    pub fn zeros(&self) -> DenseGraphTensor {
        DenseGraphTensor {
            max_nodes: self.max_nodes,
            nodes: vec![0.0; self.max_nodes * NODE_CHANNELS],
            edges: vec![0.0; self.max_nodes * self.max_nodes * EDGE_CATEGORIES],
        }
    }

    /// Rebuilds a tensor from a flat feature vector; each pair entry is
    /// written to both `(i, j)` and `(j, i)`.
    pub fn from_features(&self, features: &[f64]) -> Result<DenseGraphTensor> {
        if features.len() != self.feature_width() {
            return Err(Error::Shape {
                context: "GraphLayout::from_features",
                expected: self.feature_width(),
                found: features.len(),
            });
        }
        let mut x = self.zeros();
        let split = self.max_nodes * NODE_CHANNELS;
        x.nodes.copy_from_slice(&features[..split]);
        for (p, (i, j)) in self.pairs().into_iter().enumerate() {
            for c in 0..EDGE_CATEGORIES {
                let v = features[split + p * EDGE_CATEGORIES + c];
                x.set_edge_logit(i, j, c, v);
                x.set_edge_logit(j, i, c, v);
            }
        }
        Ok(x)
    }
}

/// Relaxed node and edge blocks of a padded graph.
///
/// `nodes` is `max_nodes × NODE_CHANNELS`; `edges` is `max_nodes × max_nodes ×
/// EDGE_CATEGORIES`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseGraphTensor {
    pub max_nodes: usize,
    pub nodes: Vec<f64>,
    pub edges: Vec<f64>,
}

impl DenseGraphTensor {
    pub fn node(&self, i: usize, c: usize) -> f64 {
        self.nodes[i * NODE_CHANNELS + c]
    }

    pub fn edge_logit(&self, i: usize, j: usize, c: usize) -> f64 {
        self.edges[(i * self.max_nodes + j) * EDGE_CATEGORIES + c]
    }

    pub fn set_edge_logit(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.edges[(i * self.max_nodes + j) * EDGE_CATEGORIES + c] = v;
    }

    /// Flat features for the learned models; pair entries average both
    /// orientations.
    pub fn to_features(&self) -> Vec<f64> {
        let m = self.max_nodes;
        let mut out = Vec::with_capacity(m * NODE_CHANNELS + m * (m - 1) / 2 * EDGE_CATEGORIES);
        out.extend_from_slice(&self.nodes);
        for i in 0..m {
            for j in i + 1..m {
                for c in 0..EDGE_CATEGORIES {
                    out.push(0.5 * (self.edge_logit(i, j, c) + self.edge_logit(j, i, c)));
                }
            }
        }
        out
    }

    fn check(&self, layout: &GraphLayout) -> Result<()> {
        let m = layout.max_nodes;
        if self.max_nodes != m || self.nodes.len() != m * NODE_CHANNELS || self.edges.len() != m * m * EDGE_CATEGORIES {
            return Err(contract(format!("dense tensor blocks do not match a {m}-slot layout")));
        }
        Ok(())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        // strict comparison keeps the lowest index on ties
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn encode_dense(g: &Graph, layout: &GraphLayout) -> Result<DenseGraphTensor> {
    if g.n() > layout.max_nodes {
        return Err(contract(format!(
            "graph has {} nodes, layout holds {}",
            g.n(),
            layout.max_nodes
        )));
    }
    let mut x = layout.zeros();
    for i in 0..g.n() {
        x.nodes[i * NODE_CHANNELS] = 1.0;
        x.nodes[i * NODE_CHANNELS + 1 + g.label(i) as usize] = 1.0;
        for j in 0..g.n() {
            if i != j {
                x.set_edge_logit(i, j, g.edge(i, j) as usize, 1.0);
            }
        }
    }
    Ok(x)
}

/// Argmax decoding of a relaxed tensor.
///
/// Slots with existence above 0.5 become nodes (the `min_nodes` highest slots
/// if too few qualify), labels and edges take the argmax with the lowest
/// category winning ties, edge logits are averaged over both orientations,
/// and the diagonal is ignored.
pub fn decode_dense(x: &DenseGraphTensor, layout: &GraphLayout) -> Result<Graph> {
    x.check(layout)?;
    let m = layout.max_nodes;
    let mut slots: Vec<usize> = (0..m).filter(|&i| x.node(i, 0) > 0.5).collect();
    if slots.len() < layout.min_nodes {
        let mut order: Vec<usize> = (0..m).collect();
        // stable sort: equal existence keeps slot order
        order.sort_by(|&a, &b| x.node(b, 0).total_cmp(&x.node(a, 0)));
        slots = order[..layout.min_nodes].to_vec();
        slots.sort_unstable();
    }
    let labels: Vec<u8> = slots
        .iter()
        .map(|&i| argmax((0..NODE_CATEGORIES).map(|c| x.node(i, 1 + c))) as u8)
        .collect();
    let mut g = Graph::empty(labels)?;
    for (a, &i) in slots.iter().enumerate() {
        for (b, &j) in slots.iter().enumerate().skip(a + 1) {
            let l = argmax((0..EDGE_CATEGORIES).map(|c| 0.5 * (x.edge_logit(i, j, c) + x.edge_logit(j, i, c))));
            if l > 0 {
                g.set_edge(a, b, l as u8)?;
            }
        }
    }
    Ok(g)
}
