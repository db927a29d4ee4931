use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::structure::{Graph, NODE_CATEGORIES};
use super::validity::ValidityRule;
use crate::error::{config, Result};

/// Parameters of the random growth process behind the training set.
///
/// Nodes are laid out in order; node `i` tries to bond with each of its
/// `reach_probs.len()` predecessors, the `d`-th one back with probability
/// `reach_probs[d]`. A bond is a double with probability `double_prob`.
/// Bonds that would push either endpoint over its cap are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub label_probs: [f64; NODE_CATEGORIES],
    pub reach_probs: Vec<f64>,
    pub double_prob: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            min_nodes: 4,
            max_nodes: 12,
            label_probs: [0.25; NODE_CATEGORIES],
            reach_probs: vec![0.9, 0.35, 0.1],
            double_prob: 0.3,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(config("need 1 <= min_nodes <= max_nodes"));
        }
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !self.label_probs.iter().all(|&p| in_unit(p)) || self.label_probs.iter().sum::<f64>() <= 0.0 {
            return Err(config("label_probs must be nonnegative with positive mass"));
        }
        if !self.reach_probs.iter().all(|&p| in_unit(p)) || !in_unit(self.double_prob) {
            return Err(config("growth probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    fn sample_label<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let total: f64 = self.label_probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (c, &p) in self.label_probs.iter().enumerate() {
            if u < p {
                return c as u8;
            }
            u -= p;
        }
        // only reachable through rounding at the top of the range
        self.label_probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u8
    }

    pub fn sample_graph<R: Rng + ?Sized>(&self, rule: &ValidityRule, rng: &mut R) -> Graph {
        let n = rng.random_range(self.min_nodes..=self.max_nodes);
        let labels: Vec<u8> = (0..n).map(|_| self.sample_label(rng)).collect();
        let mut g = Graph::empty(labels).expect("labels drawn in range");
        let mut deg = vec![0u32; n];
        for i in 1..n {
            for (d, &p) in self.reach_probs.iter().enumerate() {
                if d + 1 > i {
                    break;
                }
                let j = i - 1 - d;
                if rng.random::<f64>() >= p {
                    continue;
                }
                let l: u8 = if rng.random::<f64>() < self.double_prob { 2 } else { 1 };
                let w = l as u32;
                if deg[i] + w <= rule.cap(g.label(i)) && deg[j] + w <= rule.cap(g.label(j)) {
                    g.set_edge(i, j, l).expect("indices in range");
                    deg[i] += w;
                    deg[j] += w;
                }
            }
        }
        g
    }
}

pub fn sample_dataset<R: Rng + ?Sized>(
    count: usize,
    growth: &GrowthConfig,
    rule: &ValidityRule,
    rng: &mut R,
) -> Vec<Graph> {
    (0..count).map(|_| growth.sample_graph(rule, rng)).collect()
}
