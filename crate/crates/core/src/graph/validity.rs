use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::structure::{Graph, NODE_CATEGORIES};
use crate::error::{config, Result};

/// Per-category cap on weighted degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityRule {
    caps: Vec<u32>,
}

impl Default for ValidityRule {
    fn default() -> Self {
        Self { caps: vec![1, 2, 3, 4] }
    }
}

impl ValidityRule {
    pub fn new(caps: Vec<u32>) -> Result<Self> {
        if caps.len() != NODE_CATEGORIES {
            return Err(config(alloc::format!(
                "expected {NODE_CATEGORIES} degree caps, got {}",
                caps.len()
            )));
        }
        if caps.contains(&0) {
            return Err(config("degree caps must be strictly positive"));
        }
        Ok(Self { caps })
    }

    pub fn cap(&self, label: u8) -> u32 {
        self.caps[label as usize]
    }

    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    /// `weighted_degree - cap`, negative when the node has spare capacity.
    pub fn excess(&self, g: &Graph, i: usize) -> i64 {
        g.weighted_degree(i) as i64 - self.cap(g.label(i)) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub valid: bool,
    /// Nodes whose weighted degree exceeds their cap, ascending.
    pub violations: Vec<usize>,
}

pub fn check_validity(g: &Graph, rule: &ValidityRule) -> ValidityReport {
    let violations: Vec<usize> = (0..g.n()).filter(|&i| rule.excess(g, i) > 0).collect();
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// Greedy edge downgrading until every node respects its cap.
///
/// Repeatedly picks the node with the largest excess (lowest index on ties)
/// and lowers by one the label of its highest-label incident edge, preferring
/// the neighbour with the larger excess and then the lower index.
pub fn repair_validity(g: &Graph, rule: &ValidityRule) -> Graph {
    let mut g = g.clone();
    let n = g.n();
    loop {
        let mut worst: Option<(usize, i64)> = None;
        for i in 0..n {
            let e = rule.excess(&g, i);
            if e > 0 && worst.is_none_or(|(_, w)| e > w) {
                worst = Some((i, e));
            }
        }
        let Some((node, _)) = worst else {
            return g;
        };
        let mut pick: Option<(usize, u8, i64)> = None;
        for j in 0..n {
            let l = g.edge(node, j);
            if l == 0 {
                continue;
            }
            let ej = rule.excess(&g, j);
            let better = match pick {
                None => true,
                Some((_, pl, pe)) => l > pl || (l == pl && ej > pe),
            };
            if better {
                pick = Some((j, l, ej));
            }
        }
        let (j, l, _) = pick.expect("a node over its cap has an incident edge");
        g.set_edge(node, j, l - 1).expect("downgrade keeps labels in range");
    }
}
