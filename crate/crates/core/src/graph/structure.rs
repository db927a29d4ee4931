use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Number of node categories.
pub const NODE_CATEGORIES: usize = 4;
/// Edge categories: 0 = absent, 1 = single, 2 = double.
pub const EDGE_CATEGORIES: usize = 3;

/// Undirected graph with categorical node and edge labels.
///
/// The edge matrix is stored densely, symmetric, with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    node_labels: Vec<u8>,
    edges: Vec<u8>,
}

impl Graph {
    /// A graph with the given node labels and no edges.
    pub fn empty(node_labels: Vec<u8>) -> Result<Self> {
        if let Some(l) = node_labels.iter().find(|l| **l as usize >= NODE_CATEGORIES) {
            return Err(contract(alloc::format!("node label {l} out of range")));
        }
        let n = node_labels.len();
        Ok(Self {
            node_labels,
            edges: vec![0; n * n],
        })
    }

    /// Builds a graph from an edge list of `(i, j, label)` triples.
    pub fn from_edges(node_labels: Vec<u8>, edges: &[(usize, usize, u8)]) -> Result<Self> {
        let mut g = Self::empty(node_labels)?;
        for &(i, j, l) in edges {
            g.set_edge(i, j, l)?;
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.node_labels.len()
    }

    pub fn node_labels(&self) -> &[u8] {
        &self.node_labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.node_labels[i]
    }

    pub fn set_label(&mut self, i: usize, label: u8) -> Result<()> {
        if i >= self.n() || label as usize >= NODE_CATEGORIES {
            return Err(contract("set_label out of range"));
        }
        self.node_labels[i] = label;
        Ok(())
    }

    pub fn edge(&self, i: usize, j: usize) -> u8 {
        self.edges[i * self.n() + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, label: u8) -> Result<()> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(contract(alloc::format!("edge ({i}, {j}) outside a {n}-node graph")));
        }
        if i == j && label != 0 {
            return Err(contract("self loops are not allowed"));
        }
        if label as usize >= EDGE_CATEGORIES {
            return Err(contract(alloc::format!("edge label {label} out of range")));
        }
        self.edges[i * n + j] = label;
        self.edges[j * n + i] = label;
        Ok(())
    }

    /// Sum of incident edge labels (a double edge counts 2).
    pub fn weighted_degree(&self, i: usize) -> u32 {
        let n = self.n();
        self.edges[i * n..(i + 1) * n].iter().map(|&l| l as u32).sum()
    }

    /// Edges `(i, j, label)` with `i < j`, ascending.
    pub fn edge_list(&self) -> Vec<(usize, usize, u8)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let l = self.edge(i, j);
                if l != 0 {
                    out.push((i, j, l));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edge_list().len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge(i, j) != 0
    }

    /// Relabels nodes so that node `perm[i]` of the result is node `i` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(contract("permutation length"));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(contract("not a permutation"));
            }
            seen[p] = true;
        }
        let mut labels = vec![0; n];
        for i in 0..n {
            labels[perm[i]] = self.node_labels[i];
        }
        let mut g = Self::empty(labels)?;
        for (i, j, l) in self.edge_list() {
            g.set_edge(perm[i], perm[j], l)?;
        }
        Ok(g)
    }

    /// Number of unordered node triples that are pairwise adjacent.
    pub fn triangle_count(&self) -> usize {
        let n = self.n();
        let mut count = 0;
        for i in 0..n {
            for j in i + 1..n {
                if !self.has_edge(i, j) {
                    continue;
                }
                for k in j + 1..n {
                    if self.has_edge(i, k) && self.has_edge(j, k) {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// Wire form: `{n, node_labels, edges: [[i, j, label], ...]}` with `i < j` ascending.
#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    node_labels: Vec<u8>,
    edges: Vec<(usize, usize, u8)>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        GraphRepr {
            n: self.n(),
            node_labels: self.node_labels.clone(),
            edges: self.edge_list(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = GraphRepr::deserialize(d)?;
        if repr.n != repr.node_labels.len() {
            return Err(D::Error::custom("n does not match node_labels length"));
        }
        for &(i, j, _) in &repr.edges {
            if i >= j {
                return Err(D::Error::custom("edges must be listed with i < j"));
            }
        }
        Graph::from_edges(repr.node_labels, &repr.edges).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_edge_is_symmetric() {
        let mut g = Graph::empty(vec![0, 1, 2]).unwrap();
        g.set_edge(0, 2, 2).unwrap();
        assert_eq!(g.edge(2, 0), 2);
        assert_eq!(g.weighted_degree(0), 2);
        assert_eq!(g.edge_list(), vec![(0, 2, 2)]);
    }

    #[test]
    fn rejects_out_of_range_labels_and_loops() {
        assert!(Graph::empty(vec![4]).is_err());
        let mut g = Graph::empty(vec![0, 0]).unwrap();
        assert!(g.set_edge(1, 1, 1).is_err());
        assert!(g.set_edge(0, 1, 3).is_err());
        assert!(g.set_edge(0, 2, 1).is_err());
    }

    #[test]
    fn triangles_of_k4() {
        let edges: Vec<_> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j, 1u8))).collect();
        let g = Graph::from_edges(vec![3; 4], &edges).unwrap();
        assert_eq!(g.triangle_count(), 4);
    }

    #[test]
    fn permutation_preserves_structure() {
        let g = Graph::from_edges(vec![0, 1, 2, 3], &[(0, 1, 1), (1, 2, 2), (2, 3, 1)]).unwrap();
        let p = g.permuted(&[3, 2, 1, 0]).unwrap();
        assert_eq!(p.node_labels(), &[3, 2, 1, 0]);
        assert_eq!(p.edge(3, 2), 1);
        assert_eq!(p.edge(2, 1), 2);
        assert_eq!(p.triangle_count(), g.triangle_count());
    }
}
