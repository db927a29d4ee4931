use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::diffusion::LatentState;
use crate::error::{contract, Result};
use crate::graph::Graph;
use crate::math::{ln, sqrt};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    Ucb1,
    PuctUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Creation counter; unique within a search and never reused.
    pub uid: u64,
    pub state: LatentState,
    pub graph: Graph,
    pub k_from_parent: usize,
    /// Verifier value assigned at creation.
    pub score: f64,
    pub q: f64,
    pub n: u64,
    pub children: Vec<NodeId>,
    pub stream: u64,
}

impl TreeNode {
    pub fn t(&self) -> usize {
        self.state.t
    }
}

/// Arena-backed search tree. Ids are arena indices and change on
/// [`commit`]; `uid`s do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub root: NodeId,
    /// Roots of sibling subtrees retained at the last commit.
    pub reserve: Vec<NodeId>,
    next_uid: u64,
}

impl Tree {
    /// A tree holding only `root`, whose `uid`, `q` and `n` are reset.
    pub fn new(mut root: TreeNode) -> Self {
        root.uid = 0;
        root.q = 0.0;
        root.n = 0;
        root.children.clear();
        Self {
            nodes: vec![root],
            root: 0,
            reserve: Vec::new(),
            next_uid: 1,
        }
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        &mut self.nodes[id]
    }

    pub fn root_node(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    /// Appends `child` under `parent`, assigning its uid; `q`, `n` are kept.
    pub fn add_child(&mut self, parent: NodeId, mut child: TreeNode) -> NodeId {
        child.uid = self.next_uid;
        self.next_uid += 1;
        child.children.clear();
        let id = self.nodes.len();
        self.nodes.push(child);
        self.nodes[parent].children.push(id);
        id
    }

    pub fn find_uid(&self, uid: u64) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.uid == uid)
    }

    /// Nodes reachable from the root or a reserved sibling.
    pub fn live_nodes(&self) -> usize {
        let mut count = 0;
        let mut stack: Vec<NodeId> = vec![self.root];
        stack.extend_from_slice(&self.reserve);
        while let Some(id) = stack.pop() {
            count += 1;
            stack.extend_from_slice(&self.nodes[id].children);
        }
        count
    }
}

fn exploration_score(rule: SelectionRule, c: f64, parent: &TreeNode, child: &TreeNode, siblings: usize) -> f64 {
    match rule {
        SelectionRule::Ucb1 => child.q + c * sqrt(ln(parent.n.max(1) as f64) / child.n as f64),
        SelectionRule::PuctUniform => {
            child.q + c * (1.0 / siblings as f64) * sqrt(parent.n as f64) / (1.0 + child.n as f64)
        }
    }
}

/// Index into `node.children` of the child to descend into.
pub fn select_child(tree: &Tree, id: NodeId, rule: SelectionRule, c: f64) -> Option<usize> {
    let node = tree.node(id);
    if node.children.is_empty() {
        return None;
    }
    if let Some(i) = node.children.iter().position(|&ch| tree.node(ch).n == 0) {
        return Some(i);
    }
    let k = node.children.len();
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &ch) in node.children.iter().enumerate() {
        let v = exploration_score(rule, c, node, tree.node(ch), k);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    Some(best)
}

/// Root-to-leaf path; stops at a childless node or at `t = 0`.
pub fn select(tree: &Tree, rule: SelectionRule, c: f64) -> Vec<NodeId> {
    let mut path = vec![tree.root];
    let mut cur = tree.root;
    while tree.node(cur).t() > 0 {
        match select_child(tree, cur, rule, c) {
            Some(i) => {
                cur = tree.node(cur).children[i];
                path.push(cur);
            }
            None => break,
        }
    }
    path
}

/// Running-mean update of every node on `path`.
pub fn backpropagate(tree: &mut Tree, path: &[NodeId], value: f64) {
    for &id in path {
        let node = tree.node_mut(id);
        node.n += 1;
        node.q += (value - node.q) / node.n as f64;
    }
}

/// Commit order: higher `Q`, then higher `N`, then earlier creation.
fn rank(a: &TreeNode, b: &TreeNode) -> Ordering {
    b.q.total_cmp(&a.q).then(b.n.cmp(&a.n)).then(a.uid.cmp(&b.uid))
}

/// Makes the best root child the new root, keeping its subtree and the next
/// `m − 1` ranked siblings' subtrees; everything else is dropped and the
/// arena is compacted. Returns the new root id.
pub fn commit(tree: &mut Tree, m: usize) -> Result<NodeId> {
    let root = tree.root_node();
    if root.children.is_empty() {
        return Err(contract("cannot commit from a childless root"));
    }
    let mut ranked = root.children.clone();
    ranked.sort_by(|&a, &b| rank(tree.node(a), tree.node(b)));
    let keep_siblings: Vec<NodeId> = ranked.iter().skip(1).take(m.saturating_sub(1)).copied().collect();

    let mut remap = vec![usize::MAX; tree.nodes.len()];
    let mut order = Vec::new();
    let mut stack: Vec<NodeId> = keep_siblings.iter().rev().copied().collect();
    stack.push(ranked[0]);
    while let Some(id) = stack.pop() {
        remap[id] = order.len();
        order.push(id);
        for &ch in tree.nodes[id].children.iter().rev() {
            stack.push(ch);
        }
    }
    let mut old: Vec<Option<TreeNode>> = core::mem::take(&mut tree.nodes).into_iter().map(Some).collect();
    tree.nodes = order
        .iter()
        .map(|&id| {
            let mut n = old[id].take().expect("each node moved once");
            for ch in &mut n.children {
                *ch = remap[*ch];
            }
            n
        })
        .collect();
    tree.root = remap[ranked[0]];
    tree.reserve = keep_siblings.iter().map(|&id| remap[id]).collect();
    Ok(tree.root)
}
