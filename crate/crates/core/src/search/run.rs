use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::tree::{backpropagate, commit, select, NodeId, Tree, TreeNode};
use super::{sample_step_length, SearchConfig};
use crate::counters::CallCounters;
use crate::diffusion::{macro_step, LatentState};
use crate::dual::{dual_space_macro_step, DualModels};
use crate::error::{contract, Result};
use crate::graph::Graph;
use crate::noise::{child_stream, mix, NoiseStreams};
use crate::verifier::{predict_value, VerifierModel};

const STEP_TAG: u64 = 0x6b5f_7374_6570;

#[derive(Clone, Copy)]
pub struct SearchModels<'a> {
    pub dual: DualModels<'a>,
    pub verifier: &'a VerifierModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub leaf: u64,
    pub leaf_t: usize,
    pub children: Vec<u64>,
    pub ks: Vec<usize>,
    pub scores: Vec<f64>,
    /// The leaf already had children; these were added next to them.
    #[serde(default)]
    pub widened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backup {
    pub path: Vec<u64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub root_t: usize,
    pub depth_budget: usize,
    /// Selected root-to-leaf paths, as node uids.
    pub paths: Vec<Vec<u64>>,
    pub expansions: Vec<ExpansionRecord>,
    pub committed: u64,
    pub committed_k: usize,
    pub committed_q: f64,
    pub committed_n: u64,
    /// Nodes alive after the commit.
    pub live_nodes: usize,
    /// Latent steps spent while scoring children; always zero because
    /// scoring is a single verifier call.
    pub simulation_latent_steps: u64,
    /// Cumulative counters at the end of the round.
    pub counters: CallCounters,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub start_t: usize,
    /// Plain denoising steps taken before the search started.
    pub prefix_steps: usize,
    pub rounds: Vec<RoundRecord>,
    pub counters: CallCounters,
    pub simulation_latent_steps: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backups: Vec<Backup>,
}

impl SearchTrace {
    /// Latent steps implied by the recorded expansions plus the prefix.
    pub fn expansion_latent_steps(&self) -> u64 {
        let expanded: usize = self.rounds.iter().flat_map(|r| &r.expansions).flat_map(|e| &e.ks).sum();
        (expanded + self.prefix_steps) as u64
    }
}

/// A search in progress; [`run_search`] drives it to completion. Exposed so
/// callers can inspect the tree between rounds.
pub struct SearchRun<'a> {
    cfg: SearchConfig,
    models: SearchModels<'a>,
    noise: NoiseStreams,
    tree: Tree,
    d_rem: usize,
    counters: CallCounters,
    trace: SearchTrace,
}

impl<'a> SearchRun<'a> {
    /// Root at `z_T = noise(stream, 0)`, the same start as a plain rollout on
    /// `stream`.
    pub fn new(cfg: &SearchConfig, models: SearchModels<'a>, noise: NoiseStreams, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let dual = &models.dual;
        let steps = dual.schedule.steps;
        if noise.dim != dual.denoiser.d_z {
            return Err(contract(format!(
                "noise dimension {} differs from latent width {}",
                noise.dim, dual.denoiser.d_z
            )));
        }
        let mut counters = CallCounters::default();
        let mut state = LatentState::new(noise.normal(stream, 0), steps);
        let t_s = cfg.t_s.unwrap_or(steps).min(steps);
        let prefix = steps - t_s;
        if prefix > 0 {
            let noises = noise.macro_noises(stream, steps, prefix);
            state = macro_step(&state, prefix, dual.denoiser, dual.schedule, &noises)?;
            counters.latent_steps += prefix as u64;
        }
        let graph = dual.vae.decode(&state)?;
        counters.codec_calls += 1;
        let root = TreeNode {
            uid: 0,
            state,
            graph,
            k_from_parent: 0,
            score: 0.0,
            q: 0.0,
            n: 0,
            children: Vec::new(),
            stream,
        };
        Ok(Self {
            cfg: *cfg,
            models,
            noise,
            tree: Tree::new(root),
            d_rem: cfg.d_max,
            counters,
            trace: SearchTrace {
                start_t: t_s,
                prefix_steps: prefix,
                ..SearchTrace::default()
            },
        })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn depth_budget(&self) -> usize {
        self.d_rem
    }

    pub fn counters(&self) -> CallCounters {
        self.counters
    }

    pub fn trace(&self) -> &SearchTrace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.tree.root_node().t() == 0
    }

    fn backup(&mut self, path: &[NodeId], value: f64) {
        backpropagate(&mut self.tree, path, value);
        if self.cfg.record_backups {
            let path = path.iter().map(|&id| self.tree.node(id).uid).collect();
            self.trace.backups.push(Backup { path, value });
        }
    }

    /// Adds up to `K` children under `leaf`, each scored once by the
    /// verifier. Child 0 continues the leaf's noise stream.
    pub fn expand(&mut self, leaf: NodeId, depth: usize) -> Result<ExpansionRecord> {
        if !self.tree.node(leaf).children.is_empty() {
            return Err(contract("cannot expand a node that already has children"));
        }
        self.add_children(leaf, depth)
    }

    /// Adds `K` more children under a node that already has some; child
    /// indices, and with them the noise streams, continue after the
    /// existing ones.
    pub fn widen(&mut self, node: NodeId, depth: usize) -> Result<ExpansionRecord> {
        self.add_children(node, depth)
    }

    fn add_children(&mut self, leaf: NodeId, depth: usize) -> Result<ExpansionRecord> {
        let node = self.tree.node(leaf);
        let t = node.t();
        if t == 0 {
            return Err(contract("cannot expand a terminal node"));
        }
        let first = node.children.len();
        let parent_state = node.state.clone();
        let parent_stream = node.stream;
        let d_eff = if self.cfg.depth_aware_steps {
            self.d_rem.saturating_sub(depth).max(1)
        } else {
            self.d_rem
        };
        let mut record = ExpansionRecord {
            leaf: node.uid,
            leaf_t: t,
            children: Vec::with_capacity(self.cfg.k),
            ks: Vec::with_capacity(self.cfg.k),
            scores: Vec::with_capacity(self.cfg.k),
            widened: first > 0,
        };
        for i in first..first + self.cfg.k {
            let stream = if i == 0 {
                parent_stream
            } else {
                child_stream(parent_stream, mix(&[i as u64, t as u64]))
            };
            let mut rng = self.noise.rng(stream, mix(&[STEP_TAG, t as u64]));
            let k = sample_step_length(t, d_eff, self.cfg.sigma_k, &mut rng);
            let noises = self.noise.macro_noises(stream, t, k);
            let out = dual_space_macro_step(&parent_state, k, &self.cfg.guidance, &self.models.dual, &noises)?;
            self.counters += out.counters;

            let before = self.counters.latent_steps;
            let score = predict_value(self.models.verifier, &out.state, &out.graph);
            self.counters.verifier_calls += 1;
            self.trace.simulation_latent_steps += self.counters.latent_steps - before;
            if !score.is_finite() {
                return Err(crate::Error::NonFinite(format!(
                    "verifier score at t = {}",
                    out.state.t
                )));
            }

            let child = TreeNode {
                uid: 0,
                state: out.state,
                graph: out.graph,
                k_from_parent: k,
                score,
                q: score,
                n: 1,
                children: Vec::new(),
                stream,
            };
            let id = self.tree.add_child(leaf, child);
            let uid = self.tree.node(id).uid;
            if self.cfg.record_backups {
                self.trace.backups.push(Backup {
                    path: alloc::vec![uid],
                    value: score,
                });
            }
            record.children.push(uid);
            record.ks.push(k);
            record.scores.push(score);
        }
        Ok(record)
    }

    /// `N_r` select/expand/backprop iterations followed by one commit.
    pub fn step_round(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(contract("search already reached t = 0"));
        }
        let root_t = self.tree.root_node().t();
        let mut paths = Vec::with_capacity(self.cfg.n_r);
        let mut expansions = Vec::new();
        let sim_before = self.trace.simulation_latent_steps;
        for _ in 0..self.cfg.n_r {
            let path = select(&self.tree, self.cfg.selection, self.cfg.c_ucb);
            paths.push(path.iter().map(|&id| self.tree.node(id).uid).collect());
            let leaf = *path.last().expect("select returns a nonempty path");
            if self.tree.node(leaf).t() == 0 {
                if !self.cfg.widen_on_terminal {
                    let value = self.tree.node(leaf).score;
                    self.backup(&path, value);
                    continue;
                }
                // the root is never terminal here, so the leaf has a parent
                let parent_path = &path[..path.len() - 1];
                let parent = *parent_path.last().expect("terminal leaf below the root");
                let record = self.widen(parent, parent_path.len() - 1)?;
                for &score in &record.scores {
                    self.backup(parent_path, score);
                }
                expansions.push(record);
                continue;
            }
            let record = self.expand(leaf, path.len() - 1)?;
            for &score in &record.scores {
                self.backup(&path, score);
            }
            expansions.push(record);
        }
        commit(&mut self.tree, self.cfg.m)?;
        self.d_rem = (self.d_rem - 1).max(1);
        let root = self.tree.root_node();
        debug_assert!(root.t() < root_t);
        let record = RoundRecord {
            round: self.trace.rounds.len(),
            root_t,
            depth_budget: self.d_rem,
            paths,
            expansions,
            committed: root.uid,
            committed_k: root.k_from_parent,
            committed_q: root.q,
            committed_n: root.n,
            live_nodes: self.tree.live_nodes(),
            simulation_latent_steps: self.trace.simulation_latent_steps - sim_before,
            counters: self.counters,
        };
        self.trace.rounds.push(record);
        Ok(())
    }

    /// The structure decoded from the committed `z_0`, and the trace.
    pub fn finish(mut self) -> Result<(Graph, SearchTrace)> {
        if !self.is_done() {
            return Err(contract("search has not reached t = 0"));
        }
        self.trace.counters = self.counters;
        let graph = self.tree.root_node().graph.clone();
        Ok((graph, self.trace))
    }
}

/// Runs rounds until the committed root reaches `t = 0`.
pub fn run_search(
    cfg: &SearchConfig,
    models: SearchModels<'_>,
    noise: NoiseStreams,
    stream: u64,
) -> Result<(Graph, SearchTrace)> {
    let mut run = SearchRun::new(cfg, models, noise, stream)?;
    while !run.is_done() {
        run.step_round()?;
    }
    run.finish()
}
