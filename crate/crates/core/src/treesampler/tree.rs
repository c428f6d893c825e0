//! Shared-prefix binary trajectory tree.
//!
//! Layout for depth `d` and window start `tau`:
//!
//! ```text
//! x_0 --ODE--> ... --ODE--> root (step tau)
//!   layer 1..d-1: every node branches into two SDE children
//!   layer d:      every node gets one SDE child (the leaf)
//! leaf --ODE--> ... --ODE--> endpoint (step T)
//! ```
//!
//! which yields `2^(d-1)` leaves. Each edge into a node at layer `k` draws
//! its noise from the key `(iteration, prompt, tree, path, k)`.

use serde::Serialize;

use super::group::{GroupRollout, LeafPath};
use super::window::WindowSchedule;
use crate::error::{Error, Result};
use crate::flow::{ode_segment, sde_step, SdeConfig, TimeGrid, Transition};
use crate::nnet::VelocityModel;
use crate::rng::{NoiseKey, NoiseStream};

/// Which tree in the run a rollout belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TreeId {
    pub iteration: u64,
    pub prompt: u64,
    pub tree: u64,
}

impl TreeId {
    pub fn key(&self, path: u64, layer: usize) -> NoiseKey {
        NoiseKey {
            iteration: self.iteration,
            prompt: self.prompt,
            tree: self.tree,
            path,
            layer: layer as u64,
        }
    }

    pub fn initial_key(&self) -> NoiseKey {
        NoiseKey::initial(self.iteration, self.prompt, self.tree)
    }
}

/// Branch bits of the node at `layer` on the way to leaf `leaf`.
pub fn path_at_layer(leaf: usize, layer: usize, depth: usize) -> u64 {
    let branch_layers = depth - 1;
    let k = layer.min(branch_layers);
    (leaf as u64) >> (branch_layers - k)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TreeNode {
    pub layer: usize,
    pub state: Vec<f64>,
    pub parent: Option<usize>,
    pub path: u64,
    pub noise: Option<Vec<f64>>,
    pub logprob_old: Option<f64>,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryTree {
    pub class: usize,
    pub id: TreeId,
    pub tau: usize,
    pub depth: usize,
    pub grid: TimeGrid,
    pub sde: SdeConfig,
    /// States at steps `0..=tau`; the last one is the root state.
    pub prefix: Vec<Vec<f64>>,
    /// Node arena in layer order; index 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Node index of each leaf, left to right.
    pub leaves: Vec<usize>,
    /// Per-leaf ODE states at steps `tau + d + 1..=T`.
    pub suffixes: Vec<Vec<Vec<f64>>>,
}

fn tag_divergence(e: Error, layer: usize, path: u64, depth: usize) -> Error {
    match e {
        Error::Divergence(m) => Error::Divergence(format!(
            "{m} (node layer {layer}, path {path:0width$b})",
            width = layer.min(depth - 1).max(1)
        )),
        other => other,
    }
}

/// Samples one tree under the frozen old policy.
#[allow(clippy::too_many_arguments)]
pub fn rollout_tree<M: VelocityModel + ?Sized>(
    field_old: &M,
    class: usize,
    sched: &WindowSchedule,
    grid: &TimeGrid,
    cfg: &SdeConfig,
    streams: &NoiseStream,
    id: TreeId,
) -> Result<TrajectoryTree> {
    let depth = sched.depth;
    if cfg.depth != depth || grid.steps != sched.steps || sched.tau > sched.max_tau() {
        return Err(Error::Schedule(format!(
            "window (tau {}, depth {}) inconsistent with grid of {} steps / SDE depth {}",
            sched.tau, depth, grid.steps, cfg.depth
        )));
    }
    let dim = field_old.state_dim();
    let dt = grid.dt();
    let tau = sched.tau;

    let x0 = streams.normal(&id.initial_key(), dim);
    let mut prefix = vec![x0.clone()];
    prefix.extend(ode_segment(field_old, class, &x0, grid, 0, tau).map_err(|e| tag_divergence(e, 0, 0, depth))?);

    let mut nodes = vec![TreeNode {
        layer: 0,
        state: prefix[tau].clone(),
        parent: None,
        path: 0,
        noise: None,
        logprob_old: None,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for k in 1..=depth {
        let t = grid.t(tau + k - 1);
        let branches = if k < depth { 2 } else { 1 };
        let mut next = Vec::with_capacity(frontier.len() * branches);
        for &p in &frontier {
            for b in 0..branches as u64 {
                let path = if k < depth { (nodes[p].path << 1) | b } else { nodes[p].path };
                let eps = streams.normal(&id.key(path, k), dim);
                let out = sde_step(field_old, &nodes[p].state, t, dt, k, &eps, class, cfg)
                    .map_err(|e| tag_divergence(e, k, path, depth))?;
                let logprob = out.logprob()?;
                let idx = nodes.len();
                nodes.push(TreeNode {
                    layer: k,
                    state: out.x_next,
                    parent: Some(p),
                    path,
                    noise: Some(eps),
                    logprob_old: logprob,
                    children: Vec::new(),
                });
                nodes[p].children.push(idx);
                next.push(idx);
            }
        }
        frontier = next;
    }

    let leaves = frontier;
    let suffixes = leaves
        .iter()
        .map(|&l| {
            ode_segment(field_old, class, &nodes[l].state, grid, tau + depth, grid.steps)
                .map_err(|e| tag_divergence(e, depth, nodes[l].path, depth))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrajectoryTree {
        class,
        id,
        tau,
        depth,
        grid: grid.clone(),
        sde: *cfg,
        prefix,
        nodes,
        leaves,
        suffixes,
    })
}

impl TrajectoryTree {
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn nodes_at_layer(&self, layer: usize) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(move |n| n.layer == layer)
    }

    fn check_leaf(&self, i: usize) -> Result<()> {
        if i >= self.leaves.len() {
            return Err(Error::Leaf {
                index: i,
                leaves: self.leaves.len(),
            });
        }
        Ok(())
    }

    /// Node indices from the root to leaf `i`, root first.
    pub fn leaf_lineage(&self, i: usize) -> Result<Vec<usize>> {
        self.check_leaf(i)?;
        let mut chain = vec![self.leaves[i]];
        while let Some(p) = self.nodes[*chain.last().unwrap_or(&0)].parent {
            chain.push(p);
        }
        chain.reverse();
        Ok(chain)
    }

    /// The `d` window transitions of leaf `i`, root first.
    pub fn leaf_transitions(&self, i: usize) -> Result<Vec<Transition>> {
        let chain = self.leaf_lineage(i)?;
        Ok(chain
            .windows(2)
            .map(|w| {
                let (from, to) = (&self.nodes[w[0]], &self.nodes[w[1]]);
                Transition {
                    x_from: from.state.clone(),
                    x_to: to.state.clone(),
                    t: self.grid.t(self.tau + to.layer - 1),
                    dt: self.grid.dt(),
                    layer_k: to.layer,
                    noise: to.noise.clone(),
                    logprob_old: to.logprob_old,
                }
            })
            .collect())
    }

    /// All `T + 1` states visited by leaf `i`.
    pub fn leaf_states(&self, i: usize) -> Result<Vec<Vec<f64>>> {
        let chain = self.leaf_lineage(i)?;
        let mut states = self.prefix.clone();
        states.extend(chain[1..].iter().map(|&n| self.nodes[n].state.clone()));
        states.extend(self.suffixes[i].iter().cloned());
        Ok(states)
    }

    pub fn leaf_endpoint(&self, i: usize) -> Result<Vec<f64>> {
        self.check_leaf(i)?;
        Ok(self.suffixes[i]
            .last()
            .cloned()
            .unwrap_or_else(|| self.nodes[self.leaves[i]].state.clone()))
    }

    pub fn nfe(&self) -> Result<u64> {
        super::nfe::nfe_exact(self.grid.steps, self.tau, self.depth)
    }

    pub fn into_group(self) -> Result<GroupRollout> {
        let leaves = (0..self.num_leaves())
            .map(|i| {
                Ok(LeafPath {
                    transitions: self.leaf_transitions(i)?,
                    endpoint: self.leaf_endpoint(i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupRollout {
            class: self.class,
            sde: self.sde,
            nfe: self.nfe()?,
            leaves,
            tree: Some(self),
        })
    }

    /// Debug view: one entry per node with its layer, path bits and ledger.
    pub fn dump_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct NodeDump<'a> {
            layer: usize,
            path_bits: String,
            state: &'a [f64],
            logprob_old: Option<f64>,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            class: usize,
            tau: usize,
            depth: usize,
            leaves: usize,
            nodes: Vec<NodeDump<'a>>,
            endpoints: Vec<Vec<f64>>,
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeDump {
                layer: n.layer,
                path_bits: if n.layer == 0 {
                    String::new()
                } else {
                    format!("{:0w$b}", n.path, w = n.layer.min(self.depth - 1).max(1))
                },
                state: &n.state,
                logprob_old: n.logprob_old,
            })
            .collect();
        let endpoints = (0..self.num_leaves())
            .map(|i| self.leaf_endpoint(i))
            .collect::<Result<_>>()?;
        Ok(serde_json::to_string_pretty(&Dump {
            class: self.class,
            tau: self.tau,
            depth: self.depth,
            leaves: self.num_leaves(),
            nodes,
            endpoints,
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{MlpConfig, VelocityField};
    use crate::treesampler::nfe::CountingModel;
    use crate::treesampler::window::WrapMode;

    fn setup(depth: usize, tau: usize) -> (VelocityField, WindowSchedule, TimeGrid, SdeConfig) {
        let f = VelocityField::new_random(
            MlpConfig {
                hidden_dims: vec![16],
                ..MlpConfig::default()
            },
            3,
        )
        .unwrap();
        let mut s = WindowSchedule::new(25, depth, 1, 1, WrapMode::Cycle).unwrap();
        s.tau = tau;
        let g = TimeGrid::new(25, 1e-3).unwrap();
        let c = SdeConfig {
            depth,
            ..SdeConfig::default()
        };
        (f, s, g, c)
    }

    fn id() -> TreeId {
        TreeId {
            iteration: 2,
            prompt: 1,
            tree: 0,
        }
    }

    #[test]
    fn depth_four_has_eight_leaves() {
        let (f, s, g, c) = setup(4, 10);
        let tree = rollout_tree(&f, 1, &s, &g, &c, &NoiseStream::new(0), id()).unwrap();
        assert_eq!(tree.num_leaves(), 8);
        for k in 0..4 {
            assert_eq!(tree.nodes_at_layer(k).count(), 1 << k);
        }
        assert_eq!(tree.nodes_at_layer(4).count(), 8);
        for n in &tree.nodes {
            let want = match n.layer {
                0..=2 => 2,
                3 => 1,
                _ => 0,
            };
            assert_eq!(n.children.len(), want);
        }
        for i in 0..8 {
            let tr = tree.leaf_transitions(i).unwrap();
            assert_eq!(tr.len(), 4);
            assert!(tr.iter().all(|t| t.noise.is_some() && t.logprob_old.is_some()));
            assert_eq!(tree.leaf_states(i).unwrap().len(), 26);
        }
        assert!(matches!(tree.leaf_transitions(8), Err(Error::Leaf { .. })));
    }

    #[test]
    fn depth_one_is_single_step() {
        let (f, s, g, c) = setup(1, 5);
        let tree = rollout_tree(&f, 0, &s, &g, &c, &NoiseStream::new(0), id()).unwrap();
        assert_eq!(tree.num_leaves(), 1);
        assert_eq!(tree.leaf_transitions(0).unwrap().len(), 1);
    }

    #[test]
    fn siblings_share_parent_and_diverge() {
        let (f, s, g, c) = setup(4, 3);
        let tree = rollout_tree(&f, 2, &s, &g, &c, &NoiseStream::new(1), id()).unwrap();
        let a = tree.leaf_transitions(0).unwrap();
        let b = tree.leaf_transitions(1).unwrap();
        // leaves 0 and 1 split only at layer 3
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_ne!(a[2].x_to, b[2].x_to);
        assert_eq!(a[2].x_from, b[2].x_from);
        // first and last leaf split at layer 1
        let z = tree.leaf_transitions(7).unwrap();
        assert_eq!(a[0].x_from, z[0].x_from);
        assert_ne!(a[0].x_to, z[0].x_to);
    }

    #[test]
    fn evaluation_count_matches_accounting() {
        for (d, tau) in [(1, 0), (2, 7), (4, 0), (4, 10), (4, 21), (3, 22)] {
            let (f, s, g, c) = setup(d, tau);
            let counted = CountingModel::new(&f);
            let tree = rollout_tree(&counted, 0, &s, &g, &c, &NoiseStream::new(0), id()).unwrap();
            assert_eq!(counted.count(), tree.nfe().unwrap(), "d={d} tau={tau}");
        }
    }

    #[test]
    fn path_bits_follow_leaf_index() {
        assert_eq!(path_at_layer(5, 1, 4), 1);
        assert_eq!(path_at_layer(5, 2, 4), 2);
        assert_eq!(path_at_layer(5, 3, 4), 5);
        assert_eq!(path_at_layer(5, 4, 4), 5);
        assert_eq!(path_at_layer(0, 1, 1), 0);
    }

    #[test]
    fn leaf_order_matches_paths() {
        let (f, s, g, c) = setup(4, 0);
        let tree = rollout_tree(&f, 0, &s, &g, &c, &NoiseStream::new(0), id()).unwrap();
        for (i, &l) in tree.leaves.iter().enumerate() {
            assert_eq!(tree.nodes[l].path, i as u64);
        }
    }

    #[test]
    fn dump_is_valid_json() {
        let (f, s, g, c) = setup(3, 4);
        let tree = rollout_tree(&f, 0, &s, &g, &c, &NoiseStream::new(0), id()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&tree.dump_json().unwrap()).unwrap();
        assert_eq!(v["leaves"], 4);
        assert_eq!(v["nodes"].as_array().unwrap().len(), 1 + 2 + 4 + 4);
    }

    #[test]
    fn inconsistent_depth_rejected() {
        let (f, s, g, mut c) = setup(4, 0);
        c.depth = 3;
        assert!(rollout_tree(&f, 0, &s, &g, &c, &NoiseStream::new(0), id()).is_err());
    }
}
