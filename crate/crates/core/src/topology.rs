//! Directed communication graphs and row-stochastic aggregation weights.
//!
//! An edge `j -> i` means agent `j`'s model reaches agent `i`; agent `i`
//! aggregates over its in-neighbors plus itself.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

const SPARSE_RETRIES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("a ring needs at least 2 agents, got {0}")]
    RingTooSmall(usize),
    #[error("out-degree {k} must lie in 1..={max} for {n} agents")]
    DegreeOutOfRange { n: usize, k: usize, max: usize },
    #[error("edge {from} -> {to} is invalid for {n} agents")]
    BadEdge { from: usize, to: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    out_neighbors: Vec<Vec<usize>>,
    in_neighbors: Vec<Vec<usize>>,
    /// Per agent `i`: `(j, w_ij)` sorted by `j`, covering in-neighbors and `i`.
    weights: Vec<Vec<(usize, f64)>>,
}

impl Topology {
    /// Builds a topology from out-neighbor lists with uniform self-inclusive weights.
    pub fn from_out_neighbors(out_neighbors: Vec<Vec<usize>>) -> Result<Self, TopologyError> {
        let n = out_neighbors.len();
        let mut in_neighbors = vec![Vec::new(); n];
        for (from, outs) in out_neighbors.iter().enumerate() {
            for (k, &to) in outs.iter().enumerate() {
                if to >= n || to == from || outs[..k].contains(&to) {
                    return Err(TopologyError::BadEdge { from, to, n });
                }
                in_neighbors[to].push(from);
            }
        }
        in_neighbors.iter_mut().for_each(|v| v.sort_unstable());
        let mut t = Self { n, out_neighbors, in_neighbors, weights: Vec::new() };
        t.set_uniform_weights();
        Ok(t)
    }

    /// Directed: `i -> i+1`. Undirected: `i <-> i±1`.
    pub fn ring(n: usize, directed: bool) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::RingTooSmall(n));
        }
        let outs = (0..n)
            .map(|i| {
                let next = (i + 1) % n;
                let prev = (i + n - 1) % n;
                if directed || next == prev {
                    vec![next]
                } else {
                    vec![next, prev]
                }
            })
            .collect();
        Self::from_out_neighbors(outs)
    }

    /// Each agent draws `k` distinct out-neighbors uniformly. Draws repeat
    /// until the graph is strongly connected; if that keeps failing, each
    /// agent's last edge is swapped for its ring successor.
    pub fn sparse(n: usize, k: usize, seed: u64) -> Result<Self, TopologyError> {
        if n < 2 || k == 0 || k > n - 1 {
            return Err(TopologyError::DegreeOutOfRange { n, k, max: n.saturating_sub(1) });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut outs = Vec::new();
        for _ in 0..SPARSE_RETRIES {
            outs = (0..n)
                .map(|i| {
                    sample(&mut rng, n - 1, k)
                        .into_iter()
                        .map(|j| if j >= i { j + 1 } else { j })
                        .collect::<Vec<_>>()
                })
                .collect();
            let t = Self::from_out_neighbors(outs.clone())?;
            if t.is_strongly_connected() {
                return Ok(t);
            }
        }
        for (i, o) in outs.iter_mut().enumerate() {
            let next = (i + 1) % n;
            if !o.contains(&next) {
                *o.last_mut().expect("k >= 1") = next;
            }
        }
        Self::from_out_neighbors(outs)
    }

    /// `w_ij = 1 / (indeg(i) + 1)` over in-neighbors and self.
    pub fn set_uniform_weights(&mut self) {
        self.weights = (0..self.n)
            .map(|i| {
                let w = 1.0 / (self.in_neighbors[i].len() + 1) as f64;
                let mut row: Vec<(usize, f64)> =
                    self.in_neighbors[i].iter().map(|&j| (j, w)).chain(std::iter::once((i, w))).collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
    }

    pub fn uniform_weights(mut self) -> Self {
        self.set_uniform_weights();
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[(usize, f64)] {
        &self.weights[i]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.out_neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, outs)| outs.iter().map(move |&j| (i, j)))
            .collect()
    }

    fn reaches_all(&self, adj: &[Vec<usize>]) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Every agent reaches every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        self.n <= 1 || (self.reaches_all(&self.out_neighbors) && self.reaches_all(&self.in_neighbors))
    }

    pub fn to_dump(&self) -> TopologyDump {
        TopologyDump {
            n: self.n,
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .map(|(i, row)| (i.to_string(), row.iter().map(|&(j, w)| (j.to_string(), w)).collect()))
                .collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_dump()).expect("topology dump serializes");
        std::fs::write(path, text + "\n")
    }
}

/// JSON provenance record of a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDump {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub weights: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopologySpec {
    Ring { directed: bool },
    Sparse { k: usize },
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self::Sparse { k: 3 }
    }
}

impl TopologySpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<Topology, TopologyError> {
        match *self {
            Self::Ring { directed } => Topology::ring(n, directed),
            Self::Sparse { k } => Topology::sparse(n, k, seed),
        }
    }
}
