//! Agent graph, block partition of the global vector, interest sets and the
//! clusters they induce.
//!
//! Agents and blocks are 0-indexed everywhere in this crate. Loaders that read
//! 1-based ids (as used in the figures of the reference scenarios) normalize
//! through [`NetworkSpec::from_one_based`].

use std::collections::{BTreeSet, VecDeque};
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("block layout needs at least one block")]
    NoBlocks,
    #[error("block {0} has zero dimension")]
    ZeroDimBlock(usize),
    #[error("network needs at least one agent")]
    NoAgents,
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    InvalidAgent(usize, usize, usize),
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("expected {expected} interest sets, got {got}")]
    InterestCount { expected: usize, got: usize },
    #[error("agent {0} has an empty interest set")]
    EmptyInterest(usize),
    #[error("agent {agent} references block {block} but only {blocks} blocks exist")]
    InvalidBlockIndex { agent: usize, block: usize, blocks: usize },
    #[error("block {0} is not in any interest set")]
    EmptyCluster(usize),
    #[error("agent id {0} is not 1-based")]
    ZeroId(usize),
    #[error("network graph is disconnected")]
    NetworkDisconnected,
}

/// Partition of the global vector `w = col{w^1, ..., w^L}` into contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self, TopologyError> {
        if dims.is_empty() {
            return Err(TopologyError::NoBlocks);
        }
        if let Some(l) = dims.iter().position(|&d| d == 0) {
            return Err(TopologyError::ZeroDimBlock(l));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in &dims {
            offsets.push(total);
            total += d;
        }
        Ok(Self { dims, offsets, total })
    }

    /// `count` blocks of equal dimension `dim`.
    pub fn uniform(count: usize, dim: usize) -> Result<Self, TopologyError> {
        Self::new(vec![dim; count])
    }

    pub fn block_count(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, block: usize) -> usize {
        self.dims[block]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.offsets[block]..self.offsets[block] + self.dims[block]
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }
}

/// Undirected agent graph plus the per-agent interest sets `I_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    agent_count: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    interests: Vec<Vec<usize>>,
}

impl NetworkSpec {
    /// Builds a network from 0-based edges and interest sets. Edges are
    /// stored as ordered pairs `(min, max)`; duplicates collapse.
    pub fn new(
        agent_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        interests: Vec<Vec<usize>>,
    ) -> Result<Self, TopologyError> {
        if agent_count == 0 {
            return Err(TopologyError::NoAgents);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= agent_count || b >= agent_count {
                return Err(TopologyError::InvalidAgent(a, b, agent_count));
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        if interests.len() != agent_count {
            return Err(TopologyError::InterestCount {
                expected: agent_count,
                got: interests.len(),
            });
        }
        let interests: Vec<Vec<usize>> = interests
            .into_iter()
            .map(|mut i| {
                i.sort_unstable();
                i.dedup();
                i
            })
            .collect();
        if let Some(k) = interests.iter().position(Vec::is_empty) {
            return Err(TopologyError::EmptyInterest(k));
        }
        let mut adjacency = vec![Vec::new(); agent_count];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            agent_count,
            edges: set,
            adjacency,
            interests,
        })
    }

    /// Same as [`NetworkSpec::new`] but with 1-based agent and block ids.
    pub fn from_one_based(
        agent_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        interests: Vec<Vec<usize>>,
    ) -> Result<Self, TopologyError> {
        let dec = |x: usize| x.checked_sub(1).ok_or(TopologyError::ZeroId(x));
        let edges = edges
            .into_iter()
            .map(|(a, b)| Ok((dec(a)?, dec(b)?)))
            .collect::<Result<Vec<_>, TopologyError>>()?;
        let interests = interests
            .into_iter()
            .map(|set| set.into_iter().map(dec).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(agent_count, edges, interests)
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Neighbors of `k`, excluding `k` itself, sorted ascending.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.adjacency[k]
    }

    /// Membership in `N_k`, which always contains `k`.
    pub fn in_neighborhood(&self, k: usize, s: usize) -> bool {
        k == s || self.adjacency[k].binary_search(&s).is_ok()
    }

    pub fn interests(&self, k: usize) -> &[usize] {
        &self.interests[k]
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.agent_count).collect();
        components(self, &all).len() == 1
    }

    fn with_interests(&self, interests: Vec<Vec<usize>>) -> Self {
        Self {
            agent_count: self.agent_count,
            edges: self.edges.clone(),
            adjacency: self.adjacency.clone(),
            interests,
        }
    }
}

/// Position of the local copy `w_k^ℓ` inside the agent's stacked vector `w_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalSlot {
    pub block: usize,
    pub offset: usize,
    pub dim: usize,
}

impl LocalSlot {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// Clusters `C_ℓ = {k : ℓ ∈ I_k}` and the per-agent local layouts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    layout: BlockLayout,
    clusters: Vec<Vec<usize>>,
    local: Vec<Vec<LocalSlot>>,
    local_dims: Vec<usize>,
}

impl ClusterMap {
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn agent_count(&self) -> usize {
        self.local.len()
    }

    /// Sorted agent ids of `C_ℓ`.
    pub fn cluster(&self, block: usize) -> &[usize] {
        &self.clusters[block]
    }

    pub fn cluster_size(&self, block: usize) -> usize {
        self.clusters[block].len()
    }

    /// Index of agent `k` within the sorted cluster `C_ℓ`.
    pub fn position_in_cluster(&self, block: usize, k: usize) -> Option<usize> {
        self.clusters[block].binary_search(&k).ok()
    }

    pub fn local_layout(&self, k: usize) -> &[LocalSlot] {
        &self.local[k]
    }

    pub fn slot(&self, k: usize, block: usize) -> Option<&LocalSlot> {
        self.local[k].iter().find(|s| s.block == block)
    }

    /// `Q_k`.
    pub fn local_dim(&self, k: usize) -> usize {
        self.local_dims[k]
    }

    /// Dimension of the stacked network vector, `Σ_ℓ N_ℓ M_ℓ`.
    pub fn stacked_dim(&self) -> usize {
        (0..self.block_count())
            .map(|l| self.cluster_size(l) * self.layout.dim(l))
            .sum()
    }

    /// Restricts a global vector to the agent's local coordinates.
    pub fn restrict(&self, k: usize, global: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.local_dims[k]];
        for slot in &self.local[k] {
            out[slot.range()].copy_from_slice(&global[self.layout.range(slot.block)]);
        }
        out
    }

    /// Adds a local vector into global coordinates.
    pub fn accumulate(&self, k: usize, local: &[f64], global: &mut [f64]) {
        for slot in &self.local[k] {
            let g = self.layout.range(slot.block);
            for (dst, src) in global[g].iter_mut().zip(&local[slot.range()]) {
                *dst += src;
            }
        }
    }
}

pub fn build_clusters(net: &NetworkSpec, layout: &BlockLayout) -> Result<ClusterMap, TopologyError> {
    let blocks = layout.block_count();
    let mut clusters = vec![Vec::new(); blocks];
    let mut local = Vec::with_capacity(net.agent_count());
    let mut local_dims = Vec::with_capacity(net.agent_count());
    for k in 0..net.agent_count() {
        let mut offset = 0;
        let mut slots = Vec::with_capacity(net.interests(k).len());
        for &block in net.interests(k) {
            if block >= blocks {
                return Err(TopologyError::InvalidBlockIndex { agent: k, block, blocks });
            }
            clusters[block].push(k);
            let dim = layout.dim(block);
            slots.push(LocalSlot { block, offset, dim });
            offset += dim;
        }
        local.push(slots);
        local_dims.push(offset);
    }
    if let Some(l) = clusters.iter().position(Vec::is_empty) {
        return Err(TopologyError::EmptyCluster(l));
    }
    Ok(ClusterMap {
        layout: layout.clone(),
        clusters,
        local,
        local_dims,
    })
}

/// Connected components of the subgraph induced by `members` (sorted).
/// Components come out sorted by their smallest agent.
fn components(net: &NetworkSpec, members: &[usize]) -> Vec<Vec<usize>> {
    let inside = |a: usize| members.binary_search(&a).is_ok();
    let mut seen = vec![false; net.agent_count()];
    let mut out = Vec::new();
    for &start in members {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            for &b in net.neighbors(a) {
                if inside(b) && !seen[b] {
                    seen[b] = true;
                    comp.push(b);
                    queue.push_back(b);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Blocks whose induced cluster subgraph is disconnected. Empty means every
/// cluster is connected.
pub fn validate_connectivity(net: &NetworkSpec, cmap: &ClusterMap) -> Vec<usize> {
    (0..cmap.block_count())
        .filter(|&l| components(net, cmap.cluster(l)).len() > 1)
        .collect()
}

/// Grows every disconnected cluster into a connected superset by adding the
/// interior agents of shortest paths between components. The added agents
/// carry a zero cost on the new block.
///
/// The component holding the lowest agent id is grown first. A multi-source
/// BFS over the full graph explores neighbors in ascending id order, so among
/// equally short bridges the path through the lowest ids is chosen.
pub fn embed_clusters(
    net: &NetworkSpec,
    cmap: &ClusterMap,
) -> Result<(NetworkSpec, ClusterMap), TopologyError> {
    if !net.is_connected() {
        return Err(TopologyError::NetworkDisconnected);
    }
    let mut interests: Vec<Vec<usize>> = (0..net.agent_count()).map(|k| net.interests(k).to_vec()).collect();
    for l in validate_connectivity(net, cmap) {
        let mut members = cmap.cluster(l).to_vec();
        loop {
            let comps = components(net, &members);
            if comps.len() <= 1 {
                break;
            }
            let path = shortest_bridge(net, &comps[0], &members);
            for a in path {
                if let Err(pos) = members.binary_search(&a) {
                    members.insert(pos, a);
                    interests[a].push(l);
                }
            }
        }
    }
    let out = net.with_interests(
        interests
            .into_iter()
            .map(|mut i| {
                i.sort_unstable();
                i
            })
            .collect(),
    );
    let map = build_clusters(&out, cmap.layout())?;
    Ok((out, map))
}

/// Interior agents of a shortest path from `source` to any member outside it.
fn shortest_bridge(net: &NetworkSpec, source: &[usize], members: &[usize]) -> Vec<usize> {
    let n = net.agent_count();
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for &s in source {
        seen[s] = true;
        queue.push_back(s);
    }
    let is_target = |a: usize| members.binary_search(&a).is_ok() && source.binary_search(&a).is_err();
    while let Some(a) = queue.pop_front() {
        for &b in net.neighbors(a) {
            if seen[b] {
                continue;
            }
            seen[b] = true;
            parent[b] = a;
            if is_target(b) {
                let mut path = Vec::new();
                let mut cur = parent[b];
                while source.binary_search(&cur).is_err() {
                    path.push(cur);
                    cur = parent[cur];
                }
                return path;
            }
            queue.push_back(b);
        }
    }
    Vec::new()
}
