use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CanonicalHash, CellGraph, OpLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualFilter {
    Require,
    Forbid,
}

/// Bounds and structural filters of a search space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    pub max_nodes: usize,
    pub max_edges: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_fanin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualFilter>,
}

impl Default for SearchSpaceSpec {
    fn default() -> Self {
        SearchSpaceSpec::full()
    }
}

impl SearchSpaceSpec {
    pub const DEFAULT_MAX_NODES: usize = 7;
    pub const DEFAULT_MAX_EDGES: usize = 9;

    /// The complete reference space (V <= 7, E <= 9).
    pub fn full() -> Self {
        SearchSpaceSpec {
            max_nodes: Self::DEFAULT_MAX_NODES,
            max_edges: Self::DEFAULT_MAX_EDGES,
            output_fanin: None,
            residual: None,
        }
    }

    /// Cells with exactly `i` non-input nodes feeding the output.
    pub fn fanin(i: usize) -> Self {
        SearchSpaceSpec { output_fanin: Some(i), ..Self::full() }
    }

    pub fn residual() -> Self {
        SearchSpaceSpec { residual: Some(ResidualFilter::Require), ..Self::full() }
    }

    pub fn non_residual() -> Self {
        SearchSpaceSpec { residual: Some(ResidualFilter::Forbid), ..Self::full() }
    }

    pub fn with_bounds(mut self, max_nodes: usize, max_edges: usize) -> Self {
        self.max_nodes = max_nodes;
        self.max_edges = max_edges;
        self
    }

    /// Short name such as `full`, `a2`, `full-res`, with bounds when non-default.
    pub fn name(&self) -> String {
        let mut s = match (self.output_fanin, self.residual) {
            (Some(i), None) => format!("a{i}"),
            (None, None) => "full".to_string(),
            (None, Some(ResidualFilter::Require)) => "full-res".to_string(),
            (None, Some(ResidualFilter::Forbid)) => "full-nres".to_string(),
            (Some(i), Some(ResidualFilter::Require)) => format!("a{i}-res"),
            (Some(i), Some(ResidualFilter::Forbid)) => format!("a{i}-nres"),
        };
        if self.max_nodes != Self::DEFAULT_MAX_NODES || self.max_edges != Self::DEFAULT_MAX_EDGES {
            s.push_str(&format!("@v{}e{}", self.max_nodes, self.max_edges));
        }
        s
    }

    /// Parses names produced by [`SearchSpaceSpec::name`].
    pub fn parse_name(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown search space `{s}`"));
        let (base, bounds) = match s.split_once('@') {
            Some((b, rest)) => (b, Some(rest)),
            None => (s, None),
        };
        let (head, res) = if let Some(h) = base.strip_suffix("-nres") {
            (h, Some(ResidualFilter::Forbid))
        } else if let Some(h) = base.strip_suffix("-res") {
            (h, Some(ResidualFilter::Require))
        } else {
            (base, None)
        };
        let fanin = if head == "full" {
            None
        } else {
            Some(head.strip_prefix('a').and_then(|d| d.parse().ok()).ok_or_else(bad)?)
        };
        let mut spec = SearchSpaceSpec { output_fanin: fanin, residual: res, ..Self::full() };
        if let Some(b) = bounds {
            let b = b.strip_prefix('v').ok_or_else(bad)?;
            let (v, e) = b.split_once('e').ok_or_else(bad)?;
            spec.max_nodes = v.parse().map_err(|_| bad())?;
            spec.max_edges = e.parse().map_err(|_| bad())?;
        }
        Ok(spec)
    }

    /// Structural membership of an already pruned cell.
    pub fn contains(&self, g: &CellGraph) -> bool {
        g.node_count() <= self.max_nodes
            && g.edge_count() <= self.max_edges
            && g.is_pruned()
            && self.output_fanin.is_none_or(|i| g.output_fanin() == i)
            && match self.residual {
                None => true,
                Some(ResidualFilter::Require) => g.has_residual(),
                Some(ResidualFilter::Forbid) => !g.has_residual(),
            }
    }
}

/// Streams one representative per canonical-hash class, in increasing node
/// count, then adjacency code, then op labeling order.
pub struct UniqueCells {
    spec: SearchSpaceSpec,
    nodes: usize,
    code: u32,
    topology: Option<Vec<u16>>,
    labeling: usize,
    labelings: usize,
    seen: HashSet<CanonicalHash>,
}

pub fn enumerate_unique(spec: &SearchSpaceSpec) -> UniqueCells {
    UniqueCells {
        spec: spec.clone(),
        nodes: 2,
        code: 0,
        topology: None,
        labeling: 0,
        labelings: 0,
        seen: HashSet::new(),
    }
}

impl UniqueCells {
    fn topology_from_code(n: usize, code: u32) -> Vec<u16> {
        let mut succ = vec![0u16; n];
        let mut bit = 0;
        for (i, row) in succ.iter_mut().enumerate() {
            for j in i + 1..n {
                if code & (1 << bit) != 0 {
                    *row |= 1 << j;
                }
                bit += 1;
            }
        }
        succ
    }

    fn topology_ok(&self, succ: &[u16]) -> bool {
        let n = succ.len();
        let edges: u32 = succ.iter().map(|r| r.count_ones()).sum();
        if edges as usize > self.spec.max_edges {
            return false;
        }
        let mut has_pred = 0u16;
        for r in succ {
            has_pred |= r;
        }
        let full = (1..n).all(|v| has_pred & (1 << v) != 0) && succ[..n - 1].iter().all(|&r| r != 0);
        if !full {
            return false;
        }
        let out = n - 1;
        let fanin = (1..out).filter(|&v| succ[v] & (1 << out) != 0).count();
        let residual = succ[0] & (1 << out) != 0;
        self.spec.output_fanin.is_none_or(|i| i == fanin)
            && match self.spec.residual {
                None => true,
                Some(ResidualFilter::Require) => residual,
                Some(ResidualFilter::Forbid) => !residual,
            }
    }

    /// Advances to the next topology passing the structural filters.
    fn next_topology(&mut self) -> bool {
        loop {
            if self.nodes > self.spec.max_nodes.min(super::MAX_SUPPORTED_NODES) {
                return false;
            }
            let n = self.nodes;
            let slots = n * (n - 1) / 2;
            if (self.code as u64) >= (1u64 << slots) {
                self.nodes += 1;
                self.code = 0;
                continue;
            }
            let succ = Self::topology_from_code(n, self.code);
            self.code += 1;
            if self.topology_ok(&succ) {
                self.labelings = 3usize.pow((n - 2) as u32);
                self.labeling = 0;
                self.topology = Some(succ);
                return true;
            }
        }
    }
}

impl Iterator for UniqueCells {
    type Item = CellGraph;

    fn next(&mut self) -> Option<CellGraph> {
        loop {
            if self.topology.is_none() || self.labeling >= self.labelings {
                self.topology = None;
                if !self.next_topology() {
                    return None;
                }
            }
            let succ = self.topology.as_ref().expect("topology set");
            let n = succ.len();
            let mut idx = self.labeling;
            self.labeling += 1;
            // most significant digit first so labelings run in lexicographic order
            let mut ops = vec![OpLabel::Conv3x3; n - 2];
            for slot in ops.iter_mut().rev() {
                *slot = OpLabel::ALL[idx % 3];
                idx /= 3;
            }
            let g = CellGraph { succ: succ.clone(), ops };
            if self.seen.insert(g.canonical_hash()) {
                return Some(g);
            }
        }
    }
}

/// A materialized pool of unique cells with a hash index.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    spec: SearchSpaceSpec,
    members: Vec<CellGraph>,
    hashes: Vec<CanonicalHash>,
    index: HashMap<CanonicalHash, usize>,
}

impl SearchSpace {
    pub fn build(spec: &SearchSpaceSpec) -> SearchSpace {
        SearchSpace::from_members(spec.clone(), enumerate_unique(spec).collect())
    }

    /// Wraps an explicit list of cells (duplicates by hash are dropped).
    pub fn from_members(spec: SearchSpaceSpec, cells: Vec<CellGraph>) -> SearchSpace {
        let mut members = Vec::with_capacity(cells.len());
        let mut hashes = Vec::with_capacity(cells.len());
        let mut index = HashMap::with_capacity(cells.len());
        for g in cells {
            let h = g.canonical_hash();
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(h) {
                e.insert(members.len());
                members.push(g);
                hashes.push(h);
            }
        }
        SearchSpace { spec, members, hashes, index }
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[CellGraph] {
        &self.members
    }

    pub fn hashes(&self) -> &[CanonicalHash] {
        &self.hashes
    }

    pub fn get(&self, i: usize) -> &CellGraph {
        &self.members[i]
    }

    pub fn index_of(&self, h: &CanonicalHash) -> Option<usize> {
        self.index.get(h).copied()
    }

    pub fn contains(&self, g: &CellGraph) -> bool {
        self.index.contains_key(&g.canonical_hash())
    }

    /// `n` distinct members in uniformly random order.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n > self.len() {
            return Err(Error::SpaceExhausted { requested: n, available: self.len() });
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let (head, _) = idx.partial_shuffle(rng, n);
        Ok(head.to_vec())
    }

    pub fn sample_unique<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<CellGraph>> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| self.members[i].clone()).collect())
    }
}
