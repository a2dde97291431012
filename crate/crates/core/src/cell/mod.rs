//! Cell-graph search space.
//!
//! A cell is a DAG whose node 0 is the input, whose last node is the output,
//! and whose interior nodes each carry one [`OpLabel`]. Adjacency is stored
//! as one successor bitmask per node, which keeps the matrix strictly
//! upper-triangular by construction.

mod channels;
mod hash;
mod mutate;
mod space;

pub use channels::{channel_allocation, param_count, vertex_channels, MacroConfig};
pub use hash::CanonicalHash;
pub use mutate::{edit_neighborhood, mutate, Edit, Mutant};
pub use space::{
    enumerate_unique, ResidualFilter, SearchSpace, SearchSpaceSpec, UniqueCells,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, InvalidReason, Result};

/// Largest node count the bitmask representation supports.
pub const MAX_SUPPORTED_NODES: usize = 16;

/// Operation applied at an interior node. Convolutions imply BN + ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpLabel {
    #[serde(rename = "conv3x3")]
    Conv3x3,
    #[serde(rename = "conv1x1")]
    Conv1x1,
    #[serde(rename = "maxpool3x3")]
    MaxPool3x3,
}

impl OpLabel {
    pub const ALL: [OpLabel; 3] = [OpLabel::Conv3x3, OpLabel::Conv1x1, OpLabel::MaxPool3x3];

    pub fn name(self) -> &'static str {
        match self {
            OpLabel::Conv3x3 => "conv3x3",
            OpLabel::Conv1x1 => "conv1x1",
            OpLabel::MaxPool3x3 => "maxpool3x3",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            OpLabel::Conv3x3 => 0,
            OpLabel::Conv1x1 => 1,
            OpLabel::MaxPool3x3 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        OpLabel::ALL.get(code as usize).copied()
    }

    /// Kernel size for convolutions, `None` for pooling.
    pub fn kernel(self) -> Option<usize> {
        match self {
            OpLabel::Conv3x3 => Some(3),
            OpLabel::Conv1x1 => Some(1),
            OpLabel::MaxPool3x3 => None,
        }
    }
}

impl fmt::Display for OpLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "conv3x3" | "conv3x3-bn-relu" => Ok(OpLabel::Conv3x3),
            "conv1x1" | "conv1x1-bn-relu" => Ok(OpLabel::Conv1x1),
            "maxpool3x3" => Ok(OpLabel::MaxPool3x3),
            _ => Err(Error::invalid(InvalidReason::Malformed)),
        }
    }
}

/// A DAG cell. `succ[i]` has bit `j` set iff there is an edge `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellGraph {
    succ: Vec<u16>,
    ops: Vec<OpLabel>,
}

impl CellGraph {
    /// Builds a cell from successor bitmasks and interior op labels.
    pub fn from_rows(succ: Vec<u16>, ops: Vec<OpLabel>) -> Result<Self> {
        let n = succ.len();
        if n < 2 || n > MAX_SUPPORTED_NODES || ops.len() != n - 2 {
            return Err(Error::invalid(InvalidReason::Malformed));
        }
        for (i, &row) in succ.iter().enumerate() {
            let allowed: u32 = ((1u32 << n) - 1) & !((1u32 << (i + 1)) - 1);
            if (row as u32) & !allowed != 0 {
                return Err(Error::invalid(InvalidReason::NotUpperTriangular));
            }
        }
        Ok(CellGraph { succ, ops })
    }

    /// Builds a cell from a dense boolean matrix.
    pub fn from_matrix(matrix: &[Vec<bool>], ops: Vec<OpLabel>) -> Result<Self> {
        let n = matrix.len();
        let mut succ = vec![0u16; n];
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(InvalidReason::Malformed));
            }
            for (j, &e) in row.iter().enumerate() {
                if e {
                    if j <= i {
                        return Err(Error::invalid(InvalidReason::NotUpperTriangular));
                    }
                    succ[i] |= 1 << j;
                }
            }
        }
        CellGraph::from_rows(succ, ops)
    }

    /// Builds a cell from an edge list.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)], ops: Vec<OpLabel>) -> Result<Self> {
        if node_count > MAX_SUPPORTED_NODES {
            return Err(Error::invalid(InvalidReason::TooManyNodes));
        }
        let mut succ = vec![0u16; node_count];
        for &(a, b) in edges {
            if a >= b || b >= node_count {
                return Err(Error::invalid(InvalidReason::NotUpperTriangular));
            }
            succ[a] |= 1 << b;
        }
        CellGraph::from_rows(succ, ops)
    }

    /// The two-node cell `input -> output`.
    pub fn minimal() -> Self {
        CellGraph { succ: vec![0b10, 0], ops: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.succ.len()
    }

    pub fn output(&self) -> usize {
        self.succ.len() - 1
    }

    pub fn interior_count(&self) -> usize {
        self.ops.len()
    }

    /// Op at node `v`; `v` must be interior.
    pub fn op(&self, v: usize) -> OpLabel {
        self.ops[v - 1]
    }

    pub fn ops(&self) -> &[OpLabel] {
        &self.ops
    }

    pub fn rows(&self) -> &[u16] {
        &self.succ
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from < to && to < self.succ.len() && self.succ[from] & (1 << to) != 0
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let row = self.succ[v];
        (v + 1..self.succ.len()).filter(move |&j| row & (1 << j) != 0)
    }

    pub fn predecessors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..v).filter(move |&i| self.succ[i] & (1 << v) != 0)
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.predecessors(v).count()
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.succ[v].count_ones() as usize
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.node_count()).flat_map(|i| self.successors(i).map(move |j| (i, j))).collect()
    }

    pub(crate) fn flip_edge(&mut self, from: usize, to: usize) {
        self.succ[from] ^= 1 << to;
    }

    pub(crate) fn set_op(&mut self, v: usize, op: OpLabel) {
        self.ops[v - 1] = op;
    }

    /// True when every interior node lies on an input-to-output path, i.e.
    /// every non-input node has a predecessor and every non-output node a successor.
    pub fn is_pruned(&self) -> bool {
        let n = self.node_count();
        (1..n).all(|v| self.in_degree(v) > 0) && (0..n - 1).all(|v| self.out_degree(v) > 0)
    }

    /// Removes nodes that are not on an input-to-output path and checks the
    /// bounds of the reference space.
    pub fn validate_and_prune(&self, max_nodes: usize, max_edges: usize) -> Result<CellGraph> {
        let n = self.node_count();
        let out = n - 1;
        let mut from_input = vec![false; n];
        from_input[0] = true;
        for v in 0..n {
            if from_input[v] {
                for s in self.successors(v) {
                    from_input[s] = true;
                }
            }
        }
        if !from_input[out] {
            return Err(Error::invalid(InvalidReason::Disconnected));
        }
        let mut to_output = vec![false; n];
        to_output[out] = true;
        for v in (0..n).rev() {
            if self.successors(v).any(|s| to_output[s]) {
                to_output[v] = true;
            }
        }
        let keep: Vec<usize> = (0..n).filter(|&v| from_input[v] && to_output[v]).collect();
        let mut new_index = vec![usize::MAX; n];
        for (k, &v) in keep.iter().enumerate() {
            new_index[v] = k;
        }
        let mut succ = vec![0u16; keep.len()];
        for (k, &v) in keep.iter().enumerate() {
            for s in self.successors(v) {
                if new_index[s] != usize::MAX {
                    succ[k] |= 1 << new_index[s];
                }
            }
        }
        let ops = keep[1..keep.len() - 1].iter().map(|&v| self.op(v)).collect();
        let pruned = CellGraph { succ, ops };
        if pruned.node_count() > max_nodes {
            return Err(Error::invalid(InvalidReason::TooManyNodes));
        }
        if pruned.edge_count() > max_edges {
            return Err(Error::invalid(InvalidReason::TooManyEdges));
        }
        Ok(pruned)
    }

    /// Number of non-input nodes with a direct edge to the output.
    pub fn output_fanin(&self) -> usize {
        let out = self.output();
        self.predecessors(out).filter(|&v| v != 0).count()
    }

    /// True iff the input is wired directly to the output.
    pub fn has_residual(&self) -> bool {
        self.has_edge(0, self.output())
    }

    pub fn canonical_hash(&self) -> CanonicalHash {
        hash::canonical_hash(self)
    }

    /// Relabels interior nodes by `perm` (`perm[old_interior] = new_interior`,
    /// both zero-based over interior nodes). Returns `None` if the relabeling
    /// breaks upper-triangularity.
    pub fn permute_interior(&self, perm: &[usize]) -> Option<CellGraph> {
        let n = self.node_count();
        let map = |v: usize| if v == 0 || v == n - 1 { v } else { perm[v - 1] + 1 };
        let mut succ = vec![0u16; n];
        let mut ops = vec![OpLabel::Conv3x3; n - 2];
        for v in 0..n {
            for s in self.successors(v) {
                let (a, b) = (map(v), map(s));
                if a >= b {
                    return None;
                }
                succ[a] |= 1 << b;
            }
            if v != 0 && v != n - 1 {
                ops[map(v) - 1] = self.op(v);
            }
        }
        Some(CellGraph { succ, ops })
    }

    fn order_key(&self) -> (Vec<u16>, Vec<OpLabel>) {
        (self.succ.clone(), self.ops.clone())
    }

    /// Canonical node ordering: the lexicographically smallest (adjacency, ops)
    /// encoding over all topological relabelings of the interior nodes.
    /// Isomorphic cells map to the identical graph, so anything keyed on node
    /// indices (shared weights, channel splits, seeds) agrees across isomorphs.
    pub fn canonical_form(&self) -> CellGraph {
        let k = self.interior_count();
        let mut best = self.clone();
        let mut best_key = best.order_key();
        let mut perm: Vec<usize> = (0..k).collect();
        for_each_permutation(&mut perm, &mut |p| {
            if let Some(g) = self.permute_interior(p) {
                let key = g.order_key();
                if key < best_key {
                    best_key = key;
                    best = g;
                }
            }
        });
        best
    }

    /// Upper-triangular bits in row-major order.
    pub fn adjacency_bits(&self) -> String {
        let n = self.node_count();
        let mut s = String::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                s.push(if self.has_edge(i, j) { '1' } else { '0' });
            }
        }
        s
    }

    pub fn ops_string(&self) -> String {
        self.ops.iter().map(|o| o.name()).collect::<Vec<_>>().join(",")
    }

    /// Parses the `ops=<list>;adj=<bits>` text encoding. A trailing
    /// `;hash=<hex>` field is accepted and checked.
    pub fn parse_encoding(s: &str) -> Result<CellGraph> {
        let malformed = || Error::invalid(InvalidReason::Malformed);
        let mut ops_field = None;
        let mut adj_field = None;
        let mut hash_field = None;
        for part in s.trim().split(';') {
            let (k, v) = part.split_once('=').ok_or_else(malformed)?;
            match k.trim() {
                "ops" => ops_field = Some(v.trim()),
                "adj" => adj_field = Some(v.trim()),
                "hash" => hash_field = Some(v.trim()),
                _ => return Err(malformed()),
            }
        }
        let ops_field = ops_field.ok_or_else(malformed)?;
        let adj_field = adj_field.ok_or_else(malformed)?;
        let ops: Vec<OpLabel> = if ops_field.is_empty() {
            Vec::new()
        } else {
            ops_field.split(',').map(str::parse).collect::<Result<_>>()?
        };
        let graph = CellGraph::from_bits(ops, adj_field)?;
        if let Some(h) = hash_field {
            let expected: CanonicalHash = h.parse()?;
            if expected != graph.canonical_hash() {
                return Err(malformed());
            }
        }
        Ok(graph)
    }

    /// Builds a cell from interior ops and the row-major upper-triangular bit string.
    pub fn from_bits(ops: Vec<OpLabel>, bits: &str) -> Result<CellGraph> {
        let n = ops.len() + 2;
        if bits.len() != n * (n - 1) / 2 {
            return Err(Error::invalid(InvalidReason::Malformed));
        }
        let mut chars = bits.chars();
        let mut succ = vec![0u16; n];
        for i in 0..n {
            for j in i + 1..n {
                match chars.next() {
                    Some('1') => succ[i] |= 1 << j,
                    Some('0') => {}
                    _ => return Err(Error::invalid(InvalidReason::Malformed)),
                }
            }
        }
        CellGraph::from_rows(succ, ops)
    }

    /// `ops=<list>;adj=<bits>` encoding without the hash.
    pub fn encoding(&self) -> String {
        format!("ops={};adj={}", self.ops_string(), self.adjacency_bits())
    }
}

impl fmt::Display for CellGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};hash={}", self.encoding(), self.canonical_hash())
    }
}

impl FromStr for CellGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellGraph::parse_encoding(s)
    }
}

/// Heap's algorithm.
pub(crate) fn for_each_permutation(items: &mut [usize], f: &mut impl FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    f(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            f(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
