use serde::{Deserialize, Serialize};

use super::{CellGraph, OpLabel};
use crate::error::{Error, Result};

/// Fixed network skeleton around the searched cell: a 3x3 conv stem, a
/// stack of identical cells at constant width, global average pooling and a
/// dense classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub cell_repeats: usize,
    pub num_classes: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig { input_channels: 1, stem_channels: 16, cell_repeats: 3, num_classes: 4 }
    }
}

/// Splits `total_channels` into `branch_count` near-equal parts, smaller parts first.
pub fn channel_allocation(branch_count: usize, total_channels: usize) -> Result<Vec<usize>> {
    if branch_count == 0 || total_channels < branch_count {
        return Err(Error::Infeasible(format!(
            "cannot split {total_channels} channels into {branch_count} non-empty branches"
        )));
    }
    let base = total_channels / branch_count;
    let extra = total_channels % branch_count;
    Ok((0..branch_count).map(|i| if i < branch_count - extra { base } else { base + 1 }).collect())
}

/// Output width of every node of `g` inside a cell mapping `in_channels` to
/// `out_channels`. Output-feeding nodes share the output width, larger parts
/// going to earlier nodes so widths never grow along interior edges; other
/// interior nodes take the widest of their interior successors.
pub fn vertex_channels(g: &CellGraph, in_channels: usize, out_channels: usize) -> Result<Vec<usize>> {
    let n = g.node_count();
    let out = n - 1;
    let mut ch = vec![0usize; n];
    ch[0] = in_channels;
    ch[out] = out_channels;
    if n == 2 {
        return Ok(ch);
    }
    let feeders: Vec<usize> = (1..out).filter(|&v| g.has_edge(v, out)).collect();
    let parts = channel_allocation(feeders.len(), out_channels)?;
    for (v, w) in feeders.iter().zip(parts.iter().rev()) {
        ch[*v] = *w;
    }
    for v in (1..out).rev() {
        if !g.has_edge(v, out) {
            ch[v] = g.successors(v).filter(|&s| s != out).map(|s| ch[s]).max().unwrap_or(0);
        }
        if ch[v] == 0 {
            return Err(Error::Infeasible(format!("node {v} has no channels; prune the cell first")));
        }
    }
    Ok(ch)
}

/// Exact trainable-parameter count of the standalone network for `g`:
/// conv kernels, BN scale/shift, 1x1 projections and the dense head.
pub fn param_count(g: &CellGraph, net: &MacroConfig) -> Result<usize> {
    let g = g.canonical_form();
    let c = net.stem_channels;
    let bn = |w: usize| 2 * w;
    let mut total = 9 * net.input_channels * c + bn(c);
    let ch = vertex_channels(&g, c, c)?;
    let out = g.output();
    let mut per_cell = 0;
    for v in 1..out {
        if let Some(k) = g.op(v).kernel() {
            per_cell += k * k * ch[v] * ch[v] + bn(ch[v]);
        }
        if g.has_edge(0, v) {
            per_cell += c * ch[v] + bn(ch[v]);
        }
    }
    if g.has_edge(0, out) {
        per_cell += c * c + bn(c);
    }
    total += per_cell * net.cell_repeats;
    total += c * net.num_classes + net.num_classes;
    Ok(total)
}

impl CellGraph {
    pub fn param_count(&self, net: &MacroConfig) -> Result<usize> {
        param_count(self, net)
    }

    pub fn count_ops(&self, op: OpLabel) -> usize {
        self.ops().iter().filter(|&&o| o == op).count()
    }
}
