use rand::Rng;

use super::{CellGraph, OpLabel};
use crate::error::{Error, InvalidReason};

/// One atomic edit of a padded cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edit {
    FlipEdge(usize, usize),
    Relabel(usize, OpLabel),
}

/// Result of a mutation: the raw (unpruned, padded) child and its pruned,
/// validated form. Lineages keep the raw child so hidden structure survives.
#[derive(Debug, Clone)]
pub struct Mutant {
    pub raw: CellGraph,
    pub pruned: Result<CellGraph, InvalidReason>,
}

impl CellGraph {
    /// Embeds the cell into `nodes` nodes; the added interior nodes are
    /// disconnected and labeled by `fill`.
    pub fn pad_to(&self, nodes: usize, mut fill: impl FnMut() -> OpLabel) -> CellGraph {
        let n = self.node_count();
        if nodes <= n {
            return self.clone();
        }
        let out_old = n - 1;
        let out_new = nodes - 1;
        let remap = |v: usize| if v == out_old { out_new } else { v };
        let mut succ = vec![0u16; nodes];
        for v in 0..n {
            for s in self.successors(v) {
                succ[remap(v)] |= 1 << remap(s);
            }
        }
        let mut ops = self.ops().to_vec();
        ops.extend((n - 1..nodes - 1).map(|_| fill()));
        CellGraph::from_rows(succ, ops).expect("padding preserves upper-triangularity")
    }

    pub fn apply_edit(&self, edit: Edit) -> CellGraph {
        let mut g = self.clone();
        match edit {
            Edit::FlipEdge(a, b) => g.flip_edge(a, b),
            Edit::Relabel(v, op) => g.set_op(v, op),
        }
        g
    }
}

/// All single edits of `g`: every potential edge flip, and every relabel of
/// an interior node to a different op.
pub fn edit_neighborhood(g: &CellGraph) -> Vec<Edit> {
    let n = g.node_count();
    let mut edits = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edits.push(Edit::FlipEdge(i, j));
        }
    }
    for v in 1..n - 1 {
        for op in OpLabel::ALL {
            if op != g.op(v) {
                edits.push(Edit::Relabel(v, op));
            }
        }
    }
    edits
}

/// Pads `parent` to `max_nodes`, applies one uniformly chosen edit and
/// validates the child. Invalid children are a legal outcome.
pub fn mutate<R: Rng + ?Sized>(parent: &CellGraph, max_nodes: usize, max_edges: usize, rng: &mut R) -> Mutant {
    let padded = parent.pad_to(max_nodes, || OpLabel::ALL[rng.random_range(0..3)]);
    let edits = edit_neighborhood(&padded);
    let edit = edits[rng.random_range(0..edits.len())];
    let raw = padded.apply_edit(edit);
    let pruned = raw.validate_and_prune(max_nodes, max_edges).map_err(|e| match e {
        Error::InvalidCell { reason } => reason,
        _ => InvalidReason::Malformed,
    });
    Mutant { raw, pruned }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimal_cell_mutants_are_invalid_or_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let m = mutate(&CellGraph::minimal(), 7, 9, &mut rng);
            if let Ok(g) = m.pruned {
                assert!(g.node_count() >= 2);
                assert!(g.edge_count() >= 1);
            }
        }
    }

    #[test]
    fn relabel_keeps_topology() {
        let g = CellGraph::from_edges(3, &[(0, 1), (1, 2)], vec![OpLabel::Conv3x3]).unwrap();
        let child = g.apply_edit(Edit::Relabel(1, OpLabel::MaxPool3x3));
        let p = child.validate_and_prune(7, 9).unwrap();
        assert_eq!(p.edges(), g.edges());
        assert_eq!(p.ops(), &[OpLabel::MaxPool3x3]);
    }

    #[test]
    fn padding_is_semantically_neutral() {
        let g = CellGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], vec![OpLabel::Conv1x1; 2]).unwrap();
        let padded = g.pad_to(7, || OpLabel::MaxPool3x3);
        assert_eq!(padded.node_count(), 7);
        assert_eq!(padded.validate_and_prune(7, 9).unwrap(), g);
    }

    #[test]
    fn neighborhood_size() {
        let g = CellGraph::minimal().pad_to(7, || OpLabel::Conv3x3);
        assert_eq!(edit_neighborhood(&g).len(), 21 + 5 * 2);
    }
}
