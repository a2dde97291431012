use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use xxhash_rust::xxh3::xxh3_128;

use super::CellGraph;
use crate::error::{Error, InvalidReason, Result};

/// 128-bit isomorphism-invariant digest of a cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalHash(pub u128);

impl fmt::Display for CanonicalHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for CanonicalHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalHash({self})")
    }
}

impl FromStr for CanonicalHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 32 {
            return Err(Error::invalid(InvalidReason::Malformed));
        }
        u128::from_str_radix(s, 16)
            .map(CanonicalHash)
            .map_err(|_| Error::invalid(InvalidReason::Malformed))
    }
}

impl Serialize for CanonicalHash {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CanonicalHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const INPUT_CODE: u8 = 0xfe;
const OUTPUT_CODE: u8 = 0xff;

/// Iterated neighborhood hashing. Each node starts from (op, in-degree,
/// out-degree) and is refined `node_count` times from the sorted hashes of
/// its predecessors and successors.
pub(super) fn canonical_hash(g: &CellGraph) -> CanonicalHash {
    let n = g.node_count();
    let out = n - 1;
    let mut labels: Vec<u128> = (0..n)
        .map(|v| {
            let code = if v == 0 {
                INPUT_CODE
            } else if v == out {
                OUTPUT_CODE
            } else {
                g.op(v).code()
            };
            xxh3_128(&[code, g.in_degree(v) as u8, g.out_degree(v) as u8])
        })
        .collect();

    let preds: Vec<Vec<usize>> = (0..n).map(|v| g.predecessors(v).collect()).collect();
    let succs: Vec<Vec<usize>> = (0..n).map(|v| g.successors(v).collect()).collect();
    let mut buf = Vec::with_capacity(16 * (2 * n + 1) + 2);
    let mut scratch = Vec::with_capacity(n);
    let mut next = vec![0u128; n];
    for _ in 0..n {
        for v in 0..n {
            buf.clear();
            scratch.clear();
            scratch.extend(preds[v].iter().map(|&p| labels[p]));
            scratch.sort_unstable();
            for h in &scratch {
                buf.extend_from_slice(&h.to_le_bytes());
            }
            buf.push(b'|');
            scratch.clear();
            scratch.extend(succs[v].iter().map(|&s| labels[s]));
            scratch.sort_unstable();
            for h in &scratch {
                buf.extend_from_slice(&h.to_le_bytes());
            }
            buf.push(b'|');
            buf.extend_from_slice(&labels[v].to_le_bytes());
            next[v] = xxh3_128(&buf);
        }
        std::mem::swap(&mut labels, &mut next);
    }
    labels.sort_unstable();
    buf.clear();
    for h in &labels {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    CanonicalHash(xxh3_128(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::OpLabel;

    #[test]
    fn relabeled_interior_hashes_equal() {
        let a = CellGraph::from_edges(
            5,
            &[(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (1, 4)],
            vec![OpLabel::Conv3x3, OpLabel::Conv1x1, OpLabel::MaxPool3x3],
        )
        .unwrap();
        // swap nodes 1 and 2
        let b = a.permute_interior(&[1, 0, 2]).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.canonical_hash(), b.canonical_hash());
    }

    #[test]
    fn op_change_changes_hash() {
        let a = CellGraph::from_edges(3, &[(0, 1), (1, 2)], vec![OpLabel::Conv3x3]).unwrap();
        let b = CellGraph::from_edges(3, &[(0, 1), (1, 2)], vec![OpLabel::Conv1x1]).unwrap();
        assert_ne!(a.canonical_hash(), b.canonical_hash());
    }

    #[test]
    fn hex_round_trip() {
        let h = CellGraph::minimal().canonical_hash();
        let s = h.to_string();
        assert_eq!(s.len(), 32);
        assert_eq!(s.parse::<CanonicalHash>().unwrap(), h);
        assert!("xyz".parse::<CanonicalHash>().is_err());
    }
}
