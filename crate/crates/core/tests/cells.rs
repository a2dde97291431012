mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsnas::cell::{
    channel_allocation, edit_neighborhood, enumerate_unique, mutate, vertex_channels, CellGraph, OpLabel, SearchSpaceSpec,
};

#[test]
fn enumeration_matches_isomorphism_oracle() {
    for v in 2..=5 {
        let classes = common::oracle_classes(v, 9);
        for hashes in classes.values() {
            assert_eq!(hashes.len(), 1, "isomorphic cells hashed differently at V<={v}");
        }
        let distinct: HashSet<_> = classes.values().flatten().collect();
        assert_eq!(distinct.len(), classes.len(), "hash collision between classes at V<={v}");
        let listed: Vec<CellGraph> = enumerate_unique(&SearchSpaceSpec::full().with_bounds(v, 9)).collect();
        assert_eq!(listed.len(), classes.len(), "V<={v}");
        let listed_hashes: HashSet<_> = listed.iter().map(CellGraph::canonical_hash).collect();
        assert_eq!(listed_hashes.len(), listed.len());
        assert!(listed_hashes.iter().all(|h| distinct.contains(h)));
    }
}

#[test]
fn small_space_counts() {
    let count = |v| enumerate_unique(&SearchSpaceSpec::full().with_bounds(v, 9)).count();
    assert_eq!(count(2), 1);
    assert_eq!(count(3), 7);
}

#[test]
fn edge_bound_filters_cells() {
    let tight: Vec<CellGraph> = enumerate_unique(&SearchSpaceSpec::full().with_bounds(5, 4)).collect();
    assert!(tight.iter().all(|g| g.edge_count() <= 4));
    assert_eq!(tight.len(), common::oracle_classes(5, 4).len());
}

#[test]
fn mutation_reaches_exactly_the_edit_neighborhood() {
    let parent = CellGraph::from_edges(
        5,
        &[(0, 1), (1, 2), (2, 4), (0, 3), (3, 4)],
        vec![OpLabel::Conv3x3, OpLabel::Conv1x1, OpLabel::MaxPool3x3],
    )
    .unwrap();
    let expected: HashSet<_> = edit_neighborhood(&parent)
        .into_iter()
        .filter_map(|e| parent.apply_edit(e).validate_and_prune(5, 9).ok())
        .map(|g| g.canonical_hash())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = HashSet::new();
    let mut invalid = 0;
    for _ in 0..20_000 {
        match mutate(&parent, 5, 9, &mut rng).pruned {
            Ok(g) => {
                seen.insert(g.canonical_hash());
            }
            Err(_) => invalid += 1,
        }
    }
    assert_eq!(seen, expected);
    assert_eq!(invalid, 0, "two disjoint paths survive any single edit");

    let chain = CellGraph::from_edges(3, &[(0, 1), (1, 2)], vec![OpLabel::Conv3x3]).unwrap();
    let broken = (0..2_000).filter(|_| mutate(&chain, 3, 9, &mut rng).pruned.is_err()).count();
    assert!(broken > 0, "removing a bridge edge must disconnect the cell");
}

#[test]
fn reference_channel_split() {
    assert_eq!(channel_allocation(3, 128).unwrap(), vec![42, 43, 43]);
    for b in 1..=7 {
        for c in b..=512 {
            let parts = channel_allocation(b, c).unwrap();
            assert_eq!(parts.iter().sum::<usize>(), c);
            assert!(parts.iter().max().unwrap() - parts.iter().min().unwrap() <= 1);
        }
    }
    assert!(channel_allocation(4, 3).is_err());
}

fn arb_cell() -> impl Strategy<Value = CellGraph> {
    (2usize..=7).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (Just(n), proptest::collection::vec(any::<bool>(), pairs), proptest::collection::vec(0usize..3, n - 2))
    })
    .prop_map(|(n, bits, ops)| {
        let mut edges = Vec::new();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if bits[k] {
                    edges.push((i, j));
                }
                k += 1;
            }
        }
        CellGraph::from_edges(n, &edges, ops.into_iter().map(|o| OpLabel::ALL[o]).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn pruning_is_idempotent(g in arb_cell()) {
        if let Ok(p) = g.validate_and_prune(7, 21) {
            prop_assert!(p.is_pruned());
            prop_assert_eq!(p.validate_and_prune(7, 21).unwrap(), p.clone());
            prop_assert!(p.edge_count() <= g.edge_count());
        }
    }

    #[test]
    fn hash_ignores_interior_labeling(g in arb_cell(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let Ok(p) = g.validate_and_prune(7, 21) else { return Ok(()) };
        let mut perm: Vec<usize> = (0..p.interior_count()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        if let Some(q) = p.permute_interior(&perm) {
            prop_assert_eq!(q.canonical_hash(), p.canonical_hash());
            prop_assert_eq!(q.canonical_form(), p.canonical_form());
        }
    }

    #[test]
    fn encoding_round_trips(g in arb_cell()) {
        let back = CellGraph::parse_encoding(&g.encoding()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn widths_never_grow_along_edges(g in arb_cell(), c in 1usize..64) {
        let Ok(p) = g.validate_and_prune(7, 21) else { return Ok(()) };
        let Ok(w) = vertex_channels(&p, c, c) else { return Ok(()) };
        for (a, b) in p.edges() {
            if a != 0 && b != p.output() {
                prop_assert!(w[b] <= w[a], "{} -> {}: {:?}", a, b, w);
            }
        }
    }

    #[test]
    fn allocation_is_balanced(b in 1usize..=7, extra in 0usize..512) {
        let c = b + extra;
        let parts = channel_allocation(b, c).unwrap();
        prop_assert_eq!(parts.len(), b);
        prop_assert_eq!(parts.iter().sum::<usize>(), c);
        prop_assert!(parts.windows(2).all(|w| w[0] <= w[1] && w[1] - w[0] <= 1));
    }
}
