use std::fmt::Write as _;

use proptest::prelude::*;

use shrewd_core::hashing::{hamming, HashCode, HashIndex};
use shrewd_core::metrics::{ahp_at_k, average_precision, hp_at_k, hp_curve_from_relevance};
use shrewd_core::{NodeId, Taxonomy};

/// Random rooted tree on `n` nodes: node `i > 0` hangs under a random earlier node.
fn tree_strategy() -> impl Strategy<Value = Taxonomy> {
    (2usize..40)
        .prop_flat_map(|n| proptest::collection::vec(any::<prop::sample::Index>(), n - 1))
        .prop_map(|parents| {
            let mut text = String::new();
            for (i, p) in parents.iter().enumerate() {
                writeln!(text, "n{} n{}", p.index(i + 1), i + 1).unwrap();
            }
            Taxonomy::parse(&text).unwrap()
        })
}

fn code_strategy(bits: usize) -> impl Strategy<Value = HashCode> {
    proptest::collection::vec(any::<bool>(), bits).prop_map(|b| HashCode::from_bools(&b))
}

proptest! {
    #[test]
    fn semantic_distance_is_an_ultrametric(t in tree_strategy()) {
        let leaves = t.leaves().to_vec();
        let d = t.distance_matrix(&leaves).unwrap();
        for i in 0..leaves.len() {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..leaves.len() {
                let v = d.get(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, d.get(j, i));
                if i != j {
                    prop_assert!(v > 0.0);
                }
                for k in 0..leaves.len() {
                    prop_assert!(d.get(i, k) <= v.max(d.get(j, k)) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn lca_is_the_deepest_common_ancestor(t in tree_strategy()) {
        let ancestors = |mut n: NodeId| {
            let mut out = vec![n];
            while let Some(p) = t.node(n).unwrap().parent {
                out.push(p);
                n = p;
            }
            out
        };
        let n = t.len() as NodeId;
        for a in 0..n {
            let aa = ancestors(a);
            for b in 0..n {
                let common = ancestors(b).into_iter().filter(|x| aa.contains(x));
                let deepest = common.max_by_key(|&x| t.depth(x).unwrap()).unwrap();
                prop_assert_eq!(t.lca(a, b).unwrap(), deepest);
            }
        }
    }

    #[test]
    fn edge_list_roundtrip(t in tree_strategy()) {
        let text = t.to_edge_list();
        let back = Taxonomy::parse(&text).unwrap();
        prop_assert_eq!(back.to_edge_list(), text);
        prop_assert_eq!(back.leaf_labels().keys().collect::<Vec<_>>(), t.leaf_labels().keys().collect::<Vec<_>>());
        prop_assert_eq!(back.height(), t.height());
        for (a, &ia) in t.leaf_labels() {
            for (b, &ib) in t.leaf_labels() {
                let ja = back.leaf_id(a).unwrap();
                let jb = back.leaf_id(b).unwrap();
                prop_assert_eq!(t.semantic_distance(ia, ib).unwrap(), back.semantic_distance(ja, jb).unwrap());
            }
        }
    }

    #[test]
    fn hamming_is_a_metric(bits in 1usize..200, seed in any::<u64>()) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s >> 33 & 1 == 1 };
        let mut code = || HashCode::from_bools(&(0..bits).map(|_| next()).collect::<Vec<_>>());
        let (a, b, c) = (code(), code(), code());
        let ab = hamming(&a, &b).unwrap();
        prop_assert_eq!(ab, hamming(&b, &a).unwrap());
        prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        let naive = a.to_bools().iter().zip(b.to_bools()).filter(|(x, y)| **x != *y).count() as u32;
        prop_assert_eq!(ab, naive);
    }

    #[test]
    fn packing_roundtrips(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
        let code = HashCode::from_bools(&bits);
        prop_assert_eq!(code.to_bools(), bits.clone());
        let again = HashCode::from_words(code.words().to_vec(), bits.len()).unwrap();
        prop_assert_eq!(again, code);
    }

    #[test]
    fn topk_is_a_prefix_of_the_total_order(
        codes in proptest::collection::vec(code_strategy(6), 1..120),
        ids in proptest::collection::vec(0u64..40, 120),
        q in code_strategy(6),
        k in 1usize..130,
    ) {
        let n = codes.len();
        let idx = HashIndex::from_parts(6, codes.clone(), ids[..n].to_vec(), (0..n as NodeId).collect()).unwrap();
        let got = idx.query_topk(&q, k).unwrap();
        let mut all: Vec<(u32, u64, usize)> = codes.iter().enumerate().map(|(p, c)| (hamming(&q, c).unwrap(), ids[p], p)).collect();
        all.sort();
        prop_assert_eq!(got.len(), k.min(n));
        for (g, want) in got.iter().zip(&all) {
            prop_assert_eq!((g.distance, g.id, g.label), (want.0, want.1, want.2 as NodeId));
        }
    }

    #[test]
    fn hp_is_bounded_and_perfect_for_ideal_rankings(rel in proptest::collection::vec(prop_oneof![Just(0.0), Just(0.5), Just(1.0)], 1..50)) {
        let curve = hp_curve_from_relevance(&rel, rel.len()).unwrap();
        prop_assert!(curve.iter().all(|&h| (0.0..=1.0).contains(&h)));
        let mut ideal = rel.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(hp_curve_from_relevance(&ideal, ideal.len()).unwrap().iter().all(|&h| h == 1.0));
    }

    #[test]
    fn average_precision_bounds(rel in proptest::collection::vec(any::<bool>(), 1..60)) {
        match average_precision(&rel) {
            None => prop_assert!(rel.iter().all(|r| !r)),
            Some(ap) => {
                prop_assert!(ap > 0.0 && ap <= 1.0);
                let mut sorted = rel.clone();
                sorted.sort_by(|a, b| b.cmp(a));
                prop_assert_eq!(average_precision(&sorted), Some(1.0));
                prop_assert!(ap <= 1.0);
            }
        }
    }
}

#[test]
fn sixteen_leaf_taxonomy_distances() {
    let mut text = String::new();
    for a in 0..4 {
        writeln!(text, "root s{a}").unwrap();
        for b in 0..2 {
            writeln!(text, "s{a} m{a}{b}").unwrap();
            for c in 0..2 {
                writeln!(text, "m{a}{b} l{a}{b}{c}").unwrap();
            }
        }
    }
    let t = Taxonomy::parse(&text).unwrap();
    assert_eq!(t.leaves().len(), 16);
    assert_eq!(t.height(), 3);
    let d = |a: &str, b: &str| t.semantic_distance(t.leaf_id(a).unwrap(), t.leaf_id(b).unwrap()).unwrap();
    assert_eq!(d("l000", "l000"), 0.0);
    assert_eq!(d("l000", "l001"), 1.0 / 3.0);
    assert_eq!(d("l000", "l010"), 2.0 / 3.0);
    assert_eq!(d("l000", "l300"), 1.0);
}

#[test]
fn hp_and_ahp_on_a_small_ranking() {
    // root → {A → {a1, a2}, b}; height 2.
    let t = Taxonomy::parse("root A\nroot b\nA a1\nA a2\n").unwrap();
    let [a1, a2, b] = ["a1", "a2", "b"].map(|n| t.leaf_id(n).unwrap());
    // Relevance to a1: a1 → 1, a2 → 0.5, b → 0.
    let ranked = [b, a2, a1];
    assert_eq!(hp_at_k(&ranked, a1, 1, &t).unwrap(), 0.0);
    assert_eq!(hp_at_k(&ranked, a1, 2, &t).unwrap(), 0.5 / 1.5);
    assert_eq!(hp_at_k(&ranked, a1, 3, &t).unwrap(), 1.0);
    let ahp = ahp_at_k(&ranked, a1, 3, &t).unwrap();
    assert!((ahp - (0.0 + 1.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
}
