mod common;

use common::*;
use huffmax::corpus::{merge_and_normalize, CountEntry, RawCounts};
use huffmax::huffman::{assign_codes, deserialize_tree, expected_code_length, serialize_tree};
use huffmax::{HuffmanTree, TermFrequencyTable};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_enumerates_the_right_number_of_shapes() {
    // distinct depth vectors of full binary trees on n labeled leaves
    assert_eq!(all_depth_vectors(1).len(), 1);
    assert_eq!(all_depth_vectors(2).len(), 1);
    assert_eq!(all_depth_vectors(3).len(), 3);
    // 4 leaves: balanced (1) + caterpillars 1,2,3,3 (4·3 = 12)
    assert_eq!(all_depth_vectors(4).len(), 13);
}

#[test]
fn three_token_optimum_by_enumeration() {
    let probs = [0.5, 0.25, 0.25];
    assert_eq!(optimal_expected_length(&probs, &all_depth_vectors(3)), 1.5);
    let uniform = [0.25; 4];
    assert_eq!(optimal_expected_length(&uniform, &all_depth_vectors(4)), 2.0);
}

#[test]
fn huffman_matches_exhaustive_optimum_small_vocabularies() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 2..=7 {
        let shapes = all_depth_vectors(n);
        for _ in 0..20 {
            let table = random_table(&mut rng, n);
            let tree = HuffmanTree::build(&table).unwrap();
            let got = expected_code_length(&tree, &table).unwrap();
            let best = optimal_expected_length(table.probs(), &shapes);
            assert!((got - best).abs() <= 1e-12, "n={n}: {got} vs {best}");
        }
    }
}

#[test]
fn thousand_token_round_trip_keeps_codebook() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let tree = random_tree(&mut rng, 1000);
    let back = deserialize_tree(&serialize_tree(&tree)).unwrap();
    assert_eq!(back, tree);
    assert_eq!(assign_codes(&back), assign_codes(&tree));
}

#[test]
fn large_codebook_is_prefix_free_by_trie() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tree = random_tree(&mut rng, 5000);
    let book = assign_codes(&tree);
    let codes: Vec<&str> = book.iter().map(|(_, c)| c).collect();
    assert!(is_prefix_free(&codes));
    assert!(kraft_sum_is_one(&book.code_lengths()));
    // the trie path really rejects a violation
    let mut bad = codes.clone();
    let shortest = codes.iter().min_by_key(|c| c.len()).unwrap();
    let extended = format!("{shortest}0");
    bad.push(&extended);
    assert!(!is_prefix_free(&bad));
}

#[test]
fn zipf_vocabulary_behaves() {
    let table = huffmax::bench::zipf_table(4096, 1.0, 3).unwrap();
    let tree = HuffmanTree::build(&table).unwrap();
    let book = assign_codes(&tree);
    assert!(kraft_sum_is_one(&book.code_lengths()));
    // optimal code length sits within one bit of the entropy
    let entropy: f64 = table.probs().iter().map(|p| -p * p.log2()).sum();
    let len = expected_code_length(&tree, &table).unwrap();
    assert!(len >= entropy - 1e-9 && len < entropy + 1.0, "{len} vs H={entropy}");
}

fn arb_counts() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..500, 2..300)
}

fn table_from_counts(counts: &[u64]) -> TermFrequencyTable {
    merge_and_normalize(&RawCounts {
        entries: counts
            .iter()
            .enumerate()
            .map(|(i, &count)| CountEntry { token: format!("t{i}"), count, language: None })
            .collect(),
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codes_are_prefix_free_and_kraft_tight(counts in arb_counts()) {
        let tree = HuffmanTree::build(&table_from_counts(&counts)).unwrap();
        let book = assign_codes(&tree);
        let codes: Vec<&str> = book.iter().map(|(_, c)| c).collect();
        prop_assert!(is_prefix_free(&codes));
        prop_assert!(kraft_sum_is_one(&book.code_lengths()));
        for t in 0..tree.vocab_size() {
            prop_assert_eq!(book.code_at(t).len(), tree.leaf_depth(t));
        }
        prop_assert_eq!(tree.inner_size(), tree.vocab_size() - 1);
        prop_assert!(tree.depth() < tree.vocab_size());
    }

    #[test]
    fn structure_invariants(counts in arb_counts()) {
        let table = table_from_counts(&counts);
        let tree = HuffmanTree::build(&table).unwrap();
        // exact subtree weights from the merged integer counts
        let leaf_counts = table.counts().unwrap();
        let mut weight = vec![0u64; tree.nodes().len()];
        for node in tree.nodes() {
            weight[node.id] = match node.kind {
                huffmax::NodeKind::Leaf { token } => leaf_counts[token],
                huffmax::NodeKind::Inner { left, right, .. } => weight[left] + weight[right],
            };
        }
        let mut inner: Vec<usize> = tree.nodes().iter().filter_map(|n| n.inner_index()).collect();
        inner.sort_unstable();
        prop_assert_eq!(inner, (0..tree.inner_size()).collect::<Vec<_>>());
        for node in tree.nodes() {
            if let Some((l, r)) = node.children() {
                prop_assert!((node.prob - tree.node(l).prob - tree.node(r).prob).abs() <= 1e-12);
                // the higher-priority (lower-probability) child is on the left
                prop_assert!(weight[l] <= weight[r]);
            }
        }
    }

    #[test]
    fn more_frequent_never_longer(counts in arb_counts()) {
        let table = table_from_counts(&counts);
        let tree = HuffmanTree::build(&table).unwrap();
        let book = assign_codes(&tree);
        let p = table.probs();
        for a in 0..p.len() {
            for b in 0..p.len() {
                if p[a] > p[b] {
                    prop_assert!(book.code_at(a).len() <= book.code_at(b).len());
                }
            }
        }
    }

    #[test]
    fn serialization_is_deterministic_and_lossless(counts in arb_counts(), float in any::<bool>()) {
        let table = if float {
            TermFrequencyTable::from_weights(
                counts.iter().enumerate().map(|(i, &c)| (format!("t{i}"), c as f64 / 7.0)),
            ).unwrap()
        } else {
            table_from_counts(&counts)
        };
        let a = serialize_tree(&HuffmanTree::build(&table).unwrap());
        let b = serialize_tree(&HuffmanTree::build(&table).unwrap());
        prop_assert_eq!(&a, &b);
        let back = deserialize_tree(&a).unwrap();
        prop_assert_eq!(serialize_tree(&back), a);
    }
}

#[test]
fn float_and_count_paths_agree_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        // distinct powers keep every partial sum distinct and exact
        let n = rng.random_range(2..12);
        let counts: Vec<u64> = (0..n).map(|i| 1u64 << (i * 3)).collect();
        let a = HuffmanTree::build(&table_from_counts(&counts)).unwrap();
        let b = HuffmanTree::build(
            &TermFrequencyTable::from_weights(
                counts.iter().enumerate().map(|(i, &c)| (format!("t{i}"), c as f64)),
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(assign_codes(&a), assign_codes(&b));
    }
}
