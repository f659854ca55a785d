//! Independent oracles for the integration and acceptance suites.
//!
//! Nothing here calls into the scoring, gradient or decoding code it checks:
//! paths are walked over the raw node arena and probabilities are plain
//! products of textbook sigmoids.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use huffmax::{HSoftmaxModel, HuffmanTree, NodeKind, TermFrequencyTable, TreeNode};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn three_leaf_tree() -> HuffmanTree {
    let tokens = vec!["w1".to_string(), "w2".to_string(), "w3".to_string()];
    let nodes = vec![
        TreeNode { id: 0, prob: 0.25, kind: NodeKind::Leaf { token: 0 } },
        TreeNode { id: 1, prob: 0.25, kind: NodeKind::Leaf { token: 1 } },
        TreeNode { id: 2, prob: 0.5, kind: NodeKind::Leaf { token: 2 } },
        TreeNode { id: 3, prob: 0.5, kind: NodeKind::Inner { left: 0, right: 1, inner_index: 1 } },
        TreeNode { id: 4, prob: 1.0, kind: NodeKind::Inner { left: 3, right: 2, inner_index: 0 } },
    ];
    HuffmanTree::from_nodes(tokens, nodes, 4).unwrap()
}

/// Three-leaf model with hidden size 1 and `σ(r_1·h) = s1`, `σ(r_2·h) = s2` at `h = [1]`.
pub fn three_leaf_model(s1: f64, s2: f64) -> HSoftmaxModel {
    let logit = |s: f64| (s / (1.0 - s)).ln();
    HSoftmaxModel::new(three_leaf_tree(), Array2::from_shape_vec((2, 1), vec![logit(s1), logit(s2)]).unwrap())
        .unwrap()
}

pub fn random_table<R: Rng>(rng: &mut R, vocab: usize) -> TermFrequencyTable {
    TermFrequencyTable::from_weights((0..vocab).map(|i| (format!("tok{i}"), rng.random_range(0.01..1.0))))
        .unwrap()
}

pub fn random_tree<R: Rng>(rng: &mut R, vocab: usize) -> HuffmanTree {
    HuffmanTree::build(&random_table(rng, vocab)).unwrap()
}

/// Node vectors ~ N(0, 1/hidden) so that logits r·h with h ~ N(0, 1) are O(1).
pub fn random_model<R: Rng>(rng: &mut R, tree: HuffmanTree, hidden: usize) -> HSoftmaxModel {
    let rows = tree.inner_size().max(1);
    let d = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).unwrap();
    let v = Array2::from_shape_fn((rows, hidden), |_| d.sample(rng));
    HSoftmaxModel::new(tree, v).unwrap()
}

pub fn random_hidden<R: Rng>(rng: &mut R, hidden: usize) -> Array1<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    Array1::from_shape_fn(hidden, |_| d.sample(rng))
}

fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-leaf product of σ (left) and 1 − σ (right) along the path, found by
/// recursive descent over the node arena.
pub fn naive_leaf_probs(model: &HSoftmaxModel, h: &[f64]) -> Vec<f64> {
    let tree = model.tree();
    let vectors = model.node_vectors();
    let mut probs = vec![f64::NAN; tree.vocab_size()];
    fn descend(
        tree: &HuffmanTree,
        vectors: &Array2<f64>,
        h: &[f64],
        id: usize,
        acc: f64,
        probs: &mut Vec<f64>,
    ) {
        match tree.node(id).kind {
            NodeKind::Leaf { token } => probs[token] = acc,
            NodeKind::Inner { left, right, inner_index } => {
                let row: Vec<f64> = vectors.row(inner_index).to_vec();
                let s = naive_sigmoid(naive_dot(&row, h));
                descend(tree, vectors, h, left, acc * s, probs);
                descend(tree, vectors, h, right, acc * (1.0 - s), probs);
            }
        }
    }
    descend(tree, vectors, h, tree.root(), 1.0, &mut probs);
    probs
}

/// Negative log-likelihood straight from the naive path product.
pub fn naive_loss(model: &HSoftmaxModel, h: &[f64], target: usize) -> f64 {
    -naive_leaf_probs(model, h)[target].ln()
}

/// Central finite differences of the model's own loss w.r.t. h and every
/// node-vector entry.
pub fn finite_difference_gradients(
    model: &HSoftmaxModel,
    h: &Array1<f64>,
    target: usize,
    step: f64,
) -> (Array1<f64>, Array2<f64>) {
    let loss = |m: &HSoftmaxModel, h: &Array1<f64>| m.nll_loss(h.view(), target).unwrap();
    let mut grad_h = Array1::zeros(h.len());
    for i in 0..h.len() {
        let mut hp = h.clone();
        let mut hm = h.clone();
        hp[i] += step;
        hm[i] -= step;
        grad_h[i] = (loss(model, &hp) - loss(model, &hm)) / (2.0 * step);
    }
    let mut grad_nodes = Array2::zeros(model.node_vectors().raw_dim());
    let mut m = model.clone();
    for idx in ndarray::indices(model.node_vectors().raw_dim()) {
        let orig = m.node_vectors()[idx];
        m.node_vectors_mut()[idx] = orig + step;
        let up = loss(&m, h);
        m.node_vectors_mut()[idx] = orig - step;
        let down = loss(&m, h);
        m.node_vectors_mut()[idx] = orig;
        grad_nodes[idx] = (up - down) / (2.0 * step);
    }
    (grad_h, grad_nodes)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Leaf-depth vectors of every full binary tree on `n` labeled leaves,
/// by recursive enumeration of all splits.
pub fn all_depth_vectors(n: usize) -> Vec<Vec<u8>> {
    assert!((1..=10).contains(&n));
    fn shapes(mask: u32, n: usize, memo: &mut HashMap<u32, Vec<Vec<u8>>>) -> Vec<Vec<u8>> {
        if let Some(v) = memo.get(&mask) {
            return v.clone();
        }
        let result = if mask.count_ones() == 1 {
            vec![vec![0u8; n]]
        } else {
            let low = mask & mask.wrapping_neg();
            let rest = mask ^ low;
            let mut out = HashSet::new();
            // every proper subset of `mask` that contains its lowest bit
            let mut sub = rest;
            loop {
                let a = sub | low;
                let b = mask ^ a;
                if b != 0 {
                    for da in shapes(a, n, memo) {
                        for db in shapes(b, n, memo) {
                            let mut d = vec![0u8; n];
                            for i in 0..n {
                                if a >> i & 1 == 1 {
                                    d[i] = da[i] + 1;
                                } else if b >> i & 1 == 1 {
                                    d[i] = db[i] + 1;
                                }
                            }
                            out.insert(d);
                        }
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            out.into_iter().collect()
        };
        memo.insert(mask, result.clone());
        result
    }
    let mut memo = HashMap::new();
    shapes((1u32 << n) - 1, n, &mut memo)
}

pub fn optimal_expected_length(probs: &[f64], depth_vectors: &[Vec<u8>]) -> f64 {
    depth_vectors
        .iter()
        .map(|d| probs.iter().zip(d).map(|(p, &l)| p * l as f64).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Exact test of `Σ 2^(−len) = 1` by carrying equal-length pairs upward.
pub fn kraft_sum_is_one(lengths: &[usize]) -> bool {
    let max = match lengths.iter().max() {
        Some(&m) => m,
        None => return false,
    };
    let mut count = vec![0u64; max + 1];
    for &l in lengths {
        count[l] += 1;
    }
    for l in (1..=max).rev() {
        if count[l] % 2 == 1 {
            return false;
        }
        count[l - 1] += count[l] / 2;
    }
    count[0] == 1
}

/// No code is a proper prefix of another (nor a duplicate).
pub fn is_prefix_free(codes: &[&str]) -> bool {
    if codes.len() <= 4096 {
        for (i, a) in codes.iter().enumerate() {
            for (j, b) in codes.iter().enumerate() {
                if i != j && b.starts_with(a) {
                    return false;
                }
            }
        }
        return true;
    }
    // binary trie: node -> [child0, child1], plus a terminal flag
    let mut children: Vec<[usize; 2]> = vec![[0, 0]];
    let mut terminal = vec![false];
    for code in codes {
        let mut node = 0;
        for (pos, c) in code.bytes().enumerate() {
            if terminal[node] {
                return false;
            }
            let bit = usize::from(c == b'1');
            if children[node][bit] == 0 {
                children.push([0, 0]);
                terminal.push(false);
                children[node][bit] = children.len() - 1;
            }
            node = children[node][bit];
            if pos + 1 == code.len() && (terminal[node] || children[node] != [0, 0]) {
                return false;
            }
        }
        terminal[node] = true;
    }
    true
}

pub fn random_instance<R: Rng>(rng: &mut R, vocab: usize, hidden: usize) -> HSoftmaxModel {
    let tree = random_tree(rng, vocab);
    random_model(rng, tree, hidden)
}
