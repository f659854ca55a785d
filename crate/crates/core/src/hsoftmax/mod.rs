//! Hierarchical softmax over a frozen Huffman tree.
//!
//! Each token's path is encoded once as a row of three matrices:
//!
//! | step        | index            | sign | bias |
//! |-------------|------------------|------|------|
//! | left        | node inner_index |  1   |  0   |
//! | right       | node inner_index | -1   |  1   |
//! | padding     | 0                |  0   |  1   |
//!
//! so that `sign * σ(p[index]) + bias` is `σ`, `1 - σ` or `1`. Scoring every
//! leaf is then one matrix-vector product over the inner nodes followed by a
//! gather and a row sum of logs. The logs are taken as `ln σ(±p)` directly,
//! which is the same quantity without the cancellation in `1 - σ`.

mod io;
mod train;

pub use io::{load_model, save_model, FloatWidth, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{separable_dataset, train_toy, Sample, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::math::{dot, log_sigmoid, sigmoid};

/// Frozen `(vocab_size × width)` path encoding of a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathMatrices {
    index: Array2<usize>,
    sign: Array2<i8>,
    bias: Array2<u8>,
    path_lens: Vec<usize>,
}

impl PathMatrices {
    pub fn index(&self) -> &Array2<usize> {
        &self.index
    }

    pub fn sign(&self) -> &Array2<i8> {
        &self.sign
    }

    pub fn bias(&self) -> &Array2<u8> {
        &self.bias
    }

    pub fn vocab_size(&self) -> usize {
        self.index.nrows()
    }

    /// Number of columns; the tree depth unless padded further.
    pub fn width(&self) -> usize {
        self.index.ncols()
    }

    /// Non-padding columns in row `token`.
    pub fn path_len(&self, token: usize) -> usize {
        self.path_lens[token]
    }

    /// A copy with `extra` padding columns appended to every row.
    pub fn with_padding(&self, extra: usize) -> Self {
        let (rows, width) = self.index.dim();
        let mut index = Array2::zeros((rows, width + extra));
        let mut sign = Array2::zeros((rows, width + extra));
        let mut bias = Array2::ones((rows, width + extra));
        index.slice_mut(ndarray::s![.., ..width]).assign(&self.index);
        sign.slice_mut(ndarray::s![.., ..width]).assign(&self.sign);
        bias.slice_mut(ndarray::s![.., ..width]).assign(&self.bias);
        Self {
            index,
            sign,
            bias,
            path_lens: self.path_lens.clone(),
        }
    }
}

/// Encode every root-to-leaf path of `tree`.
///
/// A single-leaf tree has no inner node; its one token is encoded as a single
/// left step through node slot 0, matching its code `"0"`.
pub fn build_path_matrices(tree: &HuffmanTree) -> PathMatrices {
    let vocab = tree.vocab_size();
    let width = tree.depth().max(1);
    let mut index = Array2::zeros((vocab, width));
    let mut sign = Array2::zeros((vocab, width));
    let mut bias = Array2::ones((vocab, width));
    let mut path_lens = vec![0; vocab];

    if vocab == 1 {
        sign[[0, 0]] = 1;
        bias[[0, 0]] = 0;
        path_lens[0] = 1;
    } else {
        tree.walk_paths(|token, path| {
            path_lens[token] = path.len();
            for (j, &(node, right)) in path.iter().enumerate() {
                index[[token, j]] = tree
                    .node(node)
                    .inner_index()
                    .expect("path steps go through inner nodes");
                if right {
                    sign[[token, j]] = -1;
                    bias[[token, j]] = 1;
                } else {
                    sign[[token, j]] = 1;
                    bias[[token, j]] = 0;
                }
            }
        });
    }
    PathMatrices {
        index,
        sign,
        bias,
        path_lens,
    }
}

/// Work counter threaded through the scoring kernel.
///
/// The unit type counts nothing and compiles away; [`OpCounts`] tallies
/// scalar operations for complexity checks.
pub trait OpCounter {
    fn multiply_accumulate(&mut self, n: usize);
    fn gather_add(&mut self, n: usize);
    fn sigmoid(&mut self, n: usize);
}

impl OpCounter for () {
    #[inline(always)]
    fn multiply_accumulate(&mut self, _: usize) {}
    #[inline(always)]
    fn gather_add(&mut self, _: usize) {}
    #[inline(always)]
    fn sigmoid(&mut self, _: usize) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiply_accumulates: usize,
    pub gather_adds: usize,
    pub sigmoids: usize,
}

impl OpCounter for OpCounts {
    fn multiply_accumulate(&mut self, n: usize) {
        self.multiply_accumulates += n;
    }
    fn gather_add(&mut self, n: usize) {
        self.gather_adds += n;
    }
    fn sigmoid(&mut self, n: usize) {
        self.sigmoids += n;
    }
}

/// Gradients of the negative log-likelihood for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grad_h: Array1<f64>,
    /// `(inner_index, dL/dr)` for each node on the target path, root first.
    /// Every other node vector has zero gradient.
    pub node_grads: Vec<(usize, Array1<f64>)>,
}

/// Inner-node vectors plus the frozen path encoding of their tree.
#[derive(Debug, Clone, PartialEq)]
pub struct HSoftmaxModel {
    node_vectors: Array2<f64>,
    matrices: PathMatrices,
    tree: HuffmanTree,
}

impl HSoftmaxModel {
    /// Rows of `node_vectors` are indexed by inner_index. A single-leaf tree
    /// still takes one row (see [`build_path_matrices`]).
    pub fn new(tree: HuffmanTree, node_vectors: Array2<f64>) -> Result<Self> {
        let rows = Self::node_rows_for(&tree);
        if node_vectors.nrows() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: node_vectors.nrows(),
            });
        }
        if node_vectors.ncols() == 0 {
            return Err(Error::InvalidConfig("hidden_size must be positive".into()));
        }
        if node_vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let matrices = build_path_matrices(&tree);
        Ok(Self {
            node_vectors,
            matrices,
            tree,
        })
    }

    pub fn zeros(tree: HuffmanTree, hidden_size: usize) -> Result<Self> {
        let rows = Self::node_rows_for(&tree);
        Self::new(tree, Array2::zeros((rows, hidden_size)))
    }

    /// Node vectors drawn from `uniform(-0.5, 0.5) / hidden_size`.
    pub fn seeded(tree: HuffmanTree, hidden_size: usize, seed: u64) -> Result<Self> {
        let rows = Self::node_rows_for(&tree);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / hidden_size.max(1) as f64;
        let vectors =
            Array2::from_shape_fn((rows, hidden_size), |_| rng.random_range(-0.5..0.5) * scale);
        Self::new(tree, vectors)
    }

    fn node_rows_for(tree: &HuffmanTree) -> usize {
        tree.inner_size().max(1)
    }

    pub fn tree(&self) -> &HuffmanTree {
        &self.tree
    }

    pub fn matrices(&self) -> &PathMatrices {
        &self.matrices
    }

    pub fn node_vectors(&self) -> &Array2<f64> {
        &self.node_vectors
    }

    pub fn node_vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.node_vectors
    }

    pub fn hidden_size(&self) -> usize {
        self.node_vectors.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.tree.vocab_size()
    }

    /// Same model scored through matrices with `extra` padding columns.
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        Self {
            node_vectors: self.node_vectors.clone(),
            matrices: self.matrices.with_padding(extra),
            tree: self.tree.clone(),
        }
    }

    pub fn check_hidden(&self, h: ArrayView1<'_, f64>) -> Result<()> {
        if h.len() != self.hidden_size() {
            return Err(Error::DimensionMismatch {
                expected: self.hidden_size(),
                found: h.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.vocab_size() {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: self.vocab_size(),
            });
        }
        Ok(())
    }

    /// `r_i · h` for the node with the given inner_index.
    #[inline]
    pub fn logit(&self, inner_index: usize, h: ArrayView1<'_, f64>) -> f64 {
        dot(self.node_vectors.row(inner_index), h)
    }

    /// Log-probability of every token.
    pub fn leaf_log_probs(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.leaf_log_probs_counted(h, &mut ())
    }

    /// [`leaf_log_probs`](Self::leaf_log_probs), reporting scalar work to `counter`.
    pub fn leaf_log_probs_counted<C: OpCounter>(
        &self,
        h: ArrayView1<'_, f64>,
        counter: &mut C,
    ) -> Result<Array1<f64>> {
        self.check_hidden(h)?;
        let rows = self.node_vectors.nrows();

        // log σ(p) and log(1 - σ(p)) = log σ(-p) per inner node
        let mut branch = Vec::with_capacity(2 * rows);
        for i in 0..rows {
            let p = self.logit(i, h);
            branch.push(log_sigmoid(p));
            branch.push(log_sigmoid(-p));
        }
        counter.multiply_accumulate(rows * self.hidden_size());
        counter.sigmoid(2 * rows);

        let m = &self.matrices;
        let width = m.width();
        let out = Array1::from_shape_fn(m.vocab_size(), |i| {
            let mut acc = 0.0;
            for j in 0..width {
                acc += match m.sign[[i, j]] {
                    1 => branch[2 * m.index[[i, j]]],
                    -1 => branch[2 * m.index[[i, j]] + 1],
                    _ => 0.0,
                };
            }
            acc
        });
        counter.gather_add(m.vocab_size() * width);
        Ok(out)
    }

    /// Row-wise [`leaf_log_probs`](Self::leaf_log_probs) over a batch of hidden states.
    pub fn leaf_log_probs_batch(&self, hs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = hs
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|h| self.leaf_log_probs(h))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((hs.nrows(), self.vocab_size()));
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&src);
        }
        Ok(out)
    }

    /// Log-probability of a single token, walking only its path.
    pub fn token_log_prob(&self, h: ArrayView1<'_, f64>, target: usize) -> Result<f64> {
        self.check_target(target)?;
        self.check_hidden(h)?;
        let m = &self.matrices;
        let mut acc = 0.0;
        for j in 0..m.width() {
            let p = || self.logit(m.index[[target, j]], h);
            acc += match m.sign[[target, j]] {
                1 => log_sigmoid(p()),
                -1 => log_sigmoid(-p()),
                _ => 0.0,
            };
        }
        Ok(acc)
    }

    pub fn nll_loss(&self, h: ArrayView1<'_, f64>, target: usize) -> Result<f64> {
        Ok(-self.token_log_prob(h, target)?)
    }

    /// Mean negative log-likelihood over a batch.
    pub fn nll_loss_batch(&self, hs: ArrayView2<'_, f64>, targets: &[usize]) -> Result<f64> {
        if hs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: hs.nrows(),
                found: targets.len(),
            });
        }
        if targets.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let total = hs
            .axis_iter(Axis(0))
            .zip(targets)
            .map(|(h, &t)| self.nll_loss(h, t))
            .sum::<Result<f64>>()?;
        Ok(total / targets.len() as f64)
    }

    /// Exact gradients of [`nll_loss`](Self::nll_loss).
    ///
    /// For a path step through node `k` with logit `p_k`,
    /// `dL/dp_k = σ(p_k) - 1` on a left step and `σ(p_k)` on a right step.
    pub fn loss_gradients(&self, h: ArrayView1<'_, f64>, target: usize) -> Result<Gradients> {
        self.check_target(target)?;
        self.check_hidden(h)?;
        let m = &self.matrices;
        let mut grad_h = Array1::zeros(self.hidden_size());
        let mut node_grads = Vec::with_capacity(m.path_len(target));
        for j in 0..m.width() {
            let s = m.sign[[target, j]];
            if s == 0 {
                continue;
            }
            let k = m.index[[target, j]];
            let g = sigmoid(self.logit(k, h)) - if s == 1 { 1.0 } else { 0.0 };
            let r = self.node_vectors.row(k);
            grad_h.scaled_add(g, &r);
            node_grads.push((k, h.mapv(|x| g * x)));
        }
        Ok(Gradients { grad_h, node_grads })
    }
}
