//! Top-k token selection: tree beam search plus the exhaustive baselines it
//! is checked and timed against.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsoftmax::HSoftmaxModel;
use crate::huffman::NodeKind;
use crate::math::log_sigmoid;

/// A partial root-to-node path kept in the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub node_id: usize,
    /// Sum of branch log-probabilities along `path_bits`.
    pub log_prob: f64,
    /// Branch directions from the root, `false` = left.
    pub path_bits: Vec<bool>,
}

impl BeamHypothesis {
    /// Higher score first, then lexicographically smaller path.
    fn rank(a: &Self, b: &Self) -> Ordering {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then_with(|| a.path_bits.cmp(&b.path_bits))
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(())
}

/// Level-synchronous beam search over the tree.
///
/// Every live inner hypothesis is expanded to both children each round;
/// hypotheses that already reached a leaf stay in the pool with their score
/// frozen. The best `beam_width` survive each round and the search ends when
/// all survivors are leaves. Returns the final pool, best first.
///
/// For a single-leaf vocabulary the lone token still consumes its one-bit
/// code `"0"`, scored as a left step through node slot 0.
pub fn beam_search(
    model: &HSoftmaxModel,
    h: ArrayView1<'_, f64>,
    beam_width: usize,
) -> Result<Vec<BeamHypothesis>> {
    if beam_width < 1 {
        return Err(Error::InvalidConfig("beam width must be at least 1".into()));
    }
    model.check_hidden(h)?;
    let tree = model.tree();

    if tree.vocab_size() == 1 {
        return Ok(vec![BeamHypothesis {
            node_id: tree.root(),
            log_prob: 0.0 + log_sigmoid(model.logit(0, h)),
            path_bits: vec![false],
        }]);
    }

    let mut pool = vec![BeamHypothesis {
        node_id: tree.root(),
        log_prob: 0.0,
        path_bits: Vec::new(),
    }];
    let mut next = Vec::with_capacity(2 * beam_width.min(tree.vocab_size()));
    loop {
        if pool.iter().all(|hyp| tree.node(hyp.node_id).is_leaf()) {
            break;
        }
        next.clear();
        for hyp in pool.drain(..) {
            match tree.node(hyp.node_id).kind {
                NodeKind::Leaf { .. } => next.push(hyp),
                NodeKind::Inner {
                    left,
                    right,
                    inner_index,
                } => {
                    let p = model.logit(inner_index, h);
                    let mut bits = hyp.path_bits;
                    let mut right_bits = bits.clone();
                    bits.push(false);
                    right_bits.push(true);
                    next.push(BeamHypothesis {
                        node_id: left,
                        log_prob: hyp.log_prob + log_sigmoid(p),
                        path_bits: bits,
                    });
                    next.push(BeamHypothesis {
                        node_id: right,
                        log_prob: hyp.log_prob + log_sigmoid(-p),
                        path_bits: right_bits,
                    });
                }
            }
        }
        if next.len() > beam_width {
            next.select_nth_unstable_by(beam_width - 1, BeamHypothesis::rank);
            next.truncate(beam_width);
        }
        std::mem::swap(&mut pool, &mut next);
    }
    pool.sort_by(BeamHypothesis::rank);
    Ok(pool)
}

/// Best `k` tokens found by [`beam_search`], as `(token, log_prob)` sorted by
/// score, ties to the lower token index.
///
/// Greedy and narrow beams are not guaranteed to find the true best token:
/// leaf depths differ, so a strong early branch can lead to a weaker leaf.
pub fn beam_decode(
    model: &HSoftmaxModel,
    h: ArrayView1<'_, f64>,
    beam_width: usize,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    check_k(k)?;
    if beam_width < k {
        return Err(Error::InvalidConfig(format!(
            "beam width {beam_width} is smaller than k = {k}"
        )));
    }
    let tree = model.tree();
    let mut ranked: Vec<(usize, f64)> = beam_search(model, h, beam_width)?
        .into_iter()
        .map(|hyp| match tree.node(hyp.node_id).kind {
            NodeKind::Leaf { token } => (token, hyp.log_prob),
            NodeKind::Inner { .. } => unreachable!("search ends with leaves only"),
        })
        .collect();
    ranked.sort_by(rank_scored);
    ranked.truncate(k);
    Ok(ranked)
}

/// [`beam_decode`] for each row of `hs`, in parallel.
pub fn beam_decode_batch(
    model: &HSoftmaxModel,
    hs: ArrayView2<'_, f64>,
    beam_width: usize,
    k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    hs.axis_iter(Axis(0))
        .into_par_iter()
        .map(|h| beam_decode(model, h, beam_width, k))
        .collect()
}

fn rank_scored(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Top `k` entries of `scores`, best first, ties to the lower index.
fn top_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let k = k.min(scores.len());
    if k == 1 {
        let best = scores
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, &s)| match best {
                Some((_, b)) if s <= b => best,
                _ => Some((i, s)),
            });
        return best.into_iter().collect();
    }
    let mut items: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, rank_scored);
        items.truncate(k);
    }
    items.sort_by(rank_scored);
    items
}

/// Exhaustive top-k over [`HSoftmaxModel::leaf_log_probs`].
pub fn exact_topk(
    model: &HSoftmaxModel,
    h: ArrayView1<'_, f64>,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    check_k(k)?;
    let scores = model.leaf_log_probs(h)?;
    Ok(top_k(scores.as_slice().expect("contiguous"), k))
}

/// Dense softmax output layer, the baseline the tree replaces.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaSoftmaxModel {
    weight: Array2<f64>,
}

impl VanillaSoftmaxModel {
    /// `weight` is `(vocab_size × hidden_size)`.
    pub fn new(weight: Array2<f64>) -> Result<Self> {
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::InvalidConfig("weight matrix must be non-empty".into()));
        }
        Ok(Self { weight })
    }

    /// Weights drawn from `N(0, 1/hidden_size)`.
    pub fn seeded(vocab_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0 / (hidden_size.max(1) as f64).sqrt())
            .expect("positive std dev");
        Self::new(Array2::from_shape_fn((vocab_size, hidden_size), |_| {
            dist.sample(&mut rng)
        }))
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if h.len() != self.hidden_size() {
            return Err(Error::DimensionMismatch {
                expected: self.hidden_size(),
                found: h.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(self.weight.dot(&h))
    }

    /// Max-shifted log-softmax of the logits.
    pub fn log_softmax(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let mut z = self.logits(h)?;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        z.mapv_inplace(|v| v - lse);
        Ok(z)
    }
}

pub fn vanilla_topk(
    model: &VanillaSoftmaxModel,
    h: ArrayView1<'_, f64>,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    check_k(k)?;
    let scores = model.log_softmax(h)?;
    Ok(top_k(scores.as_slice().expect("contiguous"), k))
}

/// One greedy (`beam_width = k = 1`) decode per hidden state. Steps are
/// independent; there is no state carried between them.
pub fn greedy_sequence_decode<'a, I>(model: &HSoftmaxModel, hidden_states: I) -> Result<Vec<usize>>
where
    I: IntoIterator<Item = ArrayView1<'a, f64>>,
{
    hidden_states
        .into_iter()
        .map(|h| Ok(beam_decode(model, h, 1, 1)?[0].0))
        .collect()
}
