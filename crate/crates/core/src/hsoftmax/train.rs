//! Full-batch gradient descent on the node vectors, for demonstrations and tests.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HSoftmaxModel;
use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;

/// A hidden state and its target token index.
pub type Sample = (Array1<f64>, usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds node-vector initialization and synthetic data in [`TrainConfig::demo`].
    /// The descent loop itself is deterministic.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the dataset at the start of each epoch.
    pub loss_curve: Vec<f64>,
    pub final_accuracy: f64,
}

/// Run `config.epochs` steps of full-batch gradient descent on the mean NLL.
pub fn train_toy(
    model: &mut HSoftmaxModel,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, found {}",
            config.learning_rate
        )));
    }
    for (h, target) in dataset {
        model.check_hidden(h.view())?;
        if *target >= model.vocab_size() {
            return Err(Error::IndexOutOfRange {
                index: *target,
                len: model.vocab_size(),
            });
        }
    }

    let n = dataset.len() as f64;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut grad = Array2::<f64>::zeros(model.node_vectors().raw_dim());
    for _ in 0..config.epochs {
        grad.fill(0.0);
        let mut loss = 0.0;
        for (h, target) in dataset {
            loss += model.nll_loss(h.view(), *target)?;
            for (k, g) in model.loss_gradients(h.view(), *target)?.node_grads {
                grad.row_mut(k).scaled_add(1.0 / n, &g);
            }
        }
        loss_curve.push(loss / n);
        model
            .node_vectors_mut()
            .scaled_add(-config.learning_rate, &grad);
    }

    Ok(TrainReport {
        loss_curve,
        final_accuracy: accuracy(model, dataset)?,
    })
}

/// Fraction of samples whose highest-scoring token is the target.
pub fn accuracy(model: &HSoftmaxModel, dataset: &[Sample]) -> Result<f64> {
    let mut correct = 0usize;
    for (h, target) in dataset {
        let lp = model.leaf_log_probs(h.view())?;
        let best = lp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0;
        correct += usize::from(best == *target);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Gaussian clusters around random class centers of norm 3, noise σ = 0.3.
///
/// Sample `i` belongs to class `i % classes`; class `c` targets token `c`.
pub fn separable_dataset(
    classes: usize,
    hidden_size: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if classes == 0 || hidden_size == 0 || samples == 0 {
        return Err(Error::InvalidConfig(
            "classes, hidden size and sample count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, 0.3).expect("valid normal");
    let centers: Vec<Array1<f64>> = (0..classes)
        .map(|_| {
            let v: Array1<f64> = Array1::from_shape_fn(hidden_size, |_| unit.sample(&mut rng));
            let norm = v.dot(&v).sqrt().max(1e-12);
            v * (3.0 / norm)
        })
        .collect();
    Ok((0..samples)
        .map(|i| {
            let c = i % classes;
            let h = centers[c].mapv(|x| x + noise.sample(&mut rng));
            (h, c)
        })
        .collect())
}

impl TrainConfig {
    /// Seeded end-to-end demo: synthetic clusters, seeded initialization,
    /// then [`train_toy`]. Returns the trained model with its report.
    pub fn demo(
        &self,
        tree: HuffmanTree,
        hidden_size: usize,
        classes: usize,
        samples: usize,
    ) -> Result<(HSoftmaxModel, TrainReport)> {
        if classes > tree.vocab_size() {
            return Err(Error::InvalidConfig(format!(
                "{classes} classes but the tree has only {} tokens",
                tree.vocab_size()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data_seed: u64 = rng.random();
        let init_seed: u64 = rng.random();
        let dataset = separable_dataset(classes, hidden_size, samples, data_seed)?;
        let mut model = HSoftmaxModel::seeded(tree, hidden_size, init_seed)?;
        let report = train_toy(&mut model, &dataset, self)?;
        Ok((model, report))
    }
}
