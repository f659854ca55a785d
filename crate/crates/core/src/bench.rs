//! Decode-step timing: tree beam search vs. dense softmax.
//!
//! Each vocabulary size gets a synthetic Zipf(1.0) vocabulary, its Huffman
//! tree, a random tree model, a random dense model, and a batch of random
//! hidden states shared by both methods. Before anything is timed, the tree
//! decoder at full beam width must reproduce the exhaustive ranking.

use std::hint::black_box;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TermFrequencyTable;
use crate::decoder::{beam_decode, exact_topk, vanilla_topk, VanillaSoftmaxModel};
use crate::error::{Error, Result};
use crate::hsoftmax::HSoftmaxModel;
use crate::huffman::HuffmanTree;

pub const SOFTMAX: &str = "softmax";
pub const HSOFTMAX_BEAM: &str = "hsoftmax_beam";
pub const SOFTMAX_PARALLEL: &str = "softmax_parallel";
pub const HSOFTMAX_BEAM_PARALLEL: &str = "hsoftmax_beam_parallel";

/// Upper bound on the bytes the two models of one instance may take.
const MEMORY_LIMIT_BYTES: usize = 8 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub vocab_sizes: Vec<usize>,
    pub hidden_size: usize,
    /// Decode steps per trial.
    pub batch: usize,
    pub trials: usize,
    /// Untimed passes over the batch before the first trial.
    pub warmup: usize,
    pub beam_width: usize,
    pub seed: u64,
    /// Also time rayon-parallel decoding of the batch, reported separately.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            vocab_sizes: vec![1024, 8192, 65536],
            hidden_size: 256,
            batch: 32,
            trials: 5,
            warmup: 1,
            beam_width: 4,
            seed: 0x5eed,
            parallel: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return bad("vocab sizes must be non-empty and positive");
        }
        if self.hidden_size == 0 || self.batch == 0 || self.beam_width == 0 {
            return bad("hidden size, batch and beam width must be positive");
        }
        if self.warmup == 0 {
            return bad("warmup must be positive");
        }
        if self.trials < 3 {
            return bad("at least 3 trials are required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub name: String,
    pub vocab: usize,
    pub median_ns: f64,
    pub p10_ns: f64,
    pub p90_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub vocab: usize,
    /// `softmax` median over `hsoftmax_beam` median.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub name: String,
    /// Least-squares slope of ln(median_ns) against ln(vocab).
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub hidden_size: usize,
    pub beam_width: usize,
    pub records: Vec<BenchRecord>,
    pub speedups: Vec<Speedup>,
    #[serde(default)]
    pub slopes: Vec<SlopeFit>,
}

impl BenchReport {
    pub fn record(&self, name: &str, vocab: usize) -> Option<&BenchRecord> {
        self.records.iter().find(|r| r.name == name && r.vocab == vocab)
    }

    pub fn speedup(&self, vocab: usize) -> Option<f64> {
        self.speedups.iter().find(|s| s.vocab == vocab).map(|s| s.ratio)
    }

    pub fn slope(&self, name: &str) -> Option<f64> {
        self.slopes.iter().find(|s| s.name == name).map(|s| s.exponent)
    }

    /// Fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>8} {:>14} {:>14} {:>14}\n",
            "method", "vocab", "median_ns", "p10_ns", "p90_ns"
        );
        for r in &self.records {
            out.push_str(&format!(
                "{:<24} {:>8} {:>14.1} {:>14.1} {:>14.1}\n",
                r.name, r.vocab, r.median_ns, r.p10_ns, r.p90_ns
            ));
        }
        for s in &self.speedups {
            out.push_str(&format!("speedup @ {:>8}: {:.2}x\n", s.vocab, s.ratio));
        }
        for s in &self.slopes {
            out.push_str(&format!("log-log slope {:<24} {:.3}\n", s.name, s.exponent));
        }
        out
    }
}

/// Zipf(`exponent`) term frequencies over `vocab` synthetic tokens, with the
/// rank-to-token assignment shuffled by `seed`.
pub fn zipf_table(vocab: usize, exponent: f64, seed: u64) -> Result<TermFrequencyTable> {
    if vocab == 0 {
        return Err(Error::EmptyVocabulary);
    }
    let mut ranks: Vec<usize> = (1..=vocab).collect();
    ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    TermFrequencyTable::from_weights(
        ranks
            .into_iter()
            .enumerate()
            .map(|(i, rank)| (format!("t{i}"), (rank as f64).powf(-exponent))),
    )
}

/// Everything one vocabulary size is timed on.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchInstance {
    pub vocab: usize,
    pub hsoftmax: HSoftmaxModel,
    pub softmax: VanillaSoftmaxModel,
    /// `(batch × hidden_size)` hidden states, shared by both methods.
    pub hidden: Array2<f64>,
}

fn instance_seed(seed: u64, vocab: usize) -> u64 {
    seed ^ (vocab as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn generate_instance(config: &BenchConfig, vocab: usize) -> Result<BenchInstance> {
    let hidden = config.hidden_size;
    let bytes = vocab
        .checked_mul(hidden)
        .and_then(|n| n.checked_mul(2 * std::mem::size_of::<f64>()))
        .filter(|&b| b <= MEMORY_LIMIT_BYTES)
        .ok_or_else(|| Error::ResourceExhausted {
            vocab,
            message: format!(
                "two {vocab}x{hidden} f64 models exceed the {} GiB limit",
                MEMORY_LIMIT_BYTES >> 30
            ),
        })?;
    let mut probe: Vec<u8> = Vec::new();
    probe
        .try_reserve_exact(bytes)
        .map_err(|e| Error::ResourceExhausted {
            vocab,
            message: e.to_string(),
        })?;
    drop(probe);

    let base = instance_seed(config.seed, vocab);
    let table = zipf_table(vocab, 1.0, base)?;
    let tree = HuffmanTree::build(&table)?;
    let rows = tree.inner_size().max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(1));
    let dist = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std dev");
    let nodes = Array2::from_shape_fn((rows, hidden), |_| dist.sample(&mut rng));
    let hsoftmax = HSoftmaxModel::new(tree, nodes)?;
    let softmax = VanillaSoftmaxModel::seeded(vocab, hidden, base.wrapping_add(2))?;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(3));
    let hidden_states = Array2::from_shape_fn((config.batch, hidden), |_| unit.sample(&mut rng));
    Ok(BenchInstance {
        vocab,
        hsoftmax,
        softmax,
        hidden: hidden_states,
    })
}

/// Full-width beam must reproduce the exhaustive top-k, scores within 1e-12.
pub fn validate_instance(instance: &BenchInstance) -> Result<()> {
    let model = &instance.hsoftmax;
    let vocab = instance.vocab;
    let k = vocab.min(5);
    for h in instance.hidden.axis_iter(Axis(0)).take(2) {
        let beam = beam_decode(model, h, vocab, k)?;
        let exact = exact_topk(model, h, k)?;
        let agree = beam.len() == exact.len()
            && beam
                .iter()
                .zip(&exact)
                .all(|(b, e)| b.0 == e.0 && (b.1 - e.1).abs() <= 1e-12);
        if !agree {
            return Err(Error::Validation(format!(
                "full-width beam disagrees with exhaustive top-{k} at vocab {vocab}"
            )));
        }
    }
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn time_steps<F: FnMut()>(config: &BenchConfig, name: &str, vocab: usize, mut pass: F) -> BenchRecord {
    for _ in 0..config.warmup {
        pass();
    }
    let mut samples: Vec<f64> = (0..config.trials)
        .map(|_| {
            let start = Instant::now();
            pass();
            start.elapsed().as_nanos() as f64 / config.batch as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    BenchRecord {
        name: name.to_string(),
        vocab,
        // Timer resolution can round a tiny pass to zero.
        median_ns: percentile(&samples, 0.5).max(1.0),
        p10_ns: percentile(&samples, 0.1),
        p90_ns: percentile(&samples, 0.9),
    }
}

fn bench_instance(config: &BenchConfig, inst: &BenchInstance) -> Result<Vec<BenchRecord>> {
    let beam = config.beam_width;
    let hs = &inst.hidden;
    // Surface argument errors before the timing loops, which unwrap.
    vanilla_topk(&inst.softmax, hs.row(0), 1)?;
    beam_decode(&inst.hsoftmax, hs.row(0), beam, 1)?;

    let mut records = vec![
        time_steps(config, SOFTMAX, inst.vocab, || {
            for h in hs.axis_iter(Axis(0)) {
                black_box(vanilla_topk(&inst.softmax, black_box(h), 1).unwrap());
            }
        }),
        time_steps(config, HSOFTMAX_BEAM, inst.vocab, || {
            for h in hs.axis_iter(Axis(0)) {
                black_box(beam_decode(&inst.hsoftmax, black_box(h), beam, 1).unwrap());
            }
        }),
    ];
    if config.parallel {
        records.push(time_steps(config, SOFTMAX_PARALLEL, inst.vocab, || {
            hs.axis_iter(Axis(0)).into_par_iter().for_each(|h| {
                black_box(vanilla_topk(&inst.softmax, h, 1).unwrap());
            })
        }));
        records.push(time_steps(config, HSOFTMAX_BEAM_PARALLEL, inst.vocab, || {
            hs.axis_iter(Axis(0)).into_par_iter().for_each(|h| {
                black_box(beam_decode(&inst.hsoftmax, h, beam, 1).unwrap());
            })
        }));
    }
    Ok(records)
}

/// Time top-1 decoding with both methods at every configured vocabulary size.
pub fn run_decode_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let mut records = Vec::new();
    let mut speedups = Vec::new();
    for &vocab in &config.vocab_sizes {
        let inst = generate_instance(config, vocab)?;
        validate_instance(&inst)?;
        let recs = bench_instance(config, &inst)?;
        let median = |name: &str| {
            recs.iter()
                .find(|r| r.name == name)
                .map(|r| r.median_ns)
                .expect("both methods are always timed")
        };
        speedups.push(Speedup {
            vocab,
            ratio: median(SOFTMAX) / median(HSOFTMAX_BEAM),
        });
        records.extend(recs);
    }
    Ok(BenchReport {
        hidden_size: config.hidden_size,
        beam_width: config.beam_width,
        records,
        speedups,
        slopes: Vec::new(),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidConfig(
            "slope fit needs at least two matching points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig("slope fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

const MIN_SCALING_SPAN: usize = 64;

/// [`run_decode_bench`] plus a log-log time-vs-vocab slope per method.
///
/// Needs at least three distinct vocabulary sizes with max/min >= 64, so that
/// the usual 1024..65536 sweep qualifies.
pub fn run_scaling_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let mut sizes = config.vocab_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let (min, max) = (sizes[0], sizes[sizes.len() - 1]);
    if sizes.len() < 3 || max < min.saturating_mul(MIN_SCALING_SPAN) {
        return Err(Error::InvalidConfig(format!(
            "scaling fit needs >= 3 distinct vocab sizes spanning >= {MIN_SCALING_SPAN}x, got {sizes:?}"
        )));
    }
    let mut report = run_decode_bench(config)?;
    let mut names: Vec<String> = Vec::new();
    for r in &report.records {
        if !names.contains(&r.name) {
            names.push(r.name.clone());
        }
    }
    for name in names {
        let (xs, ys): (Vec<f64>, Vec<f64>) = report
            .records
            .iter()
            .filter(|r| r.name == name)
            .map(|r| (r.vocab as f64, r.median_ns))
            .unzip();
        report.slopes.push(SlopeFit {
            exponent: fit_loglog_slope(&xs, &ys)?,
            name,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(vocab_sizes: Vec<usize>) -> BenchConfig {
        BenchConfig {
            vocab_sizes,
            hidden_size: 8,
            batch: 4,
            trials: 3,
            warmup: 1,
            beam_width: 2,
            seed: 1,
            parallel: false,
        }
    }

    #[test]
    fn zipf_probabilities_follow_rank() {
        let t = zipf_table(4, 1.0, 3).unwrap();
        let h = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        let want = [1.0 / h, 0.5 / h, 1.0 / 3.0 / h, 0.25 / h];
        for (p, w) in t.probs().iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
    }

    #[test]
    fn vocab_two_report_is_well_formed() {
        let report = run_decode_bench(&small(vec![2])).unwrap();
        assert_eq!(report.records.len(), 2);
        for r in &report.records {
            assert!(r.median_ns > 0.0);
            assert!(r.p10_ns <= r.median_ns && r.median_ns <= r.p90_ns.max(r.median_ns));
        }
        assert!(report.speedup(2).unwrap() > 0.0);
    }

    #[test]
    fn seeded_instances_repeat() {
        let cfg = small(vec![64]);
        assert_eq!(generate_instance(&cfg, 64).unwrap(), generate_instance(&cfg, 64).unwrap());
        let other = BenchConfig { seed: 2, ..cfg.clone() };
        assert_ne!(
            generate_instance(&cfg, 64).unwrap().hidden,
            generate_instance(&other, 64).unwrap().hidden
        );
    }

    #[test]
    fn config_validation() {
        assert!(run_decode_bench(&BenchConfig { trials: 2, ..small(vec![4]) }).is_err());
        assert!(run_decode_bench(&small(vec![])).is_err());
        assert!(run_decode_bench(&BenchConfig { hidden_size: 0, ..small(vec![4]) }).is_err());
    }

    #[test]
    fn scaling_requires_a_wide_sweep() {
        assert!(run_scaling_bench(&small(vec![1024])).is_err());
        assert!(run_scaling_bench(&small(vec![16, 64, 256])).is_err());
        assert!(run_scaling_bench(&small(vec![16, 16, 16, 4096])).is_err());
    }

    #[test]
    fn scaling_reports_slopes() {
        let report = run_scaling_bench(&small(vec![8, 64, 1024])).unwrap();
        assert!(report.slope(SOFTMAX).unwrap().is_finite());
        assert!(report.slope(HSOFTMAX_BEAM).unwrap().is_finite());
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
        assert!((fit_loglog_slope(&xs, &ys).unwrap() - 0.7).abs() < 1e-12);
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn oversized_vocab_names_the_size() {
        let cfg = BenchConfig {
            hidden_size: 1 << 20,
            ..small(vec![1 << 20])
        };
        match generate_instance(&cfg, 1 << 20) {
            Err(Error::ResourceExhausted { vocab, .. }) => assert_eq!(vocab, 1 << 20),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_json_round_trip() {
        let mut report = run_decode_bench(&BenchConfig { parallel: true, ..small(vec![2, 16]) }).unwrap();
        report.slopes.push(SlopeFit {
            name: SOFTMAX.into(),
            exponent: 0.1 + 0.2,
        });
        assert_eq!(report.records.len(), 8);
        let text = serde_json::to_string(&report).unwrap();
        let back: BenchReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert!(report.render_table().contains(HSOFTMAX_BEAM));
    }
}
