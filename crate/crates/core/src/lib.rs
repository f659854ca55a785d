//! Huffman-coded hierarchical softmax.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`corpus`] reads per-language token counts and merges them into a single
//!    normalized [`TermFrequencyTable`].
//! 2. [`huffman`] builds a Huffman tree over that table and assigns prefix-free
//!    codes (left = `0`, right = `1`).
//! 3. [`hsoftmax`] freezes the tree into `Index`/`Sign`/`Bias` path matrices and
//!    scores every leaf with a single gather + row-sum over per-node log-sigmoids.
//! 4. [`decoder`] walks the tree with a level-synchronous beam to pick the best
//!    leaves without scoring the whole vocabulary.
//!
//! [`bench`] times the tree decoder against a dense softmax baseline.

pub mod bench;
pub mod corpus;
pub mod decoder;
mod error;
#[cfg(test)]
mod fixtures;
pub mod hsoftmax;
pub mod huffman;
pub mod math;

pub use corpus::{RawCounts, TermFrequencyTable};
pub use decoder::{BeamHypothesis, VanillaSoftmaxModel};
pub use error::{Error, Result};
pub use hsoftmax::{HSoftmaxModel, PathMatrices};
pub use huffman::{CodeBook, HuffmanTree, NodeKind, TreeNode};
