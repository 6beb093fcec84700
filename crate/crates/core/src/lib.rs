//! Text-to-metastimulus pipeline.
//!
//! Paragraph-sized text "atoms" are embedded as vectors, regressed onto
//! PCA-projected positions in a hierarchical category taxonomy with small
//! neural networks, checked against randomly relabeled null sets, and the
//! whole configuration is tuned with a nested search: hyperband or random
//! search over network hyper-parameters inside a pattern search over
//! pipeline-level meta-parameters.
//!
//! Module map:
//!
//! - [`corpus`]: atoms, the category tree, ingestion, partitioning, null sets.
//! - [`wordvec`]: co-occurrence counts, PPMI word vectors, stemming, keywords.
//! - [`atomvec`]: bag-of-words, ∇ (difference triangle) and PV-DM atom vectors.
//! - [`labelspace`]: one-hot labels, PCA projection and the nearest-neighbor
//!   classifier.
//! - [`neural`]: feedforward and Elman networks, optimizers, training loop.
//! - [`tuner`]: random search and hyperband over hyper-parameters.
//! - [`patsearch`]: pattern search over the meta-parameter lattice.
//! - [`pipeline`]: configuration and end-to-end train / tune / meta-fitness.
//! - [`synth`]: synthetic labeled corpus generator.

pub mod atomvec;
pub mod corpus;
mod error;
pub mod labelspace;
pub mod neural;
pub mod patsearch;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tuner;
pub mod wordvec;

pub use error::{Error, Result};
