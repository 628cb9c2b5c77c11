//! Small fair classifiers and disparate-treatment audits.
//!
//! The crate trains dense ReLU networks on tabular data in three fairness
//! regimes (a relaxed demographic-parity penalty, label massaging, and a
//! two-head network combined post hoc as `f + a1·g + a2`), and then audits
//! them:
//!
//! - [`data`]: synthetic generator, CSV ingest, splits, stratified batches
//! - [`nn`]: networks, manual backpropagation, Adam training loop
//! - [`fairness`]: DDP, regularizers, massaging, grid search, group thresholds
//! - [`stats`]: logistic regression, Kendall's tau, medians, average precision
//! - [`audit`]: probes, reconstructions, counterfactual flips, region analysis
//! - [`persist`]: versioned JSON model files

pub mod audit;
pub mod data;
pub mod error;
pub mod fairness;
pub mod math;
pub mod nn;
pub mod persist;
pub mod stats;

pub use data::{generate, load_csv, stratified_batches, CsvSource, Dataset, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use fairness::{CombinedClassifier, FairnessReport, GroupThresholds, MassagingPlan};
pub use nn::{train, Method, Network, Scores, TrainConfig};
