//! Sequence-to-set generative models for collections of categorical items.
//!
//! A set is produced by a sequential process that adds one item per step
//! until a reserved stop item is chosen. Training treats the generating
//! order as a latent variable and estimates the log-likelihood gradient
//! with importance sampling over the orders that can induce an observed
//! set. Three neural variants are provided (a GRU-driven model, a
//! permutation-invariant sum-pooling model, and a random walk over item
//! embeddings) plus explicit conditional tables used as ground truth in
//! tests and planted benchmarks.
//!
//! Module map:
//!
//! - [`data`]: item universes, sets, multisets, order files, the item graph.
//! - [`numerics`]: parameter storage, the gradient tape, GRU/MLP kernels,
//!   RMSProp and finite-difference checking.
//! - [`models`]: state evolution, action probabilities, exact likelihoods.
//! - [`sampler`]: posterior path sampling, gradient estimation, training.
//! - [`sizebias`]: biased size distributions and size-stratified resampling.
//! - [`eval`]: metrics, histogram baseline, pools and planted benchmarks.

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod sampler;
pub mod sizebias;

pub use data::{
    build_item_graph, empirical_size_distribution, induced_subgraph_connected, load_orders,
    ItemGraph, ItemSet, ItemUniverse, LoadedOrders, SetMultiset, SizeDistribution,
};
pub use error::{Error, Result};
pub use models::{Action, GenState, GeneratingPath, ModelKind, NeuralModel, SetModel, TabularModel};
