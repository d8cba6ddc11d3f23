//! Unsupervised clustering of hyperspectral images with a Dirichlet-process
//! Gaussian mixture model.
//!
//! The pipeline is: load or synthesize a cube ([`cube`], [`synth`]),
//! standardize it per band, fit the mixture by gradient descent on the
//! combined likelihood-plus-prior loss ([`model`], [`train`]), turn the
//! fitted model into spatial segments ([`segment`]), and score them against
//! ground-truth regions ([`metrics`]). [`kmeans`] and [`bench`] provide the
//! k-means baseline and the runtime comparison harness.

pub mod bench;
pub mod cube;
pub mod kmeans;
pub mod math;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod segment;
pub mod synth;
pub mod train;
