//! Latent-space search for conditional image generators.
//!
//! The crate searches the structured latent input of a generator so that
//! the generated image's encoder features align with a target feature
//! vector, using Adam, CMA-ES, or a hybrid that refines every CMA-ES
//! candidate with a few Adam steps. Result diversity is measured by pooling
//! sample features, embedding them with t-SNE, binning the embedding into a
//! grid, and comparing cell occupancy between methods by the Jaccard index.
//!
//! Module map:
//!
//! * [`latent`]: structured latent codes and their flat layout.
//! * [`objective`]: cutouts, cosine fitness, generator/encoder traits.
//! * [`optim`]: Adam, CMA-ES, hybrid drivers with budget accounting.
//! * [`toy`]: small differentiable generator/encoder for desk-scale runs.
//! * [`evaluation`]: t-SNE, grid occupancy, Jaccard, fitness curves.
//! * [`bridge`]: client for an external model server.
//! * [`experiment`]: configuration, repeated runs, artifacts, reports.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod image_tensor;
pub mod latent;
pub mod objective;
pub mod optim;
pub mod seed;
pub mod toy;

pub use error::{Error, Result};
pub use image_tensor::ImageTensor;
pub use latent::{InitStrategy, LatentCode, LatentInit, LatentShape};
pub use objective::{cosine_similarity, CutoutPolicy, FeatureVector, FitnessFunction, Objective};
