//! Sparse stochastic variational inference and collapsed Gibbs sampling for
//! RelLDA, a multi-view LDA-style model that clusters entity-pair sentences
//! into latent relations.
//!
//! Each sentence carries one latent relation and emits counts over several
//! feature-type vocabularies. [`ssvi::train`] fits a variational posterior
//! over the relation/feature distributions with sparse minibatch updates;
//! [`gibbs::run_gibbs`] is a fully collapsed baseline sampler.

pub mod artifact;
pub mod assignment;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gibbs;
pub mod hyperopt;
pub mod metrics;
pub mod model_file;
pub mod numerics;
pub mod ssvi;
pub mod synth;

pub use error::{Error, Result};
