#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Supervised contrastive multimodal protein-protein interaction
//! prediction: sequence and graph features, a fusion encoder trained with
//! binary cross-entropy plus a filtered supervised contrastive loss, and
//! the tooling around it.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod ops;
pub mod params;
pub mod skipgram;
pub mod tensor;
pub mod training;

pub use config::Config;
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
