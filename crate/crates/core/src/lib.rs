//! Principal sensitivity analysis (PSA) for small feed-forward classifiers.
//!
//! The pipeline: generate or ingest labeled digit images ([`data`]), train a
//! classifier ([`mlp`]), collect the input gradients of a class log-posterior
//! over a dataset, and decompose their uncentered second-moment matrix, the
//! sensitivity kernel ([`psa`]). Eigenvectors of the kernel are principal
//! sensitivity maps; [`sparse`] fits an L1-penalized dictionary to the same
//! gradients, and [`render`] turns maps into heatmaps.

// Index loops read closer to the matrix algebra than iterator chains here.
#![allow(clippy::needless_range_loop)]

mod binio;
pub mod data;
pub mod error;
pub mod linalg;
pub mod mlp;
pub mod psa;
pub mod render;
pub mod sparse;

pub use error::{PsaError, Result};
