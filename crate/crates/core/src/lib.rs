//! Unsupervised aspect detection for review corpora.
//!
//! The pipeline: tokenize segments ([`corpus`]), train word vectors and seed
//! aspect embeddings with k-means ([`embed`]), train the contrastive teacher
//! ([`sscl`]), interpret and map its aspects onto gold aspects ([`aspects`]),
//! distill the mapped labels into a student classifier ([`distill`]) and
//! score predictions ([`eval`]).
//!
//! Models are generic over the [`Scalar`] type; the aliases below fix it to
//! `f64` (training default) or `f32`.

pub mod aspects;
pub mod attention;
pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod embed;
pub mod error;
pub mod eval;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod sscl;
pub mod synthetic;
pub mod workspace;

mod io_util;

pub use error::{Error, Result};
pub use io_util::{read_to_string, sha256_hex, write_atomic};
pub use scalar::Scalar;

pub type EmbeddingMatrixF64 = embed::EmbeddingMatrix<f64>;
pub type EmbeddingMatrixF32 = embed::EmbeddingMatrix<f32>;
pub type SsclModelF64 = sscl::SsclModel<f64>;
pub type SsclModelF32 = sscl::SsclModel<f32>;
