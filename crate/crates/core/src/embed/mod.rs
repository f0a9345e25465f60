//! Word embeddings: skip-gram training, text-format IO and k-means aspect
//! initialization.

mod io;
mod kmeans;
mod skipgram;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub use io::{load_embeddings, read_embedding_file, write_embedding_file, LoadedEmbeddings};
pub use kmeans::{kmeans_init, KMeansConfig, KMeansReport};
pub use skipgram::{train_skipgram, train_skipgram_with, SkipGramConfig, SkipGramReport};

/// Dense row-major matrix with one embedding per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingMatrix<T> {
    data: Array2<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(data: Array2<T>) -> Self {
        Self { data }
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self { data: Array2::zeros((rows, dim)) }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array2<T> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn has_zero_row(&self) -> bool {
        self.data.rows().into_iter().any(|r| r.iter().all(|v| v.is_zero()))
    }

    /// Convert between scalar types (e.g. f64 training, f32 export).
    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix { data: self.data.mapv(|v| U::of(v.to_f64_lossy())) }
    }
}
