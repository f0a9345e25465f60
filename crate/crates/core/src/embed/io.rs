use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EmbeddingMatrix;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::io_util::{create_file, open_file};
use crate::scalar::Scalar;

/// Text format: header `rows dim`, then `token v1 .. vdim` per row, values in
/// scientific notation with 9 significant digits.
pub fn write_embedding_file<T: Scalar>(path: &Path, names: &[String], matrix: &EmbeddingMatrix<T>) -> Result<()> {
    if names.len() != matrix.rows() {
        return Err(Error::InvalidArgument(format!("{} names for {} rows", names.len(), matrix.rows())));
    }
    let mut f = create_file(path)?;
    let io = |e| Error::io(path, e);
    writeln!(f, "{} {}", matrix.rows(), matrix.dim()).map_err(io)?;
    for (name, row) in names.iter().zip(matrix.data().rows()) {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("token {name:?} cannot be written to an embedding file")));
        }
        f.write_all(name.as_bytes()).map_err(io)?;
        for v in row {
            write!(f, " {:.8e}", v.to_f64_lossy()).map_err(io)?;
        }
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_embedding_file<T: Scalar>(path: &Path) -> Result<(Vec<String>, EmbeddingMatrix<T>)> {
    let mut lines = open_file(path)?.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse { what: "embedding file", line: 1, msg: "missing header".into() })?
        .map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| Error::Parse { what: "embedding file", line, msg: msg.to_string() };
    let dims: Vec<usize> =
        header.split_whitespace().map(|t| t.parse().map_err(|_| bad(1, "bad header"))).collect::<Result<_>>()?;
    let [rows, dim] = dims[..] else {
        return Err(bad(1, "header must be `rows dim`"));
    };
    let mut names = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * dim);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts.next().expect("nonempty line");
        let before = values.len();
        for p in parts {
            let v: f64 = p.parse().map_err(|_| bad(n + 2, "bad number"))?;
            values.push(T::of(v));
        }
        if values.len() - before != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: values.len() - before });
        }
        names.push(name.to_string());
    }
    if names.len() != rows {
        return Err(bad(1, &format!("header promises {rows} rows, found {}", names.len())));
    }
    let data = Array2::from_shape_vec((rows, dim), values).expect("shape checked above");
    Ok((names, EmbeddingMatrix::new(data)))
}

#[derive(Debug, Clone)]
pub struct LoadedEmbeddings<T> {
    pub embeddings: EmbeddingMatrix<T>,
    /// Vocabulary words absent from the file, initialized randomly.
    pub missing: Vec<String>,
}

/// Load externally trained vectors aligned to `vocabulary`. Words missing
/// from the file get N(0, 0.01) rows (standard deviation 0.1).
pub fn load_embeddings<T: Scalar>(
    path: &Path,
    vocabulary: &Vocabulary,
    expected_dim: usize,
    seed: u64,
) -> Result<LoadedEmbeddings<T>> {
    let (names, file_matrix) = read_embedding_file::<T>(path)?;
    if file_matrix.dim() != expected_dim {
        return Err(Error::DimensionMismatch { expected: expected_dim, found: file_matrix.dim() });
    }
    let mut data = Array2::<T>::zeros((vocabulary.len(), expected_dim));
    let mut found = vec![false; vocabulary.len()];
    for (name, row) in names.iter().zip(file_matrix.data().rows()) {
        if let Some(i) = vocabulary.index(name) {
            data.row_mut(i).assign(&row);
            found[i] = true;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let mut missing = Vec::new();
    for (i, ok) in found.iter().enumerate() {
        if !ok {
            for v in data.row_mut(i) {
                *v = T::of(normal.sample(&mut rng));
            }
            missing.push(vocabulary.words()[i].clone());
        }
    }
    if !missing.is_empty() {
        log::warn!("{} vocabulary words missing from {}; initialized randomly", missing.len(), path.display());
    }
    Ok(LoadedEmbeddings { embeddings: EmbeddingMatrix::new(data), missing })
}
