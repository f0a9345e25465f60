//! Segment pooling by self-attention over word vectors.
//!
//! The query is the mean word vector `q`. Each token gets a score
//! `z_t = qᵀ(W e_t + b)`; smooth attention squashes it to `λ·tanh(z_t)`,
//! which bounds the ratio between any two weights by `e^{2λ}`. Regular
//! attention uses `z_t` directly and average pooling ignores it.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ops::{softmax, softmax_backward};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// `u_t = λ·tanh(z_t)`
    #[default]
    Smooth,
    /// `u_t = z_t`
    Regular,
    /// `α_t = 1/T`
    Average,
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionKind::Smooth => "ssa",
            AttentionKind::Regular => "rsa",
            AttentionKind::Average => "avgp",
        })
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssa" | "smooth" => Ok(AttentionKind::Smooth),
            "rsa" | "regular" => Ok(AttentionKind::Regular),
            "avgp" | "average" => Ok(AttentionKind::Average),
            other => Err(Error::InvalidArgument(format!("unknown attention kind {other:?}"))),
        }
    }
}

/// Intermediate values of one pooling pass, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    pub tokens: Vec<usize>,
    /// Query: mean of the segment's word vectors.
    pub query: Array1<T>,
    /// `Wᵀq`, so that `z_t = (Wᵀq)·e_t + q·b`.
    pub projected_query: Array1<T>,
    /// Pre-squash scores `z_t`.
    pub raw_scores: Array1<T>,
    /// Alignment scores `u_t`.
    pub scores: Array1<T>,
    pub alpha: Array1<T>,
    pub pooled: Array1<T>,
}

/// Gradients of the pooling parameters, plus per-token embedding gradients
/// when requested.
#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    /// `(token index, dL/de)` pairs in token order; repeated tokens repeat.
    pub embeddings: Vec<(usize, Array1<T>)>,
}

/// Borrowed view of one attention layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionLayer<'a, T> {
    pub weight: &'a Array2<T>,
    pub bias: &'a Array1<T>,
    pub kind: AttentionKind,
    pub lambda: T,
}

impl<T: Scalar> AttentionLayer<'_, T> {
    pub fn forward(&self, tokens: &[usize], embeddings: &EmbeddingMatrix<T>) -> Result<AttentionTrace<T>> {
        let AttentionLayer { weight, bias, kind, lambda } = *self;
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot pool an empty segment".into()));
        }
        let dim = embeddings.dim();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= embeddings.rows()) {
            return Err(Error::InvalidArgument(format!(
                "token {bad} outside embedding table of {} rows",
                embeddings.rows()
            )));
        }
        let t_len = T::of(tokens.len() as f64);
        let mut query = Array1::<T>::zeros(dim);
        for &t in tokens {
            query += &embeddings.row(t);
        }
        query.mapv_inplace(|v| v / t_len);

        let projected_query = weight.t().dot(&query);
        let offset = query.dot(bias);
        let raw_scores: Array1<T> = tokens.iter().map(|&t| projected_query.dot(&embeddings.row(t)) + offset).collect();
        let scores = match kind {
            AttentionKind::Smooth => raw_scores.mapv(|z| lambda * z.tanh()),
            AttentionKind::Regular => raw_scores.clone(),
            AttentionKind::Average => Array1::zeros(tokens.len()),
        };
        let alpha = match kind {
            AttentionKind::Average => Array1::from_elem(tokens.len(), T::one() / t_len),
            _ => softmax(scores.view()),
        };
        let mut pooled = Array1::<T>::zeros(dim);
        for (&t, &a) in tokens.iter().zip(alpha.iter()) {
            pooled.scaled_add(a, &embeddings.row(t));
        }
        Ok(AttentionTrace { tokens: tokens.to_vec(), query, projected_query, raw_scores, scores, alpha, pooled })
    }

    /// Backpropagate `dL/d pooled` through one pooling pass.
    pub fn backward(
        &self,
        trace: &AttentionTrace<T>,
        grad_pooled: ArrayView1<T>,
        embeddings: &EmbeddingMatrix<T>,
        embedding_grads: bool,
    ) -> AttentionGrads<T> {
        let AttentionLayer { weight, bias, kind, lambda } = *self;
        let dim = embeddings.dim();
        let n = trace.tokens.len();
        let mut grads =
            AttentionGrads { weight: Array2::zeros((dim, dim)), bias: Array1::zeros(dim), embeddings: Vec::new() };

        let grad_raw: Array1<T> = match kind {
            AttentionKind::Average => Array1::zeros(n),
            _ => {
                let grad_alpha: Array1<T> = trace.tokens.iter().map(|&t| grad_pooled.dot(&embeddings.row(t))).collect();
                let grad_scores = softmax_backward(trace.alpha.view(), grad_alpha.view());
                match kind {
                    AttentionKind::Smooth => {
                        let mut g = grad_scores;
                        for (gi, &z) in g.iter_mut().zip(trace.raw_scores.iter()) {
                            let th = z.tanh();
                            *gi *= lambda * (T::one() - th * th);
                        }
                        g
                    }
                    _ => grad_scores,
                }
            }
        };

        // z_t = qᵀ W e_t + qᵀ b  =>  dW = q ⊗ Σ_t g_t e_t,  db = (Σ_t g_t) q
        let mut weighted = Array1::<T>::zeros(dim);
        for (&t, &g) in trace.tokens.iter().zip(grad_raw.iter()) {
            weighted.scaled_add(g, &embeddings.row(t));
        }
        let grad_sum: T = grad_raw.iter().copied().sum();
        for (i, &qi) in trace.query.iter().enumerate() {
            grads.weight.row_mut(i).scaled_add(qi, &weighted);
        }
        grads.bias.scaled_add(grad_sum, &trace.query);

        if embedding_grads {
            // through q = mean(e): dL/dq = W (Σ g_t e_t) + (Σ g_t) b
            let mut grad_query = weight.dot(&weighted);
            grad_query.scaled_add(grad_sum, bias);
            let inv_len = T::one() / T::of(n as f64);
            for ((&t, &a), &g) in trace.tokens.iter().zip(trace.alpha.iter()).zip(grad_raw.iter()) {
                let mut ge = grad_pooled.to_owned() * a;
                ge.scaled_add(g, &trace.projected_query);
                ge.scaled_add(inv_len, &grad_query);
                grads.embeddings.push((t, ge));
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer<'a>(w: &'a Array2<f64>, b: &'a Array1<f64>, kind: AttentionKind, lambda: f64) -> AttentionLayer<'a, f64> {
        AttentionLayer { weight: w, bias: b, kind, lambda }
    }

    fn random_setup(seed: u64, v: usize, m: usize) -> (EmbeddingMatrix<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Array2::from_shape_simple_fn((v, m), || rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_simple_fn((m, m), || rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_simple_fn(m, || rng.random_range(-1.0..1.0));
        (EmbeddingMatrix::new(e), w, b)
    }

    #[test]
    fn singleton_segment() {
        let (e, w, b) = random_setup(1, 5, 4);
        let tr = layer(&w, &b, AttentionKind::Smooth, 0.5).forward(&[3], &e).unwrap();
        assert_eq!(tr.alpha.to_vec(), vec![1.0]);
        assert_eq!(tr.pooled, e.row(3));
    }

    #[test]
    fn identical_embeddings_split_evenly() {
        let (mut e, w, b) = random_setup(2, 5, 4);
        let row = e.row(0).to_owned();
        e.data_mut().row_mut(1).assign(&row);
        let tr = layer(&w, &b, AttentionKind::Regular, 0.5).forward(&[0, 1], &e).unwrap();
        assert!((tr.alpha[0] - 0.5).abs() < 1e-15 && (tr.alpha[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn average_pooling_is_uniform() {
        let (e, w, b) = random_setup(3, 8, 4);
        let tr = layer(&w, &b, AttentionKind::Average, 0.5).forward(&[0, 2, 5, 7], &e).unwrap();
        assert!(tr.alpha.iter().all(|&a| a == 0.25));
    }

    #[test]
    fn empty_segment_rejected() {
        let (e, w, b) = random_setup(4, 3, 2);
        assert!(layer(&w, &b, AttentionKind::Smooth, 0.5).forward(&[], &e).is_err());
        assert!(layer(&w, &b, AttentionKind::Smooth, 0.5).forward(&[7], &e).is_err());
    }

    #[test]
    fn smooth_ratio_bound_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..300 {
            let (e, w, b) = random_setup(trial, 12, 6);
            let w = w * 10.0;
            let len = rng.random_range(1..10);
            let toks: Vec<usize> = (0..len).map(|_| rng.random_range(0..12)).collect();
            let tr = layer(&w, &b, AttentionKind::Smooth, 0.5).forward(&toks, &e).unwrap();
            let max = tr.alpha.iter().copied().fold(f64::MIN, f64::max);
            let min = tr.alpha.iter().copied().fold(f64::MAX, f64::min);
            assert!(max / min <= 1f64.exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn monotone_squash_preserves_ordering() {
        let (e, w, b) = random_setup(5, 10, 4);
        let toks = [0, 3, 4, 9, 1];
        let base = layer(&w, &b, AttentionKind::Smooth, 0.5).forward(&toks, &e).unwrap();
        let scaled = layer(&(&w * 3.0), &(&b * 3.0), AttentionKind::Smooth, 0.5).forward(&toks, &e).unwrap();
        let order = |a: &Array1<f64>| {
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap());
            idx
        };
        assert_eq!(order(&base.alpha), order(&scaled.alpha));
    }

    /// Central finite differences on L = c·pooled for every input tensor.
    #[test]
    fn backward_matches_finite_differences() {
        for kind in [AttentionKind::Smooth, AttentionKind::Regular, AttentionKind::Average] {
            let (e, w, b) = random_setup(7, 6, 3);
            let c = Array1::from(vec![0.3, -1.2, 0.8]);
            let toks = vec![0, 2, 2, 5];
            let lambda = 1.5;
            let loss = |e: &EmbeddingMatrix<f64>, w: &Array2<f64>, b: &Array1<f64>| {
                layer(w, b, kind, lambda).forward(&toks, e).unwrap().pooled.dot(&c)
            };
            let tr = layer(&w, &b, kind, lambda).forward(&toks, &e).unwrap();
            let g = layer(&w, &b, kind, lambda).backward(&tr, c.view(), &e, true);
            let h = 1e-5;
            for i in 0..3 {
                for j in 0..3 {
                    let (mut wp, mut wm) = (w.clone(), w.clone());
                    wp[[i, j]] += h;
                    wm[[i, j]] -= h;
                    let fd = (loss(&e, &wp, &b) - loss(&e, &wm, &b)) / (2.0 * h);
                    assert!((fd - g.weight[[i, j]]).abs() < 1e-8, "{kind:?} W");
                }
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[i] += h;
                bm[i] -= h;
                let fd = (loss(&e, &w, &bp) - loss(&e, &w, &bm)) / (2.0 * h);
                assert!((fd - g.bias[i]).abs() < 1e-8, "{kind:?} b");
            }
            let mut dense = Array2::<f64>::zeros((6, 3));
            for (t, ge) in &g.embeddings {
                dense.row_mut(*t).scaled_add(1.0, ge);
            }
            for r in 0..6 {
                for j in 0..3 {
                    let (mut ep, mut em) = (e.clone(), e.clone());
                    ep.data_mut()[[r, j]] += h;
                    em.data_mut()[[r, j]] -= h;
                    let fd = (loss(&ep, &w, &b) - loss(&em, &w, &b)) / (2.0 * h);
                    assert!((fd - dense[[r, j]]).abs() < 1e-8, "{kind:?} E[{r},{j}] fd {fd} an {}", dense[[r, j]]);
                }
            }
        }
    }
}
