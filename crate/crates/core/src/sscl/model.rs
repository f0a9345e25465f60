use ndarray::{Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Denominator;
use crate::attention::{AttentionKind, AttentionLayer, AttentionTrace};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ops::softmax;
use crate::optim::Parameters;
use crate::scalar::Scalar;

/// How the aspect-scoring vectors `v_A` start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionInit {
    /// Copy of the initial aspect embeddings, so `β` starts as a softmax over
    /// inner products with the k-means centroids.
    #[default]
    Aspects,
    /// `U(-1/√M, 1/√M)`, like a freshly initialized linear layer.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsclHyper {
    pub lambda: f64,
    pub mu: f64,
    pub attention: AttentionKind,
    pub denominator: Denominator,
}

/// Trainable teacher tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsclParams<T> {
    /// Aspect embeddings `A`, N×M.
    pub aspects: Array2<T>,
    /// Attention projection `W_E`, M×M.
    pub attn_weight: Array2<T>,
    /// Attention bias `b_E`, M.
    pub attn_bias: Array1<T>,
    /// Aspect scoring vectors `v_A`, N×M.
    pub aspect_weight: Array2<T>,
    /// Aspect scoring biases `b_A`, N.
    pub aspect_bias: Array1<T>,
}

impl<T: Scalar> SsclParams<T> {
    pub fn zeros(n_aspects: usize, dim: usize) -> Self {
        Self {
            aspects: Array2::zeros((n_aspects, dim)),
            attn_weight: Array2::zeros((dim, dim)),
            attn_bias: Array1::zeros(dim),
            aspect_weight: Array2::zeros((n_aspects, dim)),
            aspect_bias: Array1::zeros(n_aspects),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl<T: Scalar> Parameters<T> for SsclParams<T> {
    fn tensors(&self) -> Vec<ArrayViewD<'_, T>> {
        vec![
            self.aspects.view().into_dyn(),
            self.attn_weight.view().into_dyn(),
            self.attn_bias.view().into_dyn(),
            self.aspect_weight.view().into_dyn(),
            self.aspect_bias.view().into_dyn(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.aspects.view_mut().into_dyn(),
            self.attn_weight.view_mut().into_dyn(),
            self.attn_bias.view_mut().into_dyn(),
            self.aspect_weight.view_mut().into_dyn(),
            self.aspect_bias.view_mut().into_dyn(),
        ]
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        vec!["aspects", "attn_weight", "attn_bias", "aspect_weight", "aspect_bias"]
    }
}

/// Teacher model: frozen word embeddings plus the trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsclModel<T> {
    pub word_embeddings: EmbeddingMatrix<T>,
    pub params: SsclParams<T>,
    pub hyper: SsclHyper,
}

/// Aspect side of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectTrace<T> {
    pub logits: Array1<T>,
    /// Distribution over model-inferred aspects.
    pub beta: Array1<T>,
    /// `s_A = Σ β_n A_n`.
    pub aspect_repr: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub attention: AttentionTrace<T>,
    pub aspect: AspectTrace<T>,
}

impl<T> ForwardTrace<T> {
    pub fn segment_repr(&self) -> &Array1<T> {
        &self.attention.pooled
    }

    pub fn aspect_repr(&self) -> &Array1<T> {
        &self.aspect.aspect_repr
    }
}

/// `β = softmax(v_A s_E + b_A)`, `s_A = Aᵀβ`.
pub fn aspect_forward<T: Scalar>(
    segment_repr: ArrayView1<T>,
    aspects: &Array2<T>,
    aspect_weight: &Array2<T>,
    aspect_bias: &Array1<T>,
) -> Result<AspectTrace<T>> {
    if segment_repr.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "segment representation".into(), step: 0 });
    }
    let logits = aspect_weight.dot(&segment_repr) + aspect_bias;
    let beta = softmax(logits.view());
    let aspect_repr = aspects.t().dot(&beta);
    Ok(AspectTrace { logits, beta, aspect_repr })
}

impl<T: Scalar> SsclModel<T> {
    /// Build a model around frozen word vectors and initial aspect embeddings.
    pub fn new(
        word_embeddings: EmbeddingMatrix<T>,
        initial_aspects: EmbeddingMatrix<T>,
        hyper: SsclHyper,
        projection_init: ProjectionInit,
        seed: u64,
    ) -> Result<Self> {
        let dim = word_embeddings.dim();
        if initial_aspects.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: initial_aspects.dim() });
        }
        let n = initial_aspects.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut uniform = || T::of(rng.random_range(-bound..bound));
        let attn_weight = Array2::from_shape_simple_fn((dim, dim), &mut uniform);
        let attn_bias = Array1::from_shape_simple_fn(dim, &mut uniform);
        let aspect_weight = match projection_init {
            ProjectionInit::Aspects => initial_aspects.data().clone(),
            ProjectionInit::Uniform => Array2::from_shape_simple_fn((n, dim), &mut uniform),
        };
        let params = SsclParams {
            aspects: initial_aspects.into_inner(),
            attn_weight,
            attn_bias,
            aspect_weight,
            aspect_bias: Array1::zeros(n),
        };
        Ok(Self { word_embeddings, params, hyper })
    }

    pub fn n_aspects(&self) -> usize {
        self.params.aspects.nrows()
    }

    pub fn dim(&self) -> usize {
        self.word_embeddings.dim()
    }

    pub fn attention_layer(&self) -> AttentionLayer<'_, T> {
        AttentionLayer {
            weight: &self.params.attn_weight,
            bias: &self.params.attn_bias,
            kind: self.hyper.attention,
            lambda: T::of(self.hyper.lambda),
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardTrace<T>> {
        let attention = self.attention_layer().forward(tokens, &self.word_embeddings)?;
        let aspect = aspect_forward(
            attention.pooled.view(),
            &self.params.aspects,
            &self.params.aspect_weight,
            &self.params.aspect_bias,
        )?;
        Ok(ForwardTrace { attention, aspect })
    }

    /// Soft label over model-inferred aspects for one segment.
    pub fn aspect_distribution(&self, tokens: &[usize]) -> Result<Array1<T>> {
        Ok(self.forward(tokens)?.aspect.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_scorer_gives_uniform_beta() {
        let a = random(1, 4, 3);
        let s = Array1::from(vec![0.2, -0.4, 1.0]);
        let tr = aspect_forward(s.view(), &a, &Array2::zeros((4, 3)), &Array1::zeros(4)).unwrap();
        assert!(tr.beta.iter().all(|&b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn saturated_bias_selects_one_aspect() {
        let a = random(2, 5, 3);
        let s = Array1::from(vec![0.1, 0.1, 0.1]);
        let mut bias = Array1::zeros(5);
        bias[3] = 1e6;
        let tr = aspect_forward(s.view(), &a, &random(3, 5, 3), &bias).unwrap();
        assert!((tr.beta[3] - 1.0).abs() < 1e-12);
        for (x, y) in tr.aspect_repr.iter().zip(a.row(3)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn beta_normalized(seed in 0u64..10_000, scale in 0.1f64..50.0) {
            let a = random(seed, 6, 4);
            let v = random(seed + 1, 6, 4) * scale;
            let b = Array1::from(random(seed + 2, 1, 6).row(0).to_vec());
            let s = Array1::from(random(seed + 3, 1, 4).row(0).to_vec());
            let tr = aspect_forward(s.view(), &a, &v, &b).unwrap();
            prop_assert!((tr.beta.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(tr.beta.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn projection_init_copies_aspects() {
        let e = EmbeddingMatrix::new(random(4, 10, 3));
        let a = EmbeddingMatrix::new(random(5, 4, 3));
        let hyper = SsclHyper {
            lambda: 0.5,
            mu: 1.0,
            attention: AttentionKind::Smooth,
            denominator: Denominator::ExcludePositive,
        };
        let m = SsclModel::new(e, a.clone(), hyper, ProjectionInit::Aspects, 0).unwrap();
        assert_eq!(&m.params.aspect_weight, a.data());
        assert!(m.params.aspect_bias.iter().all(|&b| b == 0.0));
        let bad = EmbeddingMatrix::new(random(5, 4, 2));
        assert!(SsclModel::new(EmbeddingMatrix::new(random(4, 10, 3)), bad, hyper, ProjectionInit::Aspects, 0).is_err());
    }
}
