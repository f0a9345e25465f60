//! The student classifier, trained on the teacher's confident hard labels.
//!
//! The student pools its own trainable word vectors with the same attention
//! layer as the teacher and feeds the result to a softmax classifier over the
//! gold aspects. Only segments whose teacher label entropy falls below the
//! threshold of their predicted class take part in training.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aspects::GoldLabel;
use crate::attention::{AttentionKind, AttentionLayer, AttentionTrace};
use crate::corpus::{preprocess, PreprocessOptions, Vocabulary};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ops::softmax;
use crate::optim::{AdamState, OptimConfig, Parameters};
use crate::scalar::Scalar;

/// Per-class entropy thresholds: `chi_g` for the General aspect, `chi_ng` for
/// every other aspect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub chi_g: f64,
    pub chi_ng: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { chi_g: 0.8, chi_ng: 1.4 }
    }
}

impl FilterConfig {
    /// Thresholds that admit every labeled segment.
    pub fn disabled() -> Self {
        Self { chi_g: f64::INFINITY, chi_ng: f64::INFINITY }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chi_g.is_nan() || self.chi_ng.is_nan() || self.chi_g < 0.0 || self.chi_ng < 0.0 {
            return Err(Error::InvalidArgument("entropy thresholds must be non-negative".into()));
        }
        if self.chi_g > self.chi_ng {
            return Err(Error::InvalidArgument(format!(
                "chi_g ({}) must not exceed chi_ng ({})",
                self.chi_g, self.chi_ng
            )));
        }
        Ok(())
    }
}

/// Whether a teacher label is confident enough to train on: `H(γ) < ξ_ŷ`.
/// Unknown and unmappable labels never pass.
pub fn entropy_filter(label: &GoldLabel, filter: &FilterConfig, general: Option<usize>) -> bool {
    let Some(y) = label.y_hat else { return false };
    if label.unmappable {
        return false;
    }
    let threshold = if Some(y) == general { filter.chi_g } else { filter.chi_ng };
    label.entropy < threshold
}

/// Indices of labels passing the filter.
pub fn select_confident(labels: &[GoldLabel], filter: &FilterConfig, general: Option<usize>) -> Vec<usize> {
    labels.iter().enumerate().filter(|(_, l)| entropy_filter(l, filter, general)).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Student smooth factor.
    pub lambda: f64,
    pub attention: AttentionKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Minimum count for the student vocabulary.
    pub min_count: u64,
    pub filter: FilterConfig,
    pub optimizer: OptimConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            attention: AttentionKind::Smooth,
            batch_size: 50,
            epochs: 20,
            patience: 3,
            min_count: 2,
            filter: FilterConfig::default(),
            optimizer: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentParams<T> {
    /// Trainable word vectors `E_s`, V_s×M.
    pub embeddings: Array2<T>,
    pub attn_weight: Array2<T>,
    pub attn_bias: Array1<T>,
    /// Classifier `W_cls`, K×M.
    pub cls_weight: Array2<T>,
    pub cls_bias: Array1<T>,
}

impl<T: Scalar> StudentParams<T> {
    fn zeros_like(other: &Self) -> Self {
        Self {
            embeddings: Array2::zeros(other.embeddings.raw_dim()),
            attn_weight: Array2::zeros(other.attn_weight.raw_dim()),
            attn_bias: Array1::zeros(other.attn_bias.raw_dim()),
            cls_weight: Array2::zeros(other.cls_weight.raw_dim()),
            cls_bias: Array1::zeros(other.cls_bias.raw_dim()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl<T: Scalar> Parameters<T> for StudentParams<T> {
    fn tensors(&self) -> Vec<ArrayViewD<'_, T>> {
        vec![
            self.embeddings.view().into_dyn(),
            self.attn_weight.view().into_dyn(),
            self.attn_bias.view().into_dyn(),
            self.cls_weight.view().into_dyn(),
            self.cls_bias.view().into_dyn(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.embeddings.view_mut().into_dyn(),
            self.attn_weight.view_mut().into_dyn(),
            self.attn_bias.view_mut().into_dyn(),
            self.cls_weight.view_mut().into_dyn(),
            self.cls_bias.view_mut().into_dyn(),
        ]
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        vec!["embeddings", "attn_weight", "attn_bias", "cls_weight", "cls_bias"]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel<T> {
    pub params: StudentParams<T>,
    pub lambda: f64,
    pub attention: AttentionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentTrace<T> {
    pub attention: AttentionTrace<T>,
    pub logits: Array1<T>,
    pub probs: Array1<T>,
}

/// Student output for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentPrediction {
    pub probs: Vec<f64>,
    /// Nothing in the segment survived tokenization; `probs` is uniform.
    pub empty_input: bool,
}

impl<T: Scalar> StudentModel<T> {
    /// Initialize around pre-trained word vectors; attention and classifier
    /// weights are `U(-1/√M, 1/√M)`, the classifier bias is zero.
    pub fn new(
        embeddings: EmbeddingMatrix<T>,
        n_classes: usize,
        lambda: f64,
        attention: AttentionKind,
        seed: u64,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidArgument("student needs at least one class".into()));
        }
        let dim = embeddings.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut uniform = || T::of(rng.random_range(-bound..bound));
        let params = StudentParams {
            attn_weight: Array2::from_shape_simple_fn((dim, dim), &mut uniform),
            attn_bias: Array1::from_shape_simple_fn(dim, &mut uniform),
            cls_weight: Array2::from_shape_simple_fn((n_classes, dim), &mut uniform),
            cls_bias: Array1::zeros(n_classes),
            embeddings: embeddings.into_inner(),
        };
        Ok(Self { params, lambda, attention })
    }

    pub fn n_classes(&self) -> usize {
        self.params.cls_bias.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.params.embeddings.nrows()
    }

    fn layer(&self) -> AttentionLayer<'_, T> {
        AttentionLayer {
            weight: &self.params.attn_weight,
            bias: &self.params.attn_bias,
            kind: self.attention,
            lambda: T::of(self.lambda),
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<StudentTrace<T>> {
        // the attention layer reads rows through an EmbeddingMatrix
        let table = EmbeddingMatrix::new(self.params.embeddings.clone());
        self.forward_with(tokens, &table)
    }

    fn forward_with(&self, tokens: &[usize], table: &EmbeddingMatrix<T>) -> Result<StudentTrace<T>> {
        let attention = self.layer().forward(tokens, table)?;
        let logits = self.params.cls_weight.dot(&attention.pooled) + &self.params.cls_bias;
        let probs = softmax(logits.view());
        Ok(StudentTrace { attention, logits, probs })
    }

    /// Class distribution for encoded tokens; empty input yields the uniform
    /// distribution with `empty_input` set.
    pub fn predict(&self, tokens: &[usize]) -> Result<StudentPrediction> {
        if tokens.is_empty() {
            let k = self.n_classes();
            return Ok(StudentPrediction { probs: vec![1.0 / k as f64; k], empty_input: true });
        }
        let trace = self.forward(tokens)?;
        Ok(StudentPrediction { probs: trace.probs.iter().map(|v| v.to_f64_lossy()).collect(), empty_input: false })
    }

    /// Batched prediction sharing one embedding table view.
    pub fn predict_many(&self, segments: &[&[usize]]) -> Result<Vec<StudentPrediction>> {
        let table = EmbeddingMatrix::new(self.params.embeddings.clone());
        let k = self.n_classes();
        segments
            .iter()
            .map(|tokens| {
                if tokens.is_empty() {
                    return Ok(StudentPrediction { probs: vec![1.0 / k as f64; k], empty_input: true });
                }
                let trace = self.forward_with(tokens, &table)?;
                Ok(StudentPrediction {
                    probs: trace.probs.iter().map(|v| v.to_f64_lossy()).collect(),
                    empty_input: false,
                })
            })
            .collect()
    }
}

/// Tokenize raw text on the student's path and predict.
pub fn student_predict<T: Scalar>(
    raw_text: &str,
    vocabulary: &Vocabulary,
    options: &PreprocessOptions,
    model: &StudentModel<T>,
) -> Result<StudentPrediction> {
    let tokens = vocabulary.encode(&preprocess(raw_text, options));
    let prediction = model.predict(&tokens)?;
    if prediction.empty_input {
        log::warn!("student input {raw_text:?} has no in-vocabulary tokens; returning the uniform distribution");
    }
    Ok(prediction)
}

/// `(1/B) Σ_i −(1/K) ln y_{i,ŷ_i}` over a batch of `(tokens, label)` pairs.
pub fn student_batch_loss<T: Scalar>(model: &StudentModel<T>, batch: &[(&[usize], usize)]) -> Result<T> {
    let table = EmbeddingMatrix::new(model.params.embeddings.clone());
    let k = T::of(model.n_classes() as f64);
    let mut total = T::zero();
    for (tokens, y) in batch {
        let trace = model.forward_with(tokens, &table)?;
        total += -trace.probs[*y].ln() / k;
    }
    Ok(total / T::of(batch.len() as f64))
}

/// Loss and gradients of [`student_batch_loss`].
pub fn student_backward<T: Scalar>(
    model: &StudentModel<T>,
    batch: &[(&[usize], usize)],
) -> Result<(T, StudentParams<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty student batch".into()));
    }
    let k = model.n_classes();
    if let Some((_, bad)) = batch.iter().find(|(_, y)| *y >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    let table = EmbeddingMatrix::new(model.params.embeddings.clone());
    let layer = model.layer();
    let mut grads = StudentParams::zeros_like(&model.params);
    let scale = T::one() / (T::of(k as f64) * T::of(batch.len() as f64));
    let mut total = T::zero();
    for (tokens, y) in batch {
        let trace = model.forward_with(tokens, &table)?;
        total += -trace.probs[*y].ln();
        // d/dlogits of −ln y_ŷ is y − onehot
        let mut g_logits = trace.probs.clone();
        g_logits[*y] -= T::one();
        g_logits.mapv_inplace(|v| v * scale);
        for (c, &g) in g_logits.iter().enumerate() {
            grads.cls_weight.row_mut(c).scaled_add(g, &trace.attention.pooled);
        }
        grads.cls_bias += &g_logits;
        let g_pooled = model.params.cls_weight.t().dot(&g_logits);
        let ag = layer.backward(&trace.attention, g_pooled.view(), &table, true);
        grads.attn_weight += &ag.weight;
        grads.attn_bias += &ag.bias;
        for (t, ge) in ag.embeddings {
            grads.embeddings.row_mut(t).scaled_add(T::one(), &ge);
        }
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    /// Number of training segments that passed the filter.
    pub n_train: usize,
    pub epoch_losses: Vec<f64>,
    pub monitor_scores: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Train the student on the segments whose teacher labels pass `config.filter`.
/// `segments[i]` is the student encoding of the segment labeled by `labels[i]`.
/// The monitor (higher is better) drives early stopping.
pub fn distill_train<T: Scalar>(
    model: &mut StudentModel<T>,
    segments: &[Vec<usize>],
    labels: &[GoldLabel],
    general: Option<usize>,
    config: &DistillConfig,
    seed: u64,
    monitor: Option<&mut dyn FnMut(&StudentModel<T>) -> f64>,
) -> Result<DistillReport> {
    if segments.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "segments vs teacher labels",
            expected: vec![labels.len()],
            found: vec![segments.len()],
        });
    }
    config.filter.validate()?;
    let examples: Vec<(&[usize], usize)> = select_confident(labels, &config.filter, general)
        .into_iter()
        .filter(|&i| !segments[i].is_empty())
        .map(|i| (segments[i].as_slice(), labels[i].y_hat.expect("filtered labels are known")))
        .collect();
    if examples.is_empty() {
        return Err(Error::EmptyFilteredSet);
    }
    train_on_examples(model, &examples, config, seed, monitor)
}

/// The training loop on already-selected `(tokens, label)` pairs.
pub fn train_on_examples<T: Scalar>(
    model: &mut StudentModel<T>,
    examples: &[(&[usize], usize)],
    config: &DistillConfig,
    seed: u64,
    mut monitor: Option<&mut dyn FnMut(&StudentModel<T>) -> f64>,
) -> Result<DistillReport> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if examples.is_empty() {
        return Err(Error::EmptyFilteredSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(&model.params);
    let mut report = DistillReport { n_train: examples.len(), ..Default::default() };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best: Option<(f64, usize, StudentParams<T>)> = None;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (loss, grads) = student_backward(model, &batch)?;
            let step = state.step + 1;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "student loss".into(), step });
            }
            let lr = config.optimizer.lr(step)?;
            state.step(&mut model.params, &grads, &config.optimizer, lr)?;
            if !model.params.all_finite() {
                return Err(Error::NonFinite { what: "student parameters".into(), step });
            }
            epoch_loss += loss.to_f64_lossy();
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        report.epoch_losses.push(mean);
        log::info!("student epoch {} mean loss {:.6}", epoch + 1, mean);

        if let Some(score_fn) = monitor.as_mut() {
            let score = score_fn(model);
            report.monitor_scores.push(score);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.params.clone()));
            } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= config.patience) {
                log::info!("student early stop after epoch {}", epoch + 1);
                break;
            }
        }
    }
    if let Some((_, epoch, params)) = best {
        model.params = params;
        report.best_epoch = Some(epoch);
    } else {
        report.best_epoch = report.epoch_losses.len().checked_sub(1);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::entropy;

    fn label(gamma: Vec<f64>, y_hat: Option<usize>) -> GoldLabel {
        GoldLabel { entropy: entropy(&gamma), raw_gamma: gamma.clone(), gamma, y_hat, unmappable: false }
    }

    fn with_entropy(h: f64, y: usize) -> GoldLabel {
        GoldLabel { gamma: vec![], raw_gamma: vec![], y_hat: Some(y), entropy: h, unmappable: false }
    }

    #[test]
    fn filter_examples() {
        let f = FilterConfig { chi_g: 0.8, chi_ng: 1.4 };
        assert!(entropy_filter(&label(vec![0.0, 1.0, 0.0], Some(1)), &f, Some(0)));
        let uniform = label(vec![1.0 / 9.0; 9], Some(0));
        assert!(!entropy_filter(&uniform, &FilterConfig { chi_g: 1.2, chi_ng: 1.8 }, None));
        let general = 2;
        assert!(!entropy_filter(&with_entropy(0.9, general), &f, Some(general)));
        assert!(entropy_filter(&with_entropy(0.9, 0), &f, Some(general)));
    }

    #[test]
    fn filter_monotone_and_disabled() {
        let labels: Vec<GoldLabel> = (0..50).map(|i| with_entropy(i as f64 * 0.05, i % 3)).collect();
        let mut prev = select_confident(&labels, &FilterConfig { chi_g: 0.7, chi_ng: 1.4 }, Some(0));
        for chi_ng in [1.6, 1.8, 2.5] {
            let next = select_confident(&labels, &FilterConfig { chi_g: 0.7, chi_ng }, Some(0));
            assert!(prev.iter().all(|i| next.contains(i)));
            prev = next;
        }
        assert_eq!(select_confident(&labels, &FilterConfig::disabled(), Some(0)).len(), labels.len());
    }

    #[test]
    fn unknown_and_unmappable_never_pass() {
        let f = FilterConfig::disabled();
        assert!(!entropy_filter(&label(vec![1.0, 0.0], None), &f, None));
        let mut l = label(vec![0.5, 0.5], Some(1));
        l.unmappable = true;
        assert!(!entropy_filter(&l, &f, Some(1)));
    }

    #[test]
    fn threshold_validation() {
        assert!(FilterConfig { chi_g: 1.5, chi_ng: 1.4 }.validate().is_err());
        assert!(FilterConfig::default().validate().is_ok());
        assert!(FilterConfig::disabled().validate().is_ok());
    }

    fn small_student(seed: u64) -> StudentModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Array2::from_shape_simple_fn((12, 5), || rng.random_range(-1.0..1.0));
        StudentModel::new(EmbeddingMatrix::new(e), 3, 0.5, AttentionKind::Smooth, seed).unwrap()
    }

    #[test]
    fn all_filtered_is_an_error() {
        let mut m = small_student(1);
        let segs = vec![vec![0, 1], vec![2, 3]];
        let labels = vec![with_entropy(0.3, 0), with_entropy(0.5, 1)];
        let cfg = DistillConfig { filter: FilterConfig { chi_g: 0.0, chi_ng: 0.0 }, ..Default::default() };
        assert!(matches!(distill_train(&mut m, &segs, &labels, Some(0), &cfg, 0, None), Err(Error::EmptyFilteredSet)));
    }

    #[test]
    fn prediction_is_normalized_and_pure() {
        let m = small_student(2);
        let a = m.predict(&[1, 4, 4, 7]).unwrap();
        let b = m.predict(&[1, 4, 4, 7]).unwrap();
        assert_eq!(a, b);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let empty = m.predict(&[]).unwrap();
        assert!(empty.empty_input);
        assert!(empty.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = small_student(3);
        let batch: Vec<(&[usize], usize)> = vec![(&[0, 1, 2], 0), (&[3, 3, 5, 9], 2), (&[11], 1)];
        let (_, grads) = student_backward(&m, &batch).unwrap();
        let h = 1e-5;
        for (ti, g) in grads.tensors().iter().enumerate() {
            let mut num = Vec::with_capacity(g.len());
            for j in 0..g.len() {
                let mut plus = m.clone();
                let mut minus = m.clone();
                *plus.params.tensors_mut()[ti].iter_mut().nth(j).unwrap() += h;
                *minus.params.tensors_mut()[ti].iter_mut().nth(j).unwrap() -= h;
                let lp = student_batch_loss(&plus, &batch).unwrap();
                let lm = student_batch_loss(&minus, &batch).unwrap();
                num.push((lp - lm) / (2.0 * h));
            }
            let diff: f64 = num.iter().zip(g.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 =
                num.iter().map(|a| a * a).sum::<f64>().sqrt().max(g.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff <= 1e-6 * scale.max(1e-8) || diff < 1e-10, "tensor {ti}: {diff} vs {scale}");
        }
    }

    #[test]
    fn learns_a_separable_toy_task() {
        let mut m = small_student(4);
        let examples: Vec<(Vec<usize>, usize)> =
            (0..60).map(|i| ((0..3).map(|j| (i + j) % 4 + 4 * (i % 3)).collect(), i % 3)).collect();
        let refs: Vec<(&[usize], usize)> = examples.iter().map(|(t, y)| (t.as_slice(), *y)).collect();
        let before = student_batch_loss(&m, &refs).unwrap();
        let mut cfg = DistillConfig { batch_size: 10, epochs: 30, ..Default::default() };
        cfg.optimizer.lr_scale = 2000.0;
        train_on_examples(&mut m, &refs, &cfg, 0, None).unwrap();
        let after = student_batch_loss(&m, &refs).unwrap();
        assert!(after < before * 0.5, "{before} -> {after}");
    }
}
