use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self { dim: 128, window: 5, negatives: 5, epochs: 5, initial_lr: 0.025, subsample: 1e-4, seed: 1 }
    }
}

impl SkipGramConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 {
            return Err(Error::InvalidArgument("skip-gram needs dim > 0, window >= 1, negatives >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("skip-gram needs at least one epoch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramReport<T> {
    pub embeddings: EmbeddingMatrix<T>,
    /// Mean negative-sampling loss per (center, context) pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over consecutive windows of the first epoch (for convergence checks).
    pub first_epoch_trace: Vec<f64>,
}

/// Cumulative unigram^(3/4) distribution sampled by binary search.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("nonempty vocabulary");
        let r = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= r).min(self.cumulative.len() - 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn train_skipgram<T: Scalar>(
    sentences: &[Vec<usize>],
    vocab_size: usize,
    config: &SkipGramConfig,
) -> Result<SkipGramReport<T>> {
    train_skipgram_with(sentences, vocab_size, config, |_, _, _| {})
}

/// Skip-gram with negative sampling, single worker. `on_epoch` sees the input
/// (word) and output (context) vectors after every epoch.
pub fn train_skipgram_with<T: Scalar>(
    sentences: &[Vec<usize>],
    vocab_size: usize,
    config: &SkipGramConfig,
    mut on_epoch: impl FnMut(usize, &EmbeddingMatrix<T>, &EmbeddingMatrix<T>),
) -> Result<SkipGramReport<T>> {
    config.validate()?;
    let mut counts = vec![0u64; vocab_size];
    for s in sentences {
        for &w in s {
            if w >= vocab_size {
                return Err(Error::InvalidArgument(format!("token index {w} outside vocabulary of size {vocab_size}")));
            }
            counts[w] += 1;
        }
    }
    let total_words: u64 = counts.iter().sum();
    if total_words == 0 {
        return Err(Error::EmptyCorpus);
    }

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = T::of(0.5 / dim as f64);
    let mut input =
        Array2::from_shape_simple_fn((vocab_size, dim), || T::of(rng.random::<f64>()) * (half + half) - half);
    let mut output: Array2<T> = Array2::zeros((vocab_size, dim));
    let noise = NoiseTable::new(&counts);

    let keep_prob: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if config.subsample <= 0.0 || c == 0 {
                return 1.0;
            }
            let f = c as f64 / total_words as f64;
            ((f / config.subsample).sqrt() + 1.0) * config.subsample / f
        })
        .collect();

    let min_lr = config.initial_lr * 1e-4;
    let planned = (total_words as f64) * config.epochs as f64;
    let mut processed = 0u64;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut first_epoch_trace = Vec::new();
    let trace_every = 1000usize;
    let mut trace_sum = 0.0;
    let mut trace_n = 0usize;

    let mut grad_in = vec![T::zero(); dim];
    let mut kept = Vec::new();
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for sentence in sentences {
            kept.clear();
            for &w in sentence {
                processed += 1;
                if keep_prob[w] >= 1.0 || rng.random::<f64>() < keep_prob[w] {
                    kept.push(w);
                }
            }
            let progress = processed as f64 / planned;
            let lr = T::of((config.initial_lr - (config.initial_lr - min_lr) * progress).max(min_lr));
            for (pos, &center) in kept.iter().enumerate() {
                let radius = rng.random_range(1..=config.window);
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(kept.len() - 1);
                for (ctx_pos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = T::zero());
                    let mut pair_loss = 0.0;
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let score: T = input.row(center).dot(&output.row(target));
                        let p = sigmoid(score.to_f64_lossy());
                        pair_loss -= if label > 0.0 { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                        let g = T::of(label - p) * lr;
                        let out_row = output.row(target);
                        for (gi, &o) in grad_in.iter_mut().zip(out_row.iter()) {
                            *gi += g * o;
                        }
                        let in_row = input.row(center).to_owned();
                        output.row_mut(target).scaled_add(g, &in_row);
                    }
                    for (x, &g) in input.row_mut(center).iter_mut().zip(&grad_in) {
                        *x += g;
                    }
                    loss_sum += pair_loss;
                    pairs += 1;
                    if epoch == 0 {
                        trace_sum += pair_loss;
                        trace_n += 1;
                        if trace_n == trace_every {
                            first_epoch_trace.push(trace_sum / trace_n as f64);
                            trace_sum = 0.0;
                            trace_n = 0;
                        }
                    }
                }
            }
        }
        if epoch == 0 && trace_n > 0 {
            first_epoch_trace.push(trace_sum / trace_n as f64);
        }
        epoch_losses.push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
        log::debug!("skip-gram epoch {} loss {:.5}", epoch + 1, epoch_losses[epoch]);
        on_epoch(epoch, &EmbeddingMatrix::new(input.clone()), &EmbeddingMatrix::new(output.clone()));
    }

    let embeddings = EmbeddingMatrix::new(input);
    if !embeddings.all_finite() {
        return Err(Error::NonFinite { what: "skip-gram embeddings".into(), step: processed });
    }
    Ok(SkipGramReport { embeddings, epoch_losses, first_epoch_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::IndexedRandom;

    fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }

    /// Two topics with disjoint vocabularies: words 0..10 and 10..20.
    fn two_topic_corpus(seed: u64, n: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<usize> = (0..10).collect();
        let b: Vec<usize> = (10..20).collect();
        (0..n)
            .map(|i| {
                let pool = if i % 2 == 0 { &a } else { &b };
                (0..8).map(|_| *pool.choose(&mut rng).unwrap()).collect()
            })
            .collect()
    }

    #[test]
    fn topics_separate() {
        let corpus = two_topic_corpus(3, 600);
        let cfg = SkipGramConfig { dim: 16, epochs: 5, subsample: 0.0, ..Default::default() };
        let report = train_skipgram::<f64>(&corpus, 20, &cfg).unwrap();
        let e = report.embeddings.data();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..20 {
            for j in (i + 1)..20 {
                let c = cosine(e.row(i), e.row(j));
                if (i < 10) == (j < 10) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        let (intra, inter) = (intra / ni as f64, inter / nx as f64);
        assert!(intra > inter + 0.3, "intra {intra} inter {inter}");
    }

    #[test]
    fn repeated_pair_similarity_grows_over_early_epochs() {
        let corpus = vec![vec![0usize, 1]; 200];
        let cfg = SkipGramConfig { dim: 8, epochs: 4, subsample: 0.0, initial_lr: 0.025, ..Default::default() };
        // word vector of `a` against the context vector of `b`
        let mut sims = Vec::new();
        train_skipgram_with::<f64>(&corpus, 2, &cfg, |_, words, contexts| {
            sims.push(cosine(words.row(0), contexts.row(1)))
        })
        .unwrap();
        assert!(sims.windows(2).all(|w| w[1] >= w[0]), "{sims:?}");
    }

    #[test]
    fn dimension_and_determinism() {
        let corpus = two_topic_corpus(5, 100);
        let cfg = SkipGramConfig { dim: 128, epochs: 1, ..Default::default() };
        let a = train_skipgram::<f64>(&corpus, 20, &cfg).unwrap();
        let b = train_skipgram::<f64>(&corpus, 20, &cfg).unwrap();
        assert_eq!(a.embeddings.dim(), 128);
        assert_eq!(a.embeddings.rows(), 20);
        assert_eq!(a.embeddings, b.embeddings);
        assert!(!a.embeddings.has_zero_row());
    }

    #[test]
    fn first_epoch_loss_decreases() {
        let corpus = two_topic_corpus(9, 400);
        let tokens: usize = corpus.iter().map(Vec::len).sum();
        assert!(tokens >= 1000);
        let cfg = SkipGramConfig { dim: 16, epochs: 1, subsample: 0.0, ..Default::default() };
        let r = train_skipgram::<f64>(&corpus, 20, &cfg).unwrap();
        let trace = &r.first_epoch_trace;
        assert!(trace.len() >= 2);
        assert!(trace.last().unwrap() < trace.first().unwrap(), "{trace:?}");
    }

    #[test]
    fn empty_corpus_fails() {
        let cfg = SkipGramConfig::default();
        assert!(matches!(train_skipgram::<f64>(&[vec![]], 3, &cfg), Err(Error::EmptyCorpus)));
        assert!(matches!(train_skipgram::<f64>(&[], 3, &cfg), Err(Error::EmptyCorpus)));
    }
}
