//! Independent scalar reference implementations, written with plain loops
//! over `Vec<f64>` and sharing no code with the library.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sscl_core::attention::AttentionKind;
use sscl_core::embed::EmbeddingMatrix;
use sscl_core::sscl::{Denominator, SsclHyper, SsclModel, SsclParams};

pub type Mat = Vec<Vec<f64>>;

#[derive(Clone, Debug)]
pub struct Reference {
    pub e: Mat,
    pub a: Mat,
    pub w: Mat,
    pub b: Vec<f64>,
    pub va: Mat,
    pub ba: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub kind: AttentionKind,
    pub include_positive: bool,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|v| v / s).collect()
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    dot(x, y) / (dot(x, x).sqrt() * dot(y, y).sqrt())
}

impl Reference {
    pub fn attention(&self, tokens: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let m = self.e[0].len();
        let t = tokens.len() as f64;
        let mut q = vec![0.0; m];
        for &tok in tokens {
            for j in 0..m {
                q[j] += self.e[tok][j] / t;
            }
        }
        let mut u = Vec::new();
        for &tok in tokens {
            let mut z = 0.0;
            for i in 0..m {
                let mut we = self.b[i];
                for j in 0..m {
                    we += self.w[i][j] * self.e[tok][j];
                }
                z += q[i] * we;
            }
            u.push(match self.kind {
                AttentionKind::Smooth => self.lambda * z.tanh(),
                AttentionKind::Regular => z,
                AttentionKind::Average => 0.0,
            });
        }
        let alpha = match self.kind {
            AttentionKind::Average => vec![1.0 / t; tokens.len()],
            _ => softmax(&u),
        };
        let mut s = vec![0.0; m];
        for (&tok, &a) in tokens.iter().zip(&alpha) {
            for j in 0..m {
                s[j] += a * self.e[tok][j];
            }
        }
        (alpha, s)
    }

    pub fn aspect(&self, s_e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let logits: Vec<f64> = self.va.iter().zip(&self.ba).map(|(row, bias)| dot(row, s_e) + bias).collect();
        let beta = softmax(&logits);
        let m = s_e.len();
        let mut s_a = vec![0.0; m];
        for (row, &bn) in self.a.iter().zip(&beta) {
            for j in 0..m {
                s_a[j] += bn * row[j];
            }
        }
        (beta, s_a)
    }

    pub fn objective(&self, batch: &[Vec<usize>]) -> f64 {
        let reps: Vec<(Vec<f64>, Vec<f64>)> = batch
            .iter()
            .map(|toks| {
                let (_, s_e) = self.attention(toks);
                let (_, s_a) = self.aspect(&s_e);
                (s_e, s_a)
            })
            .collect();
        let seg: Vec<Vec<f64>> = reps.iter().map(|r| r.0.clone()).collect();
        let asp: Vec<Vec<f64>> = reps.iter().map(|r| r.1.clone()).collect();
        contrastive_loop(&seg, &asp, self.mu, self.include_positive) + omega(&self.a)
    }

    pub fn model(&self) -> SsclModel<f64> {
        let to2 = |m: &Mat| Array2::from_shape_fn((m.len(), m[0].len()), |(i, j)| m[i][j]);
        SsclModel {
            word_embeddings: EmbeddingMatrix::new(to2(&self.e)),
            params: SsclParams {
                aspects: to2(&self.a),
                attn_weight: to2(&self.w),
                attn_bias: Array1::from(self.b.clone()),
                aspect_weight: to2(&self.va),
                aspect_bias: Array1::from(self.ba.clone()),
            },
            hyper: SsclHyper {
                lambda: self.lambda,
                mu: self.mu,
                attention: self.kind,
                denominator: if self.include_positive {
                    Denominator::IncludePositive
                } else {
                    Denominator::ExcludePositive
                },
            },
        }
    }

    /// Mutable access to every trainable scalar, in the library's tensor order.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        out.extend(self.a.iter_mut().flatten());
        out.extend(self.w.iter_mut().flatten());
        out.extend(self.b.iter_mut());
        out.extend(self.va.iter_mut().flatten());
        out.extend(self.ba.iter_mut());
        out
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let m = self.e[0].len();
        let n = self.a.len();
        vec![n * m, m * m, m, n * m, n]
    }
}

/// Mean over i of `−sim_ii/μ + ln Σ_{j≠i} exp(sim_ij/μ)` with
/// `sim_ij = cos(seg_j, asp_i)`.
pub fn contrastive_loop(seg: &[Vec<f64>], asp: &[Vec<f64>], mu: f64, include_positive: bool) -> f64 {
    let x = seg.len();
    let mut total = 0.0;
    for i in 0..x {
        let pos = cosine(&seg[i], &asp[i]) / mu;
        let mut denom = 0.0;
        for j in 0..x {
            if j != i || include_positive {
                denom += (cosine(&seg[j], &asp[i]) / mu).exp();
            }
        }
        total += -pos + denom.ln();
    }
    total / x as f64
}

/// `‖Â Âᵀ − I‖_F` with unit-normalized rows.
pub fn omega(a: &Mat) -> f64 {
    let normed: Mat = a
        .iter()
        .map(|r| {
            let n = dot(r, r).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let mut s = 0.0;
    for i in 0..normed.len() {
        for j in 0..normed.len() {
            let g = dot(&normed[i], &normed[j]) - if i == j { 1.0 } else { 0.0 };
            s += g * g;
        }
    }
    s.sqrt()
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn random_reference(seed: u64, v: usize, m: usize, n: usize) -> Reference {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = [AttentionKind::Smooth, AttentionKind::Regular, AttentionKind::Average][seed as usize % 3];
    Reference {
        e: random_mat(&mut rng, v, m, 1.0),
        a: random_mat(&mut rng, n, m, 1.0),
        w: random_mat(&mut rng, m, m, 0.5),
        b: random_mat(&mut rng, 1, m, 0.5).remove(0),
        va: random_mat(&mut rng, n, m, 1.0),
        ba: random_mat(&mut rng, 1, n, 0.5).remove(0),
        lambda: [0.5, 1.0, 2.0, 5.0][rng.random_range(0..4)],
        mu: [0.5, 1.0, 2.0][rng.random_range(0..3)],
        kind,
        include_positive: seed % 5 == 4,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, v: usize, x: usize, max_len: usize) -> Vec<Vec<usize>> {
    (0..x).map(|_| (0..rng.random_range(1..=max_len)).map(|_| rng.random_range(0..v)).collect()).collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; the absolute difference when both norms are
/// below 1e-8, since central differences of a constant are pure roundoff.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of the reference objective for every parameter,
/// grouped per tensor.
pub fn numeric_gradients(reference: &Reference, batch: &[Vec<usize>], h: f64) -> Vec<Vec<f64>> {
    let mut flat = Vec::new();
    let count = reference.clone().params_mut().len();
    for k in 0..count {
        let mut plus = reference.clone();
        *plus.params_mut()[k] += h;
        let mut minus = reference.clone();
        *minus.params_mut()[k] -= h;
        flat.push((plus.objective(batch) - minus.objective(batch)) / (2.0 * h));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for size in reference.tensor_sizes() {
        out.push(flat[offset..offset + size].to_vec());
        offset += size;
    }
    out
}
