use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::norm;
use crate::scalar::Scalar;

/// Which in-batch terms appear under the log in the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Only the negatives `j ≠ i`. Per-sample losses may be negative.
    #[default]
    ExcludePositive,
    /// Positive plus negatives (standard InfoNCE).
    IncludePositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss<T> {
    /// Mean of `per_sample`.
    pub loss: T,
    pub per_sample: Vec<T>,
    /// `sims[[i, j]] = cos(s_{j,E}, s_{i,A})`.
    pub sims: Array2<T>,
}

fn stack_normalized<T: Scalar>(rows: &[ArrayView1<T>], what: &'static str) -> Result<(Array2<T>, Vec<T>)> {
    let dim = rows[0].len();
    let mut out = Array2::zeros((rows.len(), dim));
    let mut norms = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::ShapeMismatch { what, expected: vec![dim], found: vec![r.len()] });
        }
        let n = norm(*r);
        if n.is_zero() || !n.is_finite() {
            return Err(Error::ZeroNorm(what));
        }
        out.row_mut(i).assign(&r.mapv(|v| v / n));
        norms.push(n);
    }
    Ok((out, norms))
}

fn in_denominator(denominator: Denominator, i: usize, j: usize) -> bool {
    i != j || denominator == Denominator::IncludePositive
}

/// Mean in-batch contrastive loss over `X ≥ 2` paired representations.
pub fn contrastive_batch_loss<T: Scalar>(
    segment_reprs: &[ArrayView1<T>],
    aspect_reprs: &[ArrayView1<T>],
    mu: T,
    denominator: Denominator,
) -> Result<ContrastiveLoss<T>> {
    let x = segment_reprs.len();
    if x < 2 {
        return Err(Error::BatchTooSmall(x));
    }
    if aspect_reprs.len() != x {
        return Err(Error::ShapeMismatch {
            what: "contrastive batch",
            expected: vec![x],
            found: vec![aspect_reprs.len()],
        });
    }
    let (seg, _) = stack_normalized(segment_reprs, "segment representation")?;
    let (asp, _) = stack_normalized(aspect_reprs, "aspect representation")?;
    let sims = asp.dot(&seg.t());
    let mut per_sample = Vec::with_capacity(x);
    for (i, row) in sims.axis_iter(Axis(0)).enumerate() {
        let logits: Vec<T> = row.iter().map(|&s| s / mu).collect();
        let max =
            (0..x).filter(|&j| in_denominator(denominator, i, j)).map(|j| logits[j]).fold(T::neg_infinity(), T::max);
        let sum: T = (0..x).filter(|&j| in_denominator(denominator, i, j)).map(|j| (logits[j] - max).exp()).sum();
        per_sample.push(max + sum.ln() - logits[i]);
    }
    let loss = per_sample.iter().copied().sum::<T>() / T::of(x as f64);
    Ok(ContrastiveLoss { loss, per_sample, sims })
}

/// Gradients of the mean loss with respect to each `s_E` and `s_A`.
pub fn contrastive_backward<T: Scalar>(
    segment_reprs: &[ArrayView1<T>],
    aspect_reprs: &[ArrayView1<T>],
    loss: &ContrastiveLoss<T>,
    mu: T,
    denominator: Denominator,
) -> Result<(Vec<Array1<T>>, Vec<Array1<T>>)> {
    let x = segment_reprs.len();
    let (seg, seg_norms) = stack_normalized(segment_reprs, "segment representation")?;
    let (asp, asp_norms) = stack_normalized(aspect_reprs, "aspect representation")?;
    let scale = T::one() / (mu * T::of(x as f64));

    // dL/dsims: (softmax over the denominator set - indicator of the positive) / (μX)
    let mut grad_sims = Array2::<T>::zeros((x, x));
    for i in 0..x {
        let row = loss.sims.row(i);
        let max =
            (0..x).filter(|&j| in_denominator(denominator, i, j)).map(|j| row[j] / mu).fold(T::neg_infinity(), T::max);
        let weights: Vec<T> = (0..x)
            .map(|j| if in_denominator(denominator, i, j) { (row[j] / mu - max).exp() } else { T::zero() })
            .collect();
        let total: T = weights.iter().copied().sum();
        for j in 0..x {
            let positive = if i == j { T::one() } else { T::zero() };
            grad_sims[[i, j]] = (weights[j] / total - positive) * scale;
        }
    }

    // sims = Â Ŝᵀ; then back through v/|v|: g ↦ (g - (g·v̂)v̂)/|v|
    let grad_seg_unit = grad_sims.t().dot(&asp);
    let grad_asp_unit = grad_sims.dot(&seg);
    let unnormalize = |units: &Array2<T>, grads: &Array2<T>, norms: &[T]| -> Vec<Array1<T>> {
        (0..x)
            .map(|k| {
                let u = units.row(k);
                let g = grads.row(k);
                let radial = g.dot(&u);
                (&g - &(&u * radial)) / norms[k]
            })
            .collect()
    };
    Ok((unnormalize(&seg, &grad_seg_unit, &seg_norms), unnormalize(&asp, &grad_asp_unit, &asp_norms)))
}

/// Frobenius norm of `ÂÂᵀ - I`, with `Â` the row-normalized aspect matrix.
pub fn regularizer<T: Scalar>(aspects: &Array2<T>) -> Result<T> {
    Ok(regularizer_with_grad(aspects)?.0)
}

/// Penalty value and its gradient with respect to the unnormalized `A`.
/// The gradient is taken as zero at the (non-differentiable) minimum.
pub fn regularizer_with_grad<T: Scalar>(aspects: &Array2<T>) -> Result<(T, Array2<T>)> {
    let rows: Vec<ArrayView1<T>> = aspects.rows().into_iter().collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("aspect matrix has no rows".into()));
    }
    let (unit, norms) = stack_normalized(&rows, "aspect embedding row")?;
    let mut diff = unit.dot(&unit.t());
    for i in 0..diff.nrows() {
        diff[[i, i]] -= T::one();
    }
    let omega = diff.iter().map(|&v| v * v).sum::<T>().sqrt();
    let mut grad = Array2::zeros(aspects.raw_dim());
    if omega > T::zero() {
        // dΩ/dÂ = 2 D Â / Ω (D symmetric)
        let grad_unit = diff.dot(&unit) * (T::of(2.0) / omega);
        for k in 0..unit.nrows() {
            let u = unit.row(k);
            let g = grad_unit.row(k);
            let radial = g.dot(&u);
            grad.row_mut(k).assign(&((&g - &(&u * radial)) / norms[k]));
        }
    }
    Ok((omega, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::cosine_sim;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal double loop over cosine similarities; independent of the
    /// matrix formulation above.
    fn oracle(seg: &[Array1<f64>], asp: &[Array1<f64>], mu: f64, include_positive: bool) -> (f64, Vec<f64>) {
        let x = seg.len();
        let mut per = Vec::new();
        for i in 0..x {
            let pos = (cosine_sim(seg[i].view(), asp[i].view()).unwrap() / mu).exp();
            let mut denom = 0.0;
            for j in 0..x {
                if j != i || include_positive {
                    denom += (cosine_sim(seg[j].view(), asp[i].view()).unwrap() / mu).exp();
                }
            }
            per.push(-(pos / denom).ln());
        }
        (per.iter().sum::<f64>() / x as f64, per)
    }

    fn views(v: &[Array1<f64>]) -> Vec<ArrayView1<'_, f64>> {
        v.iter().map(|a| a.view()).collect()
    }

    #[test]
    fn two_sample_arithmetic() {
        // sim(s1E, s1A) = 1, sim(s2E, s1A) = 0
        let seg = vec![Array1::from(vec![1.0, 0.0]), Array1::from(vec![0.0, 1.0])];
        let asp = vec![Array1::from(vec![2.0, 0.0]), Array1::from(vec![1.0, 1.0])];
        let l = contrastive_batch_loss(&views(&seg), &views(&asp), 1.0, Denominator::ExcludePositive).unwrap();
        assert!((l.per_sample[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_similarities_cancel() {
        let v = Array1::from(vec![0.3, 0.4]);
        let seg = vec![v.clone(), v.clone()];
        let asp = vec![v.clone(), v];
        let l = contrastive_batch_loss(&views(&seg), &views(&asp), 1.0, Denominator::ExcludePositive).unwrap();
        assert!(l.per_sample.iter().all(|&x| x.abs() < 1e-15));
        let l = contrastive_batch_loss(&views(&seg), &views(&asp), 1.0, Denominator::IncludePositive).unwrap();
        assert!(l.per_sample.iter().all(|&x| (x - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn batch_of_one_rejected() {
        let v = vec![Array1::from(vec![1.0, 0.0])];
        assert!(matches!(
            contrastive_batch_loss(&views(&v), &views(&v), 1.0, Denominator::ExcludePositive),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let seg: Vec<Array1<f64>> =
                (0..7).map(|_| Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0))).collect();
            let asp: Vec<Array1<f64>> =
                (0..7).map(|_| Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0))).collect();
            for (denom, incl) in [(Denominator::ExcludePositive, false), (Denominator::IncludePositive, true)] {
                let l = contrastive_batch_loss(&views(&seg), &views(&asp), 0.7, denom).unwrap();
                let (mean, per) = oracle(&seg, &asp, 0.7, incl);
                assert!((l.loss - mean).abs() < 1e-10);
                for (a, b) in l.per_sample.iter().zip(&per) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut seg: Vec<Array1<f64>> =
            (0..4).map(|_| Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0))).collect();
        let asp: Vec<Array1<f64>> =
            (0..4).map(|_| Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0))).collect();
        for denom in [Denominator::ExcludePositive, Denominator::IncludePositive] {
            let l = contrastive_batch_loss(&views(&seg), &views(&asp), 0.5, denom).unwrap();
            let (gs, ga) = contrastive_backward(&views(&seg), &views(&asp), &l, 0.5, denom).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                for d in 0..3 {
                    seg[k][d] += h;
                    let up = contrastive_batch_loss(&views(&seg), &views(&asp), 0.5, denom).unwrap().loss;
                    seg[k][d] -= 2.0 * h;
                    let down = contrastive_batch_loss(&views(&seg), &views(&asp), 0.5, denom).unwrap().loss;
                    seg[k][d] += h;
                    assert!(((up - down) / (2.0 * h) - gs[k][d]).abs() < 1e-7);
                }
            }
            assert_eq!(ga.len(), 4);
        }
    }

    #[test]
    fn regularizer_fixed_points() {
        let eye = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 2.5f64 } else { 0.0 });
        assert!(regularizer(&eye).unwrap().abs() < 1e-12);
        let dup = Array2::from_shape_vec((2, 2), vec![0.6, 0.8, 0.6, 0.8]).unwrap();
        assert!((regularizer(&dup).unwrap() - 2f64.sqrt()).abs() < 1e-9);
        let zero_row = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(regularizer(&zero_row), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn regularizer_nonnegative_and_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a: Array2<f64> = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let (omega, grad) = regularizer_with_grad(&a).unwrap();
        assert!(omega >= 0.0);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                a[[i, j]] += h;
                let up = regularizer(&a).unwrap();
                a[[i, j]] -= 2.0 * h;
                let down = regularizer(&a).unwrap();
                a[[i, j]] += h;
                assert!(((up - down) / (2.0 * h) - grad[[i, j]]).abs() < 1e-7);
            }
        }
    }
}
