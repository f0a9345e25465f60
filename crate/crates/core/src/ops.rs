//! Small vector kernels shared by the teacher and the student.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Softmax with max-subtraction.
pub fn softmax<T: Scalar>(logits: ArrayView1<T>) -> Array1<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum: T = out.iter().copied().sum();
    out.mapv_inplace(|v| v / sum);
    out
}

/// Backward pass of softmax: given `p = softmax(x)` and `dL/dp`, return `dL/dx`.
pub fn softmax_backward<T: Scalar>(p: ArrayView1<T>, grad_p: ArrayView1<T>) -> Array1<T> {
    let inner: T = p.dot(&grad_p);
    let mut out = Array1::zeros(p.len());
    for ((o, &pi), &gi) in out.iter_mut().zip(p.iter()).zip(grad_p.iter()) {
        *o = pi * (gi - inner);
    }
    out
}

pub fn norm<T: Scalar>(v: ArrayView1<T>) -> T {
    v.dot(&v).sqrt()
}

/// Cosine similarity; zero-norm inputs are rejected.
pub fn cosine_sim<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { what: "cosine operands", expected: vec![a.len()], found: vec![b.len()] });
    }
    let (na, nb) = (norm(a), norm(b));
    if na.is_zero() || nb.is_zero() {
        return Err(Error::ZeroNorm("cosine similarity"));
    }
    let c = a.dot(&b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter().filter(|v| **v > T::zero()).map(|&v| v * v.ln()).sum::<T>()
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_fixed_points() {
        let a = array![1.0f64, 2.0, 3.0];
        assert!((cosine_sim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
        let neg = a.mapv(|v: f64| -v);
        assert!((cosine_sim(a.view(), neg.view()).unwrap() + 1.0).abs() < 1e-15);
        let o = array![0.0, 3.0, -2.0];
        assert_eq!(cosine_sim(a.view(), o.view()).unwrap(), 0.0);
        let z = array![0.0, 0.0, 0.0];
        assert!(matches!(cosine_sim(a.view(), z.view()), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let p = softmax(array![1e6, 0.0, -1e6].view());
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|v: &f64| v.is_finite()));
    }

    #[test]
    fn entropy_and_argmax() {
        let u = vec![1.0 / 9.0; 9];
        assert!((entropy(&u) - 9f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }
}
