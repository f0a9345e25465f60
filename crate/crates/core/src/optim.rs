//! Adam with global-norm gradient clipping and the inverse-square-root
//! warmup schedule.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A fixed, ordered collection of trainable tensors. Gradients use the same type.
pub trait Parameters<T: Scalar> {
    fn tensors(&self) -> Vec<ArrayViewD<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>>;

    /// Names used in diagnostics, aligned with `tensors()`.
    fn tensor_names(&self) -> Vec<&'static str>;

    fn global_norm(&self) -> T {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&v| v * v).sum::<T>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    /// The `d` constant of the schedule.
    pub model_size: f64,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
    /// Multiplier on the scheduled learning rate.
    pub lr_scale: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 2000, model_size: 1e5, clip_norm: 2.0, lr_scale: 1.0 }
    }
}

/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn warmup_lr(step: u64, warmup_steps: u64, model_size: f64) -> Result<f64> {
    if step == 0 {
        return Err(Error::InvalidArgument("learning-rate schedule is defined for step >= 1".into()));
    }
    if warmup_steps == 0 || model_size <= 0.0 {
        return Err(Error::InvalidArgument("warmup_steps and model_size must be positive".into()));
    }
    let s = step as f64;
    Ok(model_size.powf(-0.5) * s.powf(-0.5).min(s * (warmup_steps as f64).powf(-1.5)))
}

impl OptimConfig {
    pub fn lr(&self, step: u64) -> Result<f64> {
        Ok(self.lr_scale * warmup_lr(step, self.warmup_steps, self.model_size)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub first_moment: Vec<ArrayD<T>>,
    pub second_moment: Vec<ArrayD<T>>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let zeros: Vec<ArrayD<T>> = params.tensors().iter().map(|t| ArrayD::zeros(t.raw_dim())).collect();
        Self { first_moment: zeros.clone(), second_moment: zeros, step: 0 }
    }

    /// One bias-corrected Adam update after clipping `grads` to `config.clip_norm`.
    /// Non-finite gradients abort without touching parameters or moments.
    pub fn step<P: Parameters<T>>(
        &mut self,
        params: &mut P,
        grads: &P,
        config: &OptimConfig,
        lr: f64,
    ) -> Result<StepStats> {
        let names = grads.tensor_names();
        let grad_tensors = grads.tensors();
        for (name, g) in names.iter().zip(&grad_tensors) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: format!("gradient of {name}"), step: self.step + 1 });
            }
        }
        let norm = grads.global_norm().to_f64_lossy();
        let clipped = config.clip_norm > 0.0 && norm > config.clip_norm;
        let scale = T::of(if clipped { config.clip_norm / norm } else { 1.0 });

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        let eps = T::of(config.eps);
        let lr = T::of(lr);
        let mut param_tensors = params.tensors_mut();
        if param_tensors.len() != grad_tensors.len() || param_tensors.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer tensor count",
                expected: vec![self.first_moment.len()],
                found: vec![param_tensors.len(), grad_tensors.len()],
            });
        }
        for (((p, g), m), v) in param_tensors
            .iter_mut()
            .zip(&grad_tensors)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    what: "optimizer tensor",
                    expected: m.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * scale;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepStats { grad_norm: norm, clipped })
    }
}
