//! The contrastive teacher.
//!
//! Each segment gets two representations: an attention-pooled word-vector
//! summary `s_E` and a mixture of aspect embeddings `s_A` weighted by the
//! segment's aspect distribution `β`. Training pulls `s_E` and `s_A` of the
//! same segment together and pushes `s_A` away from the other segments'
//! `s_E` in the mini-batch, while an orthogonality penalty keeps the aspect
//! embeddings diverse.

mod backward;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::optim::OptimConfig;

pub use backward::{backward, batch_loss, BatchLoss};
pub use loss::{
    contrastive_backward, contrastive_batch_loss, regularizer, regularizer_with_grad, ContrastiveLoss, Denominator,
};
pub use model::{aspect_forward, AspectTrace, ForwardTrace, ProjectionInit, SsclHyper, SsclModel, SsclParams};
pub use train::{train, StepLog, TrainReport};

/// Teacher hyperparameters and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsclConfig {
    pub n_aspects: usize,
    /// Smooth factor λ.
    pub lambda: f64,
    /// Temperature μ.
    pub mu: f64,
    pub attention: AttentionKind,
    pub denominator: Denominator,
    pub projection_init: ProjectionInit,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs, used only when a monitor is supplied.
    pub patience: usize,
    pub optimizer: OptimConfig,
}

impl Default for SsclConfig {
    fn default() -> Self {
        Self {
            n_aspects: 30,
            lambda: 0.5,
            mu: 1.0,
            attention: AttentionKind::Smooth,
            denominator: Denominator::ExcludePositive,
            projection_init: ProjectionInit::Aspects,
            batch_size: 50,
            epochs: 10,
            patience: 3,
            optimizer: OptimConfig::default(),
        }
    }
}

impl SsclConfig {
    pub fn hyper(&self) -> SsclHyper {
        SsclHyper { lambda: self.lambda, mu: self.mu, attention: self.attention, denominator: self.denominator }
    }
}
