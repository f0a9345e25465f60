use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::model::SsclModel;
use super::SsclConfig;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::scalar::Scalar;

/// One optimizer step, as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub omega: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch objective per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: Vec<StepLog>,
    /// Monitor score per epoch when a monitor was supplied.
    pub monitor_scores: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
}

/// Mini-batch training. Segments are reshuffled every epoch; a trailing batch
/// with fewer than two segments is skipped. When `monitor` is given it is
/// called after every epoch (higher is better), the best parameters are
/// restored at the end, and training stops after `config.patience` epochs
/// without improvement.
pub fn train<T: Scalar>(
    model: &mut SsclModel<T>,
    segments: &[Vec<usize>],
    config: &SsclConfig,
    seed: u64,
    mut monitor: Option<&mut dyn FnMut(&SsclModel<T>) -> f64>,
) -> Result<TrainReport> {
    if config.batch_size < 2 {
        return Err(Error::InvalidArgument("batch size must be at least 2".into()));
    }
    let usable: Vec<&[usize]> = segments.iter().filter(|s| !s.is_empty()).map(Vec::as_slice).collect();
    if usable.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(&model.params);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut best: Option<(f64, usize, super::SsclParams<T>)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let traces = chunk.iter().map(|&i| model.forward(usable[i])).collect::<Result<Vec<_>>>()?;
            let (loss, grads) = backward(model, &traces)?;
            let step = state.step + 1;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite { what: "training loss".into(), step });
            }
            let lr = config.optimizer.lr(step)?;
            let stats = state.step(&mut model.params, &grads, &config.optimizer, lr)?;
            if !model.params.all_finite() {
                return Err(Error::NonFinite { what: "teacher parameters".into(), step });
            }
            let total = loss.total.to_f64_lossy();
            report.steps.push(StepLog {
                step,
                epoch,
                lr,
                loss: total,
                omega: loss.omega.to_f64_lossy(),
                grad_norm: stats.grad_norm,
            });
            epoch_loss += total;
            batches += 1;
        }
        let mean = if batches > 0 { epoch_loss / batches as f64 } else { f64::NAN };
        report.epoch_losses.push(mean);
        log::info!("teacher epoch {} mean loss {:.6}", epoch + 1, mean);

        if let Some(score_fn) = monitor.as_mut() {
            let score = score_fn(model);
            report.monitor_scores.push(score);
            let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
            if improved {
                best = Some((score, epoch, model.params.clone()));
            } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= config.patience) {
                log::info!("early stop after epoch {}", epoch + 1);
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
