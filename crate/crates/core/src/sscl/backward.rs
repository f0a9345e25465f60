use ndarray::{Array1, ArrayView1};

use super::loss::{contrastive_backward, contrastive_batch_loss, regularizer_with_grad};
use super::model::{ForwardTrace, SsclModel, SsclParams};
use crate::error::Result;
use crate::ops::softmax_backward;
use crate::scalar::Scalar;

/// Objective of one mini-batch: mean contrastive loss plus the aspect penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss<T> {
    pub total: T,
    pub contrastive: T,
    pub omega: T,
    pub per_sample: Vec<T>,
}

fn loss_from_traces<T: Scalar>(
    model: &SsclModel<T>,
    traces: &[ForwardTrace<T>],
) -> Result<(BatchLoss<T>, super::ContrastiveLoss<T>)> {
    let seg: Vec<ArrayView1<T>> = traces.iter().map(|t| t.segment_repr().view()).collect();
    let asp: Vec<ArrayView1<T>> = traces.iter().map(|t| t.aspect_repr().view()).collect();
    let mu = T::of(model.hyper.mu);
    let contrastive = contrastive_batch_loss(&seg, &asp, mu, model.hyper.denominator)?;
    let omega = super::regularizer(&model.params.aspects)?;
    let loss = BatchLoss {
        total: contrastive.loss + omega,
        contrastive: contrastive.loss,
        omega,
        per_sample: contrastive.per_sample.clone(),
    };
    Ok((loss, contrastive))
}

/// Forward-only objective for a batch of token sequences.
pub fn batch_loss<T: Scalar>(model: &SsclModel<T>, batch: &[&[usize]]) -> Result<BatchLoss<T>> {
    let traces = batch.iter().map(|toks| model.forward(toks)).collect::<Result<Vec<_>>>()?;
    Ok(loss_from_traces(model, &traces)?.0)
}

/// Analytic gradients of the batch objective with respect to every trainable
/// tensor. Word embeddings are frozen and receive nothing.
pub fn backward<T: Scalar>(model: &SsclModel<T>, traces: &[ForwardTrace<T>]) -> Result<(BatchLoss<T>, SsclParams<T>)> {
    let (loss, contrastive) = loss_from_traces(model, traces)?;
    let seg: Vec<ArrayView1<T>> = traces.iter().map(|t| t.segment_repr().view()).collect();
    let asp: Vec<ArrayView1<T>> = traces.iter().map(|t| t.aspect_repr().view()).collect();
    let mu = T::of(model.hyper.mu);
    let (grad_seg, grad_asp) = contrastive_backward(&seg, &asp, &contrastive, mu, model.hyper.denominator)?;

    let p = &model.params;
    let mut grads = SsclParams::zeros(model.n_aspects(), model.dim());
    let layer = model.attention_layer();
    for ((trace, g_seg), g_asp) in traces.iter().zip(grad_seg).zip(grad_asp) {
        let beta = &trace.aspect.beta;
        // s_A = Aᵀβ
        for (n, &b) in beta.iter().enumerate() {
            grads.aspects.row_mut(n).scaled_add(b, &g_asp);
        }
        let grad_beta = p.aspects.dot(&g_asp);
        let grad_logits = softmax_backward(beta.view(), grad_beta.view());
        // logits = v_A s_E + b_A
        let s_e = trace.segment_repr();
        for (n, &g) in grad_logits.iter().enumerate() {
            grads.aspect_weight.row_mut(n).scaled_add(g, s_e);
        }
        grads.aspect_bias += &grad_logits;
        let total_seg: Array1<T> = g_seg + p.aspect_weight.t().dot(&grad_logits);

        let att = layer.backward(&trace.attention, total_seg.view(), &model.word_embeddings, false);
        grads.attn_weight += &att.weight;
        grads.attn_bias += &att.bias;
    }
    let (_, omega_grad) = regularizer_with_grad(&p.aspects)?;
    grads.aspects += &omega_grad;
    Ok((loss, grads))
}
