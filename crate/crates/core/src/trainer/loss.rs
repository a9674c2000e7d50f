use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KgIndex};
use crate::kgem::{entity_loss_and_grad, Denominator};
use crate::model::{
    attention_backward, attention_forward, fuse_backward, fuse_forward, gather_rows, rgcn_backward,
    rgcn_forward_traced, Gradients, ModelConfig, ModelParams,
};
use crate::num::{log_sum_exp, Scalar};

/// A training sample after augmentation, substitution and encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample<T> {
    pub dialogue: Array1<T>,
    pub context_entities: Vec<EntityId>,
    /// Distinct target entities.
    pub targets: Vec<EntityId>,
}

/// Raw sums for one batch: `total = rec_loss + alpha · entity_loss`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<T> {
    /// `Σ_n L_n` over the batch.
    pub rec_loss: T,
    pub entity_loss: T,
    pub total: T,
    pub samples: usize,
}

fn check_targets(targets: &[EntityId], n: usize) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Argument("sample has an empty target set".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&j| j >= n) {
        return Err(Error::Argument(format!("target entity {bad} out of range ({n} entities)")));
    }
    Ok(())
}

/// `L_n` for one user vector and its logits gradient `|T|·softmax(z) − 1_T`.
fn sample_rec_loss<T: Scalar>(
    user: ArrayView1<T>,
    targets: &[EntityId],
    entity_rows: ArrayView2<T>,
) -> Result<(T, Array1<T>)> {
    check_targets(targets, entity_rows.nrows())?;
    let logits = entity_rows.dot(&user);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("non-finite recommendation logit".into()));
    }
    let lse = log_sum_exp(logits.iter().copied());
    let loss = targets.iter().map(|&j| lse - logits[j]).sum();
    let count = T::lit(targets.len() as f64);
    let mut d_logits = logits.mapv(|z| count * (z - lse).exp());
    for &j in targets {
        d_logits[j] -= T::one();
    }
    Ok((loss, d_logits))
}

/// `Σ_n Σ_{j ∈ T_n} −log softmax(E u_n)_j` over the rows of `user_vectors`.
pub fn rec_loss<T: Scalar>(
    user_vectors: ArrayView2<T>,
    target_sets: &[Vec<EntityId>],
    entity_rows: ArrayView2<T>,
) -> Result<T> {
    if user_vectors.nrows() != target_sets.len() {
        return Err(Error::Argument(format!(
            "{} user vectors for {} target sets",
            user_vectors.nrows(),
            target_sets.len()
        )));
    }
    let mut total = T::zero();
    for (u, targets) in user_vectors.outer_iter().zip(target_sets) {
        total += sample_rec_loss(u, targets, entity_rows)?.0;
    }
    Ok(total)
}

/// Loss of a batch and its exact gradient with respect to every parameter.
/// Gradients are raw sums; callers scale them.
pub fn total_loss_and_grad<T: Scalar, R: Rng + ?Sized>(
    batch: &[PreparedSample<T>],
    params: &ModelParams<T>,
    index: &KgIndex,
    config: &ModelConfig,
    alpha: T,
    denominator: Denominator,
    rng: &mut R,
) -> Result<(BatchLoss<T>, Gradients<T>)> {
    if alpha < T::zero() || !alpha.is_finite() {
        return Err(Error::Argument(format!("alpha must be finite and non-negative, got {alpha}")));
    }
    let (entities, trace) = rgcn_forward_traced(params, index, config)?;
    let mut grads = params.zeros_like();
    let mut d_entities = Array2::<T>::zeros(entities.raw_dim());
    let mut rec = T::zero();

    for sample in batch {
        if sample.dialogue.len() != config.d_llm {
            return Err(Error::Config(format!(
                "dialogue embedding has {} dimensions, model expects {}",
                sample.dialogue.len(),
                config.d_llm
            )));
        }
        let s = sample.dialogue.view();
        let rows = gather_rows(&entities, &sample.context_entities);
        let attended = if sample.context_entities.is_empty() {
            None
        } else {
            Some(attention_forward(s, rows.view(), params, config.num_attention_heads)?)
        };
        let (user, fusion) = fuse_forward(s, attended.as_ref().map(|(h, _)| h.view()), params);
        let (loss, d_logits) = sample_rec_loss(user.view(), &sample.targets, entities.view())?;
        rec += loss;

        let d_user = entities.t().dot(&d_logits);
        d_entities += &d_logits
            .view()
            .insert_axis(Axis(1))
            .dot(&user.view().insert_axis(Axis(0)));
        let d_implicit = fuse_backward(s, params, &fusion, d_user.view(), &mut grads);
        if let (Some(dh), Some((_, att))) = (d_implicit, &attended) {
            let d_rows = attention_backward(s, rows.view(), params, att, dh.view(), &mut grads);
            for (slot, &m) in sample.context_entities.iter().enumerate() {
                d_entities.row_mut(m).scaled_add(T::one(), &d_rows.row(slot));
            }
        }
    }

    // Evaluated at alpha = 0 too, so runs without the constraint still report it.
    let (report, g) = entity_loss_and_grad(&entities, index, denominator, rng)?;
    if alpha > T::zero() {
        d_entities.scaled_add(alpha, &g);
    }
    let entity = report.value;
    rgcn_backward(params, index, config, &trace, d_entities, &mut grads);

    let total = rec + alpha * entity;
    if !total.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((
        BatchLoss {
            rec_loss: rec,
            entity_loss: entity,
            total,
            samples: batch.len(),
        },
        grads,
    ))
}
