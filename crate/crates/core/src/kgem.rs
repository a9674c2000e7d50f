//! Knowledge-guided entity modeling: neighbor substitution of mentioned
//! entities and the entity similarity constraint.
//!
//! For every entity `m` with neighbors `N_m`:
//!
//! ```text
//! L_m = − Σ_{j ∈ N_m} log( exp(h_m·h_j) / Σ_k exp(h_m·h_k) )
//! ```
//!
//! with `k` ranging over all entities, `m` included. The total is `Σ_m L_m`.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KgIndex};
use crate::num::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionConfig {
    pub substitution_rate: f64,
    pub seed: u64,
}

/// Replaces each entity, independently with probability `rate`, by a
/// uniformly drawn 1-hop neighbor. Isolated entities are kept.
pub fn substitute_entities<R: Rng + ?Sized>(
    entities: &[EntityId],
    index: &KgIndex,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<EntityId>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Argument(format!("substitution rate {rate} outside [0, 1]")));
    }
    entities
        .iter()
        .map(|&e| {
            if rate > 0.0 && rng.random_bool(rate) {
                Ok(index.sample_neighbor(e, rng)?.unwrap_or(e))
            } else {
                Ok(e)
            }
        })
        .collect()
}

/// Which entities form the softmax denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Denominator {
    /// Every entity.
    #[default]
    Full,
    /// The anchor, its neighbors and `negatives` uniform draws. For large graphs.
    Sampled { negatives: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityLossReport<T> {
    pub value: T,
    /// `L_m` for every entity, zero for isolated ones.
    pub per_entity: Vec<T>,
}

fn check_embeddings<T: Scalar>(embeddings: &Array2<T>, index: &KgIndex) -> Result<()> {
    if embeddings.nrows() != index.num_entities() {
        return Err(Error::Config(format!(
            "{} embedding rows for {} entities",
            embeddings.nrows(),
            index.num_entities()
        )));
    }
    if embeddings.ncols() == 0 {
        return Err(Error::Config("embedding dimension is zero".into()));
    }
    if embeddings.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite entity embedding".into()));
    }
    Ok(())
}

fn candidates<R: Rng + ?Sized>(
    m: EntityId,
    index: &KgIndex,
    denominator: Denominator,
    rng: &mut R,
) -> Option<Vec<EntityId>> {
    match denominator {
        Denominator::Full => None,
        Denominator::Sampled { negatives } => {
            let n = index.num_entities();
            let mut c: Vec<EntityId> = std::iter::once(m)
                .chain(index.neighbors(m).iter().copied())
                .chain(index::sample(rng, n, negatives.min(n)))
                .collect();
            c.sort_unstable();
            c.dedup();
            Some(c)
        }
    }
}

/// Loss and exact gradient with respect to every embedding row.
pub fn entity_loss_and_grad<T: Scalar, R: Rng + ?Sized>(
    embeddings: &Array2<T>,
    index: &KgIndex,
    denominator: Denominator,
    rng: &mut R,
) -> Result<(EntityLossReport<T>, Array2<T>)> {
    check_embeddings(embeddings, index)?;
    let n = index.num_entities();
    let mut grad = Array2::<T>::zeros(embeddings.raw_dim());
    let mut per_entity = vec![T::zero(); n];
    for (m, slot) in per_entity.iter_mut().enumerate() {
        let neigh = index.neighbors(m);
        if neigh.is_empty() {
            continue;
        }
        let hm = embeddings.row(m);
        let cand = candidates(m, index, denominator, rng);
        let logits: Array1<T> = match &cand {
            None => embeddings.dot(&hm),
            Some(c) => c.iter().map(|&k| embeddings.row(k).dot(&hm)).collect(),
        };
        let lse = log_sum_exp(logits.iter().copied());
        let logit_of = |j: EntityId| match &cand {
            None => logits[j],
            Some(c) => logits[c.binary_search(&j).expect("neighbors are candidates")],
        };
        let deg = T::lit(neigh.len() as f64);
        let loss: T = neigh.iter().map(|&j| lse - logit_of(j)).sum();
        *slot = loss;

        // ∂L_m/∂logit_k = deg·p_k − [k ∈ N_m]
        let mut d_logits = logits.mapv(|z| deg * (z - lse).exp());
        for &j in neigh {
            match &cand {
                None => d_logits[j] -= T::one(),
                Some(c) => d_logits[c.binary_search(&j).expect("neighbors are candidates")] -= T::one(),
            }
        }
        // logit_k = h_k · h_m
        let ids: Vec<EntityId> = match &cand {
            None => (0..n).collect(),
            Some(c) => c.clone(),
        };
        let mut d_hm = Array1::<T>::zeros(embeddings.ncols());
        for (slot, &k) in ids.iter().enumerate() {
            let g = d_logits[slot];
            if g == T::zero() {
                continue;
            }
            d_hm.scaled_add(g, &embeddings.row(k));
            grad.row_mut(k).scaled_add(g, &hm);
        }
        grad.row_mut(m).scaled_add(T::one(), &d_hm);
    }
    let value: T = per_entity.iter().copied().sum();
    if !value.is_finite() {
        return Err(Error::Numeric("entity similarity loss is not finite".into()));
    }
    Ok((EntityLossReport { value, per_entity }, grad))
}

/// Full-softmax loss.
pub fn entity_similarity_loss<T: Scalar>(embeddings: &Array2<T>, index: &KgIndex) -> Result<EntityLossReport<T>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    entity_loss_and_grad(embeddings, index, Denominator::Full, &mut rng).map(|(r, _)| r)
}

/// Gradient of the full-softmax loss.
pub fn entity_similarity_loss_grad<T: Scalar>(embeddings: &Array2<T>, index: &KgIndex) -> Result<Array2<T>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    entity_loss_and_grad(embeddings, index, Denominator::Full, &mut rng).map(|(_, g)| g)
}
