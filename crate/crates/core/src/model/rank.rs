use std::cmp::Ordering;
use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, Kg};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub item_id: EntityId,
    pub score: f64,
}

/// Items in rank order: score descending, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub items: Vec<Ranked>,
}

impl RecommendationList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.items.iter().map(|r| r.item_id)
    }
}

/// Dot product of `user` with every row of `item_rows`.
pub fn score_items<T: Scalar>(user: ArrayView1<T>, item_rows: &Array2<T>) -> Array1<T> {
    item_rows.dot(&user)
}

/// Sorts `(id, score)` pairs into rank order and keeps the first `k`.
pub fn rank_top_k<T: Scalar>(mut scored: Vec<(EntityId, T)>, k: usize) -> RecommendationList {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    RecommendationList {
        items: scored
            .into_iter()
            .map(|(item_id, s)| Ranked {
                item_id,
                score: s.to_f64_lossy(),
            })
            .collect(),
    }
}

/// Top-`k` items for `user` given post-RGCN entity embeddings. Excluded ids
/// are removed before ranking; fewer than `k` items yields a shorter list.
pub fn recommend<T: Scalar>(
    user: ArrayView1<T>,
    entity_embeddings: &Array2<T>,
    kg: &Kg,
    k: usize,
    exclusions: &HashSet<EntityId>,
) -> RecommendationList {
    let scored = kg
        .items()
        .iter()
        .filter(|id| !exclusions.contains(id))
        .map(|&id| (id, entity_embeddings.row(id).dot(&user)))
        .collect();
    rank_top_k(scored, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn kg(n_items: usize) -> Kg {
        Kg::from_parts(
            (0..n_items).map(|i| (format!("i{i}"), format!("Item {i}"), true)).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn zero_user_scores_zero() {
        let rows = array![[1.0, 2.0], [-3.0, 0.5]];
        assert_eq!(score_items(array![0.0, 0.0].view(), &rows).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn ties_break_by_id() {
        let emb = array![[1.0, 0.0], [1.0, 0.0]];
        let list = recommend(array![1.0, 1.0].view(), &emb, &kg(2), 2, &HashSet::new());
        assert_eq!(list.ids().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn full_k_is_permutation_and_k_caps() {
        let emb = array![[0.1, 0.0], [0.5, 0.2], [-1.0, 0.3]];
        let list = recommend(array![1.0, -1.0].view(), &emb, &kg(3), 3, &HashSet::new());
        let mut ids: Vec<_> = list.ids().collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
        let all = recommend(array![1.0, -1.0].view(), &emb, &kg(3), 50, &HashSet::new());
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn exclusion_promotes_runner_up() {
        let emb = array![[3.0], [2.0], [1.0]];
        let excl: HashSet<_> = [0].into_iter().collect();
        let list = recommend(array![1.0].view(), &emb, &kg(3), 1, &excl);
        assert_eq!(list.items[0].item_id, 1);
    }

    #[test]
    fn self_similarity_wins_for_unit_items() {
        let s = 0.5f64.sqrt();
        let emb = array![[1.0, 0.0], [0.0, 1.0], [s, s], [-s, s]];
        for i in 0..4 {
            let list = recommend(emb.row(i), &emb, &kg(4), 4, &HashSet::new());
            assert_eq!(list.items[0].item_id, i);
            assert!((list.items[0].score - 1.0).abs() < 1e-12);
            assert!(list.items[1].score < list.items[0].score);
        }
    }
}
