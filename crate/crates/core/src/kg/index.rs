use rand::Rng;

use super::{EntityId, Kg, RelationId};
use crate::error::{Error, Result};

/// Undirected adjacency of a [`Kg`], per relation and merged.
///
/// Neighbor lists are sorted and free of duplicates and self-loops. The
/// normalization constant `c(m, r)` is the size of the per-relation list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KgIndex {
    num_entities: usize,
    /// `by_relation[r][m]` is the neighbor set of `m` under `r`.
    by_relation: Vec<Vec<Vec<EntityId>>>,
    neighbors: Vec<Vec<EntityId>>,
}

impl KgIndex {
    pub fn build(kg: &Kg) -> Self {
        Self::from_edges(
            kg.num_entities(),
            kg.num_relations(),
            kg.triples().iter().map(|t| (t.head, t.relation, t.tail)),
        )
    }

    /// Index over raw `(head, relation, tail)` edges. Panics on out-of-range ids.
    pub fn from_edges(
        num_entities: usize,
        num_relations: usize,
        edges: impl IntoIterator<Item = (EntityId, RelationId, EntityId)>,
    ) -> Self {
        let mut by_relation = vec![vec![Vec::new(); num_entities]; num_relations];
        for (h, r, t) in edges {
            assert!(h < num_entities && t < num_entities && r < num_relations);
            if h == t {
                continue;
            }
            by_relation[r][h].push(t);
            by_relation[r][t].push(h);
        }
        let mut neighbors = vec![Vec::new(); num_entities];
        for per_entity in by_relation.iter_mut() {
            for (m, list) in per_entity.iter_mut().enumerate() {
                list.sort_unstable();
                list.dedup();
                neighbors[m].extend_from_slice(list);
            }
        }
        for list in neighbors.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            num_entities,
            by_relation,
            neighbors,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.by_relation.len()
    }

    /// `N_m^r`.
    pub fn relation_neighbors(&self, m: EntityId, r: RelationId) -> &[EntityId] {
        &self.by_relation[r][m]
    }

    /// `N_m`: union over relations.
    pub fn neighbors(&self, m: EntityId) -> &[EntityId] {
        &self.neighbors[m]
    }

    pub fn degree(&self, m: EntityId) -> usize {
        self.neighbors[m].len()
    }

    /// `c(m, r)`, or `None` when `m` has no neighbors under `r`.
    pub fn norm(&self, m: EntityId, r: RelationId) -> Option<usize> {
        match self.by_relation[r][m].len() {
            0 => None,
            n => Some(n),
        }
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_entities == 0 {
            return 0.0;
        }
        let total: usize = self.neighbors.iter().map(Vec::len).sum();
        total as f64 / self.num_entities as f64
    }

    /// Uniform draw from `N_m`; `None` for an isolated entity.
    pub fn sample_neighbor<R: Rng + ?Sized>(&self, m: EntityId, rng: &mut R) -> Result<Option<EntityId>> {
        let list = self
            .neighbors
            .get(m)
            .ok_or_else(|| Error::Argument(format!("unknown entity id {m}")))?;
        Ok(match list.len() {
            0 => None,
            1 => Some(list[0]),
            n => Some(list[rng.random_range(0..n)]),
        })
    }
}
