//! Forward computation: RGCN entity encoding, dialogue-guided attention,
//! fusion into a user vector and dot-product ranking.

mod attention;
mod config;
mod encoder;
mod fusion;
mod params;
mod rank;
mod rgcn;

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1};

pub use attention::{attention_aggregate, attention_backward, attention_forward, AttentionTrace};
pub use config::{Activation, ModelConfig};
pub use encoder::{
    text_hash, DialogueEmbedding, DialogueEncoder, HashedNgramEncoder, HttpEmbeddingEncoder,
    ENV_EMBED_API_KEY, ENV_EMBED_BASE_URL, ENV_EMBED_MODEL,
};
pub use fusion::{fuse_backward, fuse_forward, fuse_user, FusionTrace};
pub use params::{Gradients, ModelParams, RgcnLayer};
pub use rank::{rank_top_k, recommend, score_items, Ranked, RecommendationList};
pub use rgcn::{rgcn_backward, rgcn_forward, rgcn_forward_traced, RgcnTrace};

use crate::error::Result;
use crate::kg::{EntityId, Kg};
use crate::num::Scalar;

/// Gathers the rows of `ids` from `table`.
pub fn gather_rows<T: Scalar>(table: &Array2<T>, ids: &[EntityId]) -> Array2<T> {
    table.select(ndarray::Axis(0), ids)
}

/// User vector from a dialogue embedding and the mentioned entities.
pub fn user_vector<T: Scalar>(
    params: &ModelParams<T>,
    entity_embeddings: &Array2<T>,
    dialogue: ArrayView1<T>,
    context_entities: &[EntityId],
    config: &ModelConfig,
) -> Result<Array1<T>> {
    let implicit = if context_entities.is_empty() {
        None
    } else {
        let rows = gather_rows(entity_embeddings, context_entities);
        Some(attention_aggregate(
            dialogue,
            rows.view(),
            params,
            config.num_attention_heads,
        )?)
    };
    Ok(fuse_user(dialogue, implicit.as_ref().map(|h| h.view()), params))
}

/// A frozen model ready for inference: parameters plus cached entity
/// embeddings.
#[derive(Debug, Clone)]
pub struct InferenceModel<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    pub entity_embeddings: Array2<T>,
}

impl<T: Scalar> InferenceModel<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>, kg: &Kg) -> Result<Self> {
        let index = kg.build_index();
        let entity_embeddings = rgcn_forward(&params, &index, &config)?;
        Ok(Self {
            config,
            params,
            entity_embeddings,
        })
    }

    pub fn user(&self, dialogue: ArrayView1<T>, context_entities: &[EntityId]) -> Result<Array1<T>> {
        user_vector(
            &self.params,
            &self.entity_embeddings,
            dialogue,
            context_entities,
            &self.config,
        )
    }

    pub fn recommend(
        &self,
        kg: &Kg,
        dialogue: ArrayView1<T>,
        context_entities: &[EntityId],
        k: usize,
        exclusions: &HashSet<EntityId>,
    ) -> Result<RecommendationList> {
        let u = self.user(dialogue, context_entities)?;
        Ok(recommend(u.view(), &self.entity_embeddings, kg, k, exclusions))
    }
}
