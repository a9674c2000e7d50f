//! Planted-preference synthetic corpus.
//!
//! Each cluster is a community of items, each item owning a dense group of
//! attribute entities, with its own preference vocabulary. Clusters touch
//! through single bridge edges. A dialogue opens with an entity-free
//! greeting, stays inside one cluster and ends with a recommender turn naming
//! one of that cluster's items; user turns mostly mention that item's
//! attributes.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dialogue, Speaker, Utterance};
use crate::error::{Error, Result};
use crate::kg::{EntityId, Kg, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub num_clusters: usize,
    pub entities_per_cluster: usize,
    pub items_per_cluster: usize,
    pub dialogues: usize,
    pub utterances_per_dialogue: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_clusters: 4,
            entities_per_cluster: 20,
            items_per_cluster: 4,
            dialogues: 400,
            utterances_per_dialogue: 6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub kg: Kg,
    pub dialogues: Vec<Dialogue>,
    /// Cluster label of every entity.
    pub entity_cluster: Vec<usize>,
    /// Cluster label of every dialogue.
    pub dialogue_cluster: Vec<usize>,
}

const RELATED: usize = 0;
const GENRE: usize = 1;
const FEATURES: usize = 2;
const WORDS_PER_CLUSTER: usize = 6;
/// Dialogues mention `1/MENTION_DIVISOR` of each attribute group (rounded up).
const MENTION_DIVISOR: usize = 2;

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr",
];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(NUCLEI.choose(rng).unwrap());
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn unique_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>, syllables: usize) -> String {
    loop {
        let w = pseudo_word(rng, syllables);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.num_clusters == 0
        || spec.entities_per_cluster == 0
        || spec.items_per_cluster == 0
        || spec.dialogues == 0
        || spec.utterances_per_dialogue == 0
    {
        return Err(Error::Argument("synthetic sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = HashSet::new();

    let per_cluster = spec.entities_per_cluster + spec.items_per_cluster;
    let mut entities = Vec::new();
    let mut entity_cluster = Vec::new();
    let mut cluster_entities: Vec<Vec<EntityId>> = Vec::new();
    let mut cluster_items: Vec<Vec<EntityId>> = Vec::new();
    let mut vocab: Vec<Vec<String>> = Vec::new();
    for c in 0..spec.num_clusters {
        let mut ents = Vec::new();
        let mut items = Vec::new();
        for i in 0..per_cluster {
            let id = c * per_cluster + i;
            let is_item = i >= spec.entities_per_cluster;
            let name = if is_item {
                format!("The {}", capitalize(&unique_word(&mut rng, &mut used, 3)))
            } else {
                format!(
                    "{} {}",
                    capitalize(&unique_word(&mut rng, &mut used, 2)),
                    capitalize(&unique_word(&mut rng, &mut used, 2))
                )
            };
            let uri = format!("syn:c{c}/{}{i}", if is_item { "item" } else { "ent" });
            entities.push((uri, name, is_item));
            entity_cluster.push(c);
            if is_item {
                items.push(id);
            } else {
                ents.push(id);
            }
        }
        vocab.push(
            (0..WORDS_PER_CLUSTER)
                .map(|_| unique_word(&mut rng, &mut used, 3))
                .collect(),
        );
        cluster_entities.push(ents);
        cluster_items.push(items);
    }

    // Each item owns a group of attribute entities (round-robin). A group is
    // a clique with its item; items of one cluster form a ring; consecutive
    // clusters share one bridge edge.
    let mut triples = Vec::new();
    let mut item_group: Vec<Vec<EntityId>> = vec![Vec::new(); entities.len()];
    for c in 0..spec.num_clusters {
        let items = &cluster_items[c];
        for (k, &e) in cluster_entities[c].iter().enumerate() {
            item_group[items[k % items.len()]].push(e);
        }
        for &item in items {
            let group = &item_group[item];
            for (a, &x) in group.iter().enumerate() {
                triples.push(Triple { head: item, relation: FEATURES, tail: x });
                for &y in &group[a + 1..] {
                    triples.push(Triple { head: x, relation: RELATED, tail: y });
                }
            }
        }
        if items.len() > 1 {
            for g in 0..items.len() {
                let next = (g + 1) % items.len();
                if items.len() > 2 || g == 0 {
                    triples.push(Triple { head: items[g], relation: GENRE, tail: items[next] });
                }
            }
        }
    }
    // Dialogues only mention the head of each group; the rest is long tail
    // reachable through the graph alone.
    let mut mentionable: Vec<Vec<EntityId>> = vec![Vec::new(); spec.num_clusters];
    for c in 0..spec.num_clusters {
        for &item in &cluster_items[c] {
            let group = &mut item_group[item];
            group.truncate(group.len().div_ceil(MENTION_DIVISOR).max(1).min(group.len()));
            mentionable[c].extend_from_slice(group);
        }
        if mentionable[c].is_empty() {
            mentionable[c] = cluster_entities[c].clone();
        }
    }
    for c in 1..spec.num_clusters {
        let a = *cluster_entities[c - 1].choose(&mut rng).unwrap();
        let b = *cluster_entities[c].choose(&mut rng).unwrap();
        triples.push(Triple { head: a, relation: RELATED, tail: b });
    }

    let kg = Kg::from_parts(
        entities,
        vec!["related".into(), "genre".into(), "features".into()],
        triples,
    )?;

    let mut dialogues = Vec::with_capacity(spec.dialogues);
    let mut dialogue_cluster = Vec::with_capacity(spec.dialogues);
    let u = spec.utterances_per_dialogue;
    for d in 0..spec.dialogues {
        let c = rng.random_range(0..spec.num_clusters);
        let target = *cluster_items[c].choose(&mut rng).unwrap();
        let group = if item_group[target].is_empty() {
            &mentionable[c]
        } else {
            &item_group[target]
        };
        let words = &vocab[c];
        let mut utterances = Vec::with_capacity(u);
        for t in 0..u {
            let speaker = if (u - 1 - t).is_multiple_of(2) {
                Speaker::Recommender
            } else {
                Speaker::User
            };
            let w1 = words.choose(&mut rng).unwrap();
            let w2 = words.choose(&mut rng).unwrap();
            let utterance = if t == u - 1 {
                let name = &kg.entity(target).unwrap().name;
                let text = match rng.random_range(0..3) {
                    0 => format!("You should watch {name}."),
                    1 => format!("I think you would enjoy {name}."),
                    _ => format!("Have you seen {name}? It fits perfectly."),
                };
                Utterance { speaker, text, entities: vec![target] }
            } else if t == 0 {
                let text = match speaker {
                    Speaker::User => format!("Hi! I am in the mood for something {w1} and {w2}."),
                    Speaker::Recommender => "Hi! What are you in the mood for?".to_string(),
                };
                Utterance { speaker, text, entities: vec![] }
            } else if speaker == Speaker::User {
                if rng.random_bool(0.85) {
                    let pool = if rng.random_bool(0.8) { group } else { &mentionable[c] };
                    let e = *pool.choose(&mut rng).unwrap();
                    let name = &kg.entity(e).unwrap().name;
                    let text = match rng.random_range(0..3) {
                        0 => format!("I really liked {name}, something {w1} and {w2} please."),
                        1 => format!("{name} was great. I am into {w1} stories."),
                        _ => format!("Anything {w1} like {name}? Maybe a bit {w2}."),
                    };
                    Utterance { speaker, text, entities: vec![e] }
                } else {
                    let text = match rng.random_range(0..2) {
                        0 => format!("I am in the mood for something {w1} and {w2}."),
                        _ => format!("I usually enjoy {w1} movies."),
                    };
                    Utterance { speaker, text, entities: vec![] }
                }
            } else if rng.random_bool(0.3) {
                let pool = if rng.random_bool(0.5) { group } else { &mentionable[c] };
                let e = *pool.choose(&mut rng).unwrap();
                let name = &kg.entity(e).unwrap().name;
                Utterance {
                    speaker,
                    text: format!("Do you like {name}?"),
                    entities: vec![e],
                }
            } else {
                let text = ["What kind of movies do you like?", "Tell me more.", "Any favorite actors?"]
                    .choose(&mut rng)
                    .unwrap()
                    .to_string();
                Utterance { speaker, text, entities: vec![] }
            };
            utterances.push(utterance);
        }
        dialogues.push(Dialogue { id: format!("syn-{d}"), utterances });
        dialogue_cluster.push(c);
    }

    Ok(SyntheticDataset { kg, dialogues, entity_cluster, dialogue_cluster })
}
