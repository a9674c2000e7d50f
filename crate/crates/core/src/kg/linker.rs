use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{EntityId, Kg};

/// An entity occurrence in an utterance. `span` is a byte range into the
/// utterance text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: EntityId,
    pub utterance_index: usize,
    pub span: Range<usize>,
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<char, usize>,
    entity: Option<EntityId>,
}

/// Exact, case-insensitive, longest-match linker over canonical names.
///
/// Matches must start and end on word boundaries. When two entities share a
/// normalized name the lower id wins.
#[derive(Debug, Clone)]
pub struct EntityLinker {
    nodes: Vec<TrieNode>,
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

impl EntityLinker {
    pub fn new(kg: &Kg) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for e in kg.entities() {
            let name = e.name.trim();
            if name.is_empty() {
                continue;
            }
            let mut at = 0;
            for c in name.chars().map(fold) {
                at = match nodes[at].children.get(&c) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[at].children.insert(c, n);
                        n
                    }
                };
            }
            if nodes[at].entity.is_none() {
                nodes[at].entity = Some(e.id);
            }
        }
        Self { nodes }
    }

    pub fn link(&self, text: &str) -> Vec<EntityMention> {
        self.link_utterance(text, 0)
    }

    pub fn link_utterance(&self, text: &str, utterance_index: usize) -> Vec<EntityMention> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let is_word = |i: usize| chars.get(i).is_some_and(|&(_, c)| c.is_alphanumeric());
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);

        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let at_boundary = i == 0 || !is_word(i - 1);
            let mut best: Option<(usize, EntityId)> = None;
            if at_boundary {
                let mut node = 0;
                let mut j = i;
                while j < chars.len() {
                    match self.nodes[node].children.get(&fold(chars[j].1)) {
                        Some(&n) => node = n,
                        None => break,
                    }
                    j += 1;
                    if let Some(id) = self.nodes[node].entity {
                        let ends_clean = !(is_word(j) && is_word(j - 1));
                        if ends_clean {
                            best = Some((j, id));
                        }
                    }
                }
            }
            match best {
                Some((end, id)) => {
                    out.push(EntityMention {
                        entity_id: id,
                        utterance_index,
                        span: byte_at(i)..byte_at(end),
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Links every entity name in `text`; see [`EntityLinker`].
pub fn link_entities(kg: &Kg, text: &str) -> Vec<EntityMention> {
    EntityLinker::new(kg).link(text)
}
