//! Item–entity knowledge graph: loading, indexing and entity linking.
//!
//! Entity ids are dense and follow catalog order, relation ids follow first
//! appearance in the triple stream. Neighborhood queries treat every triple
//! as an undirected edge.

mod index;
mod linker;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use index::KgIndex;
pub use linker::{link_entities, EntityLinker, EntityMention};

pub type EntityId = usize;
pub type RelationId = usize;

pub const ENTITY_FILE: &str = "entities.tsv";
pub const TRIPLE_FILE: &str = "triples.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub uri: String,
    pub name: String,
    pub is_item: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Immutable knowledge graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kg {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<Triple>,
    by_uri: HashMap<String, EntityId>,
    items: Vec<EntityId>,
}

impl Kg {
    /// Parses a triple stream and an entity catalog (see `ENTITY_FILE`,
    /// `TRIPLE_FILE` for the on-disk names).
    pub fn load<T: BufRead, C: BufRead>(triples: T, catalog: C) -> Result<Self> {
        let mut entities = Vec::new();
        let mut by_uri = HashMap::new();
        for (idx, line) in catalog.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let load_err = |message: String| Error::Load {
                source_name: "entity catalog".into(),
                line: line_no,
                message,
            };
            if fields.len() != 3 {
                return Err(load_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let is_item = match fields[2].trim() {
                "0" => false,
                "1" => true,
                other => return Err(load_err(format!("item flag must be 0 or 1, got {other:?}"))),
            };
            let uri = fields[0].to_string();
            if uri.is_empty() {
                return Err(load_err("empty entity uri".into()));
            }
            if by_uri.contains_key(&uri) {
                return Err(load_err(format!("duplicate entity uri {uri}")));
            }
            let id = entities.len();
            by_uri.insert(uri.clone(), id);
            entities.push(Entity {
                id,
                uri,
                name: fields[1].to_string(),
                is_item,
            });
        }

        let mut relations: Vec<Relation> = Vec::new();
        let mut relation_ids: HashMap<String, RelationId> = HashMap::new();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (idx, line) in triples.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let load_err = |message: String| Error::Load {
                source_name: "triples".into(),
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(load_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let resolve = |uri: &str| {
                by_uri
                    .get(uri)
                    .copied()
                    .ok_or_else(|| load_err(format!("unknown entity {uri}")))
            };
            let head = resolve(fields[0])?;
            let tail = resolve(fields[2])?;
            let rel_name = fields[1];
            if rel_name.is_empty() {
                return Err(load_err("empty relation name".into()));
            }
            let relation = match relation_ids.get(rel_name) {
                Some(&r) => r,
                None => {
                    let r = relations.len();
                    relations.push(Relation {
                        id: r,
                        name: rel_name.to_string(),
                    });
                    relation_ids.insert(rel_name.to_string(), r);
                    r
                }
            };
            let t = Triple {
                head,
                relation,
                tail,
            };
            if seen.insert(t) {
                out.push(t);
            }
        }
        Ok(Self::assemble(entities, relations, out, by_uri))
    }

    /// Loads `entities.tsv` and `triples.tsv` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| {
            let p = dir.join(name);
            File::open(&p)
                .map(BufReader::new)
                .map_err(|e| Error::file(p, e))
        };
        Self::load(open(TRIPLE_FILE)?, open(ENTITY_FILE)?)
    }

    /// Builds a graph from in-memory parts. Ids must be dense and valid.
    pub fn from_parts(
        entities: Vec<(String, String, bool)>,
        relations: Vec<String>,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let mut by_uri = HashMap::new();
        let mut ents = Vec::with_capacity(entities.len());
        for (id, (uri, name, is_item)) in entities.into_iter().enumerate() {
            if by_uri.insert(uri.clone(), id).is_some() {
                return Err(Error::Argument(format!("duplicate entity uri {uri}")));
            }
            ents.push(Entity {
                id,
                uri,
                name,
                is_item,
            });
        }
        let rels: Vec<Relation> = relations
            .into_iter()
            .enumerate()
            .map(|(id, name)| Relation { id, name })
            .collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in triples {
            if t.head >= ents.len() || t.tail >= ents.len() || t.relation >= rels.len() {
                return Err(Error::Argument(format!("triple {t:?} references an unknown id")));
            }
            if seen.insert(t) {
                out.push(t);
            }
        }
        Ok(Self::assemble(ents, rels, out, by_uri))
    }

    fn assemble(
        entities: Vec<Entity>,
        relations: Vec<Relation>,
        triples: Vec<Triple>,
        by_uri: HashMap<String, EntityId>,
    ) -> Self {
        let items = entities.iter().filter(|e| e.is_item).map(|e| e.id).collect();
        Self {
            entities,
            relations,
            triples,
            by_uri,
            items,
        }
    }

    /// Writes the graph back out in the loadable tab-separated layout.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let p = dir.join(ENTITY_FILE);
        let mut f = std::io::BufWriter::new(File::create(&p).map_err(|e| Error::file(&p, e))?);
        for e in &self.entities {
            writeln!(f, "{}\t{}\t{}", e.uri, e.name, u8::from(e.is_item))?;
        }
        f.flush()?;
        let p = dir.join(TRIPLE_FILE);
        let mut f = std::io::BufWriter::new(File::create(&p).map_err(|e| Error::file(&p, e))?);
        for t in &self.triples {
            writeln!(
                f,
                "{}\t{}\t{}",
                self.entities[t.head].uri, self.relations[t.relation].name, self.entities[t.tail].uri
            )?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Item entity ids in ascending order.
    pub fn items(&self) -> &[EntityId] {
        &self.items
    }

    pub fn is_item(&self, id: EntityId) -> bool {
        self.entities.get(id).is_some_and(|e| e.is_item)
    }

    pub fn id_of(&self, uri: &str) -> Option<EntityId> {
        self.by_uri.get(uri).copied()
    }

    pub fn build_index(&self) -> KgIndex {
        KgIndex::build(self)
    }

    pub fn linker(&self) -> EntityLinker {
        EntityLinker::new(self)
    }

    /// Case-insensitive prefix search over canonical names, ordered by id.
    pub fn search_prefix(&self, prefix: &str, limit: usize) -> Vec<&Entity> {
        let needle = prefix.to_lowercase();
        self.entities
            .iter()
            .filter(|e| e.name.to_lowercase().starts_with(&needle))
            .take(limit)
            .collect()
    }

    /// Digest of the graph content, used to pair checkpoints with graphs.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for e in &self.entities {
            h.update(e.uri.as_bytes());
            h.update([0, u8::from(e.is_item)]);
        }
        for r in &self.relations {
            h.update(r.name.as_bytes());
            h.update([0]);
        }
        for t in &self.triples {
            for v in [t.head, t.relation, t.tail] {
                h.update((v as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
