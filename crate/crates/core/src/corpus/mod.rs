//! Dialogue corpora and the sample construction used for training and testing.

mod synthetic;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, Kg};

pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Recommender,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Speaker::User => "User",
            Speaker::Recommender => "Recommender",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub entities: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Speaker-prefixed lines joined by newlines; the one serialization used for
/// prompts, encoding and serving.
pub fn serialize_utterances(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, u) in utterances.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(u.speaker.label());
        out.push_str(": ");
        out.push_str(&u.text);
    }
    out
}

impl Dialogue {
    pub fn serialize(&self) -> String {
        serialize_utterances(&self.utterances)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub dialogue_id: String,
    /// Index of the target utterance inside its dialogue.
    pub target_index: usize,
    pub context: Vec<Utterance>,
    /// Distinct entities of the context, in first-mention order.
    pub context_entities: Vec<EntityId>,
    pub target_entities: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSample {
    pub sample: TrainingSample,
    pub target_items: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub num_dialogues: usize,
    pub num_items: usize,
    pub num_entities: usize,
    /// Distinct (dialogue, item) mention pairs.
    pub num_interactions: usize,
    pub density: f64,
}

impl CorpusStats {
    pub fn from_counts(
        num_dialogues: usize,
        num_items: usize,
        num_entities: usize,
        num_interactions: usize,
    ) -> Self {
        let cells = num_dialogues as f64 * num_items as f64;
        Self {
            num_dialogues,
            num_items,
            num_entities,
            num_interactions,
            density: if cells > 0.0 {
                num_interactions as f64 / cells
            } else {
                0.0
            },
        }
    }

    pub fn compute(dialogues: &[Dialogue], kg: &Kg) -> Self {
        let interactions: usize = dialogues
            .iter()
            .map(|d| {
                d.utterances
                    .iter()
                    .flat_map(|u| u.entities.iter().copied())
                    .filter(|&e| kg.is_item(e))
                    .collect::<HashSet<_>>()
                    .len()
            })
            .sum();
        Self::from_counts(dialogues.len(), kg.num_items(), kg.num_entities(), interactions)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RecordId {
    Text(String),
    Number(i64),
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: Speaker,
    text: String,
    #[serde(default)]
    entities: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueRecord {
    dialogue_id: RecordId,
    utterances: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDialogues {
    pub dialogues: Vec<Dialogue>,
    /// Annotations dropped because their URI is not in the graph.
    pub dropped_annotations: usize,
}

/// Reads one JSON dialogue record per line, resolving entity URIs against `kg`.
pub fn load_dialogues<R: BufRead>(source: R, kg: &Kg) -> Result<LoadedDialogues> {
    let mut out = LoadedDialogues::default();
    for (index, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            index,
            message: e.to_string(),
        })?;
        if record.utterances.is_empty() {
            return Err(Error::Record {
                index,
                message: "dialogue has no utterances".into(),
            });
        }
        let id = match record.dialogue_id {
            RecordId::Text(s) => s,
            RecordId::Number(n) => n.to_string(),
        };
        let mut utterances = Vec::with_capacity(record.utterances.len());
        for u in record.utterances {
            let mut entities = Vec::with_capacity(u.entities.len());
            for uri in &u.entities {
                match kg.id_of(uri) {
                    Some(e) if !entities.contains(&e) => entities.push(e),
                    Some(_) => {}
                    None => out.dropped_annotations += 1,
                }
            }
            utterances.push(Utterance {
                speaker: u.speaker,
                text: u.text,
                entities,
            });
        }
        out.dialogues.push(Dialogue { id, utterances });
    }
    if out.dropped_annotations > 0 {
        log::warn!(
            "dropped {} entity annotations not present in the knowledge graph",
            out.dropped_annotations
        );
    }
    Ok(out)
}

pub fn load_dialogue_file(path: impl AsRef<Path>, kg: &Kg) -> Result<LoadedDialogues> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    load_dialogues(BufReader::new(f), kg)
}

/// Writes dialogues in the loadable record format.
pub fn write_dialogues<W: Write>(mut out: W, dialogues: &[Dialogue], kg: &Kg) -> Result<()> {
    for d in dialogues {
        let record = DialogueRecord {
            dialogue_id: RecordId::Text(d.id.clone()),
            utterances: d
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker,
                    text: u.text.clone(),
                    entities: u
                        .entities
                        .iter()
                        .filter_map(|&e| kg.entity(e).map(|x| x.uri.clone()))
                        .collect(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Argument(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dialogue_file(path: impl AsRef<Path>, dialogues: &[Dialogue], kg: &Kg) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    write_dialogues(std::io::BufWriter::new(f), dialogues, kg)
}

fn sample_at(d: &Dialogue, t: usize) -> TrainingSample {
    let mut context_entities = Vec::new();
    for u in &d.utterances[..t] {
        for &e in &u.entities {
            if !context_entities.contains(&e) {
                context_entities.push(e);
            }
        }
    }
    let mut targets = Vec::new();
    for &e in &d.utterances[t].entities {
        if !targets.contains(&e) {
            targets.push(e);
        }
    }
    TrainingSample {
        dialogue_id: d.id.clone(),
        target_index: t,
        context: d.utterances[..t].to_vec(),
        context_entities,
        target_entities: targets,
    }
}

/// One sample per utterance with at least one entity, either speaker.
pub fn build_training_samples(dialogues: &[Dialogue]) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for d in dialogues {
        for (t, u) in d.utterances.iter().enumerate() {
            if !u.entities.is_empty() {
                out.push(sample_at(d, t));
            }
        }
    }
    out
}

/// One sample per recommender utterance that mentions at least one item.
pub fn build_test_samples(dialogues: &[Dialogue], kg: &Kg) -> Vec<TestSample> {
    let mut out = Vec::new();
    for d in dialogues {
        for (t, u) in d.utterances.iter().enumerate() {
            if u.speaker != Speaker::Recommender {
                continue;
            }
            let items: Vec<EntityId> = u.entities.iter().copied().filter(|&e| kg.is_item(e)).collect();
            if items.is_empty() {
                continue;
            }
            out.push(TestSample {
                sample: sample_at(d, t),
                target_items: items,
            });
        }
    }
    out
}

/// Deterministic shuffled split; returns `(train, test)`.
pub fn split_train_test(
    dialogues: &[Dialogue],
    test_fraction: f64,
    seed: u64,
) -> (Vec<Dialogue>, Vec<Dialogue>) {
    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((dialogues.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    (
        train_idx.into_iter().map(|i| dialogues[i].clone()).collect(),
        test_idx.into_iter().map(|i| dialogues[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kg() -> Kg {
        Kg::from_parts(
            vec![
                ("m:alien".into(), "Alien".into(), true),
                ("m:aliens".into(), "Aliens".into(), true),
                ("p:weaver".into(), "Sigourney Weaver".into(), false),
            ],
            vec!["starring".into()],
            vec![],
        )
        .unwrap()
    }

    fn utt(speaker: Speaker, entities: &[EntityId]) -> Utterance {
        Utterance {
            speaker,
            text: "x".into(),
            entities: entities.to_vec(),
        }
    }

    #[test]
    fn parses_records_and_drops_unknown_annotations() {
        let src = r#"{"dialogue_id": 7, "utterances": [{"speaker": "user", "text": "hi", "entities": ["m:alien", "m:nope"]}, {"speaker": "recommender", "text": "try Aliens", "entities": ["m:aliens"]}]}
{"dialogue_id": "b", "utterances": [{"speaker": "user", "text": "hello"}]}"#;
        let loaded = load_dialogues(src.as_bytes(), &kg()).unwrap();
        assert_eq!(loaded.dialogues.len(), 2);
        assert_eq!(loaded.dropped_annotations, 1);
        assert_eq!(loaded.dialogues[0].id, "7");
        assert_eq!(loaded.dialogues[0].utterances[0].entities, vec![0]);
        assert!(loaded.dialogues[1].utterances[0].entities.is_empty());
    }

    #[test]
    fn malformed_record_reports_index() {
        let src = "{\"dialogue_id\":\"a\",\"utterances\":[{\"speaker\":\"user\",\"text\":\"x\"}]}\n{oops\n";
        match load_dialogues(src.as_bytes(), &kg()).unwrap_err() {
            Error::Record { index, .. } => assert_eq!(index, 1),
            e => panic!("{e:?}"),
        }
        let empty = "{\"dialogue_id\":\"a\",\"utterances\":[]}";
        assert!(load_dialogues(empty.as_bytes(), &kg()).is_err());
        let bad_speaker = "{\"dialogue_id\":\"a\",\"utterances\":[{\"speaker\":\"bot\",\"text\":\"x\"}]}";
        assert!(load_dialogues(bad_speaker.as_bytes(), &kg()).is_err());
    }

    #[test]
    fn write_then_load_roundtrip() {
        let kg = kg();
        let d = Dialogue {
            id: "d1".into(),
            utterances: vec![utt(Speaker::User, &[2]), utt(Speaker::Recommender, &[0, 1])],
        };
        let mut buf = Vec::new();
        write_dialogues(&mut buf, std::slice::from_ref(&d), &kg).unwrap();
        let back = load_dialogues(buf.as_slice(), &kg).unwrap();
        assert_eq!(back.dialogues, vec![d]);
    }

    #[test]
    fn training_samples_follow_entity_utterances() {
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![
                utt(Speaker::User, &[]),
                utt(Speaker::Recommender, &[0]),
                utt(Speaker::User, &[]),
                utt(Speaker::Recommender, &[1, 2]),
            ],
        };
        let s = build_training_samples(&[d]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].context.len(), 1);
        assert_eq!(s[1].context.len(), 3);
        assert_eq!(s[1].context_entities, vec![0]);
        assert_eq!(s[1].target_entities, vec![1, 2]);
    }

    #[test]
    fn no_entities_no_samples() {
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![utt(Speaker::User, &[]), utt(Speaker::Recommender, &[])],
        };
        assert!(build_training_samples(&[d]).is_empty());
    }

    #[test]
    fn first_utterance_target_has_empty_context() {
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![utt(Speaker::User, &[1])],
        };
        let s = build_training_samples(&[d]);
        assert_eq!(s.len(), 1);
        assert!(s[0].context.is_empty());
        assert!(s[0].context_entities.is_empty());
    }

    #[test]
    fn test_samples_keep_items_from_recommender_only() {
        let kg = kg();
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![
                utt(Speaker::User, &[0]),
                utt(Speaker::Recommender, &[1, 2]),
                utt(Speaker::Recommender, &[2]),
            ],
        };
        let s = build_test_samples(&[d], &kg);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].target_items, vec![1]);
        assert_eq!(s[0].sample.target_index, 1);
    }

    #[test]
    fn context_entities_dedup_in_first_mention_order() {
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![
                utt(Speaker::User, &[2, 0]),
                utt(Speaker::Recommender, &[0, 1]),
                utt(Speaker::User, &[2]),
            ],
        };
        let s = build_training_samples(&[d]);
        assert_eq!(s[2].context_entities, vec![2, 0, 1]);
    }

    #[test]
    fn serialization_is_speaker_prefixed() {
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![
                Utterance { speaker: Speaker::User, text: "hi".into(), entities: vec![] },
                Utterance { speaker: Speaker::Recommender, text: "hello".into(), entities: vec![] },
            ],
        };
        assert_eq!(d.serialize(), "User: hi\nRecommender: hello");
    }

    #[test]
    fn density_matches_table_counts() {
        let s = CorpusStats::from_counts(999, 1472, 17321, 3878);
        assert!((s.density * 100.0 - 0.2637).abs() < 5e-5);
    }

    #[test]
    fn stats_count_distinct_items_per_dialogue() {
        let kg = kg();
        let d = Dialogue {
            id: "d".into(),
            utterances: vec![utt(Speaker::User, &[0, 2]), utt(Speaker::Recommender, &[0, 1])],
        };
        let s = CorpusStats::compute(&[d], &kg);
        assert_eq!(s.num_interactions, 2);
        assert!((s.density - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sample_count_matches_brute_force(
            shape in proptest::collection::vec(proptest::collection::vec(
                proptest::collection::vec(0usize..3, 0..3), 1..6), 0..6)
        ) {
            let dialogues: Vec<Dialogue> = shape.iter().enumerate().map(|(i, utts)| Dialogue {
                id: i.to_string(),
                utterances: utts.iter().enumerate().map(|(t, ents)| {
                    let mut e = ents.clone();
                    e.dedup();
                    utt(if t % 2 == 0 { Speaker::User } else { Speaker::Recommender }, &e)
                }).collect(),
            }).collect();
            let expected: usize = dialogues.iter()
                .map(|d| d.utterances.iter().filter(|u| !u.entities.is_empty()).count())
                .sum();
            let samples = build_training_samples(&dialogues);
            prop_assert_eq!(samples.len(), expected);
            for s in &samples {
                prop_assert_eq!(s.context.len(), s.target_index);
                prop_assert!(!s.target_entities.is_empty());
            }
        }
    }
}
