//! Recall@k evaluation, a popularity baseline, hyperparameter sweeps and
//! entity embedding dumps.

mod sweep;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use sweep::{sweep, SweepParam, SweepPoint, SweepResult, SweepSetup};

use crate::corpus::{TestSample, TrainingSample};
use crate::error::{Error, Result};
use crate::kg::{EntityId, Kg};
use crate::model::{DialogueEncoder, InferenceModel, RecommendationList};
use crate::trainer::{prepare_plain, Checkpoint, EncodingCache};

pub const DEFAULT_KS: [usize; 3] = [1, 10, 50];

/// `|targets ∩ top-k| / |targets|`, with duplicate targets counted once.
pub fn recall_at_k(recommendations: &RecommendationList, targets: &[EntityId], k: usize) -> f64 {
    let targets: HashSet<EntityId> = targets.iter().copied().collect();
    if targets.is_empty() || k == 0 {
        return 0.0;
    }
    let hits = recommendations.ids().take(k).filter(|id| targets.contains(id)).count();
    hits as f64 / targets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleHits {
    pub dialogue_id: String,
    pub target_index: usize,
    /// Recall per k, in the report's k order.
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub num_test_samples: usize,
    pub samples: Vec<SampleHits>,
}

impl EvalReport {
    fn from_rankings<'a>(
        ks: &[usize],
        rankings: impl Iterator<Item = (&'a TestSample, RecommendationList)>,
    ) -> Self {
        let mut ks: Vec<usize> = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let mut sums = vec![0.0; ks.len()];
        let mut samples = Vec::new();
        for (sample, list) in rankings {
            let recall: Vec<f64> = ks.iter().map(|&k| recall_at_k(&list, &sample.target_items, k)).collect();
            for (s, r) in sums.iter_mut().zip(&recall) {
                *s += r;
            }
            samples.push(SampleHits {
                dialogue_id: sample.sample.dialogue_id.clone(),
                target_index: sample.sample.target_index,
                recall,
            });
        }
        let n = samples.len();
        let recall_at = ks
            .iter()
            .zip(&sums)
            .map(|(&k, &s)| (k, if n == 0 { 0.0 } else { s / n as f64 }))
            .collect();
        Self { recall_at, num_test_samples: n, samples }
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>8}\n", "metric", "value");
        for (k, r) in &self.recall_at {
            out.push_str(&format!("{:<10} {:>8.4}\n", format!("recall@{k}"), r));
        }
        out.push_str(&format!("{:<10} {:>8}\n", "samples", self.num_test_samples));
        out
    }

    /// One `metric,k,value` record per k.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "k", "value"]).map_err(csv_err)?;
        for (k, r) in &self.recall_at {
            w.write_record(["recall", &k.to_string(), &r.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Argument("k values must be non-empty and at least 1".into()));
    }
    Ok(())
}

/// Recall of `model` on raw test contexts, without exclusions.
pub fn evaluate_model(
    model: &InferenceModel<f64>,
    test_samples: &[TestSample],
    kg: &Kg,
    encoder: &dyn DialogueEncoder,
    ks: &[usize],
) -> Result<EvalReport> {
    check_ks(ks)?;
    if encoder.dim() != model.config.d_llm {
        return Err(Error::Config(format!(
            "encoder produces {} dimensions but the model expects {}",
            encoder.dim(),
            model.config.d_llm
        )));
    }
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let mut cache = EncodingCache::new(encoder);
    let none = HashSet::new();
    let mut rankings = Vec::with_capacity(test_samples.len());
    for t in test_samples {
        let p = prepare_plain(&t.sample, &mut cache)?;
        let list = model.recommend(kg, p.dialogue.view(), &p.context_entities, k_max, &none)?;
        rankings.push((t, list));
    }
    Ok(EvalReport::from_rankings(ks, rankings.into_iter()))
}

pub fn evaluate(
    checkpoint: &Checkpoint,
    test_samples: &[TestSample],
    kg: &Kg,
    encoder: &dyn DialogueEncoder,
    ks: &[usize],
) -> Result<EvalReport> {
    let model = checkpoint.inference_model(kg)?;
    evaluate_model(&model, test_samples, kg, encoder, ks)
}

/// Items ranked by how often they are training targets; ties and unseen
/// items follow in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityBaseline {
    pub ranking: RecommendationList,
}

impl PopularityBaseline {
    pub fn fit(train_samples: &[TrainingSample], kg: &Kg) -> Self {
        let mut counts: HashMap<EntityId, usize> = HashMap::new();
        for s in train_samples {
            for &e in &s.target_entities {
                if kg.is_item(e) {
                    *counts.entry(e).or_default() += 1;
                }
            }
        }
        let scored = kg
            .items()
            .iter()
            .map(|&id| (id, counts.get(&id).copied().unwrap_or(0) as f64))
            .collect();
        Self { ranking: crate::model::rank_top_k(scored, kg.num_items()) }
    }

    pub fn evaluate(&self, test_samples: &[TestSample], ks: &[usize]) -> Result<EvalReport> {
        check_ks(ks)?;
        Ok(EvalReport::from_rankings(
            ks,
            test_samples.iter().map(|t| (t, self.ranking.clone())),
        ))
    }
}

/// Writes `id,name,is_item,x0..` with one line per entity; returns the count.
pub fn write_embeddings<W: Write>(embeddings: &Array2<f64>, kg: &Kg, out: W) -> Result<usize> {
    if embeddings.nrows() != kg.num_entities() {
        return Err(Error::Config(format!(
            "{} embedding rows for {} entities",
            embeddings.nrows(),
            kg.num_entities()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "name".into(), "is_item".into()];
    header.extend((0..embeddings.ncols()).map(|c| format!("x{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for e in kg.entities() {
        let mut rec = vec![e.id.to_string(), e.name.clone(), u8::from(e.is_item).to_string()];
        rec.extend(embeddings.row(e.id).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(kg.num_entities())
}

/// Post-RGCN embeddings of `checkpoint` written to `path`.
pub fn dump_embeddings(checkpoint: &Checkpoint, kg: &Kg, path: impl AsRef<Path>) -> Result<usize> {
    let model = checkpoint.inference_model(kg)?;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_embeddings(&model.entity_embeddings, kg, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: EntityId,
    pub name: String,
    pub is_item: bool,
    pub coords: Vec<f64>,
}

pub fn read_embeddings<R: BufRead>(source: R) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_reader(source);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |m: &str| Error::Load { source_name: "embeddings".into(), line: i + 2, message: m.into() };
        if rec.len() < 3 {
            return Err(bad("expected id, name, is_item and coordinates"));
        }
        let coords = rec
            .iter()
            .skip(3)
            .map(|x| x.parse::<f64>().map_err(|_| bad("bad coordinate")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            id: rec[0].parse().map_err(|_| bad("bad id"))?,
            name: rec[1].to_string(),
            is_item: &rec[2] == "1",
            coords,
        });
    }
    Ok(rows)
}

/// Mean dot product over same-cluster pairs minus the mean over
/// cross-cluster pairs. Entities whose cluster is `None` are ignored.
pub fn cluster_gap(embeddings: &Array2<f64>, clusters: &[Option<usize>]) -> f64 {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..embeddings.nrows() {
        let Some(ca) = clusters.get(a).copied().flatten() else { continue };
        for b in a + 1..embeddings.nrows() {
            let Some(cb) = clusters.get(b).copied().flatten() else { continue };
            let dot = embeddings.row(a).dot(&embeddings.row(b));
            if ca == cb {
                intra += dot;
                n_intra += 1;
            } else {
                inter += dot;
                n_inter += 1;
            }
        }
    }
    intra / n_intra.max(1) as f64 - inter / n_inter.max(1) as f64
}
