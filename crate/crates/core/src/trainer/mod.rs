//! Optimization of the combined objective `L = Σ_n L_n + α·L_entity` with
//! AdamW, per-epoch augmentation and substitution, and checkpointing.

mod checkpoint;
mod loss;
mod optim;

use std::collections::HashMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, rng_digest, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use loss::{rec_loss, total_loss_and_grad, BatchLoss, PreparedSample};
pub use optim::{AdamW, AdamWConfig};

use crate::augment::{run_pipeline, AugmentConfig, RewriteProvider};
use crate::corpus::{serialize_utterances, TrainingSample};
use crate::error::{Error, Result};
use crate::kg::{EntityId, Kg, KgIndex};
use crate::kgem::{substitute_entities, Denominator};
use crate::model::{user_vector, DialogueEncoder, ModelConfig, ModelParams, rgcn_forward};

/// Where stage-1 rewrites come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stage1Mode {
    /// Stage 1 is skipped.
    #[default]
    Off,
    /// Recorded completions only.
    Fixtures,
    /// A live chat endpoint, recording into the fixture directory.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub substitution_rate: f64,
    pub augmentation_rate: f64,
    pub stage1: Stage1Mode,
    /// Uniform negatives per entity for the entity loss; 0 uses every entity.
    pub entity_negatives: usize,
    /// Fraction of samples held out for a per-epoch validation loss; 0 disables it.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            learning_rate: 0.001,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 50,
            substitution_rate: 0.2,
            augmentation_rate: 0.2,
            stage1: Stage1Mode::Off,
            entity_negatives: 0,
            validation_fraction: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha = {} must be finite and non-negative", self.alpha)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate = {} must be non-negative", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay = {} must be non-negative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        unit("substitution_rate", self.substitution_rate)?;
        unit("augmentation_rate", self.augmentation_rate)?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction = {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn denominator(&self) -> Denominator {
        match self.entity_negatives {
            0 => Denominator::Full,
            negatives => Denominator::Sampled { negatives },
        }
    }

    fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            rate: self.augmentation_rate,
            stage1_enabled: self.stage1 != Stage1Mode::Off,
            seed: self.seed,
        }
    }
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub samples: usize,
    /// Mean `L_n` over the batch.
    pub rec_loss: f64,
    pub entity_loss: f64,
    pub total: f64,
}

/// Per-epoch losses. `total = rec_loss + alpha · entity_loss` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    /// Mean `L_n` per training sample.
    pub rec_loss: f64,
    /// Mean `L_entity` over the epoch's batches.
    pub entity_loss: f64,
    pub total: f64,
    pub batches: Vec<BatchRecord>,
    pub stage1_attempts: usize,
    pub stage1_failures: usize,
    pub validation_rec_loss: Option<f64>,
}

/// Dialogue encoder plus the optional stage-1 rewriter.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub encoder: &'a dyn DialogueEncoder,
    pub rewrite: Option<&'a dyn RewriteProvider>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossReport>,
    /// Final 64-bit parameters before rounding into the checkpoint.
    pub params: ModelParams<f64>,
}

/// Memoizes dialogue embeddings by text. Empty text maps to the zero vector.
pub struct EncodingCache<'a> {
    encoder: &'a dyn DialogueEncoder,
    cache: HashMap<String, Array1<f64>>,
}

impl<'a> EncodingCache<'a> {
    pub fn new(encoder: &'a dyn DialogueEncoder) -> Self {
        Self { encoder, cache: HashMap::new() }
    }

    pub fn encode(&mut self, text: &str) -> Result<Array1<f64>> {
        if text.trim().is_empty() {
            return Ok(Array1::zeros(self.encoder.dim()));
        }
        if let Some(v) = self.cache.get(text) {
            return Ok(v.clone());
        }
        let v: Array1<f64> = self.encoder.encode(text)?.to_array();
        if v.len() != self.encoder.dim() {
            return Err(Error::Embedding(format!(
                "provider returned {} dimensions, expected {}",
                v.len(),
                self.encoder.dim()
            )));
        }
        self.cache.insert(text.to_string(), v.clone());
        Ok(v)
    }
}

fn distinct(ids: &[EntityId]) -> Vec<EntityId> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// Test-time preparation: raw context, no augmentation or substitution.
pub fn prepare_plain(sample: &TrainingSample, cache: &mut EncodingCache<'_>) -> Result<PreparedSample<f64>> {
    Ok(PreparedSample {
        dialogue: cache.encode(&serialize_utterances(&sample.context))?,
        context_entities: sample.context_entities.clone(),
        targets: distinct(&sample.target_entities),
    })
}

/// Mean `L_n` of `samples` under `params` without augmentation.
pub fn mean_rec_loss(
    samples: &[TrainingSample],
    params: &ModelParams<f64>,
    index: &KgIndex,
    model_config: &ModelConfig,
    cache: &mut EncodingCache<'_>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("no samples".into()));
    }
    let entities = rgcn_forward(params, index, model_config)?;
    let mut total = 0.0;
    for s in samples {
        let p = prepare_plain(s, cache)?;
        let u = user_vector(params, &entities, p.dialogue.view(), &p.context_entities, model_config)?;
        let users = u.view().insert_axis(ndarray::Axis(0));
        total += rec_loss(users, &[p.targets], entities.view())?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains from `model_config.seed` initialization. Deterministic given the
/// configuration, data and providers.
pub fn train(
    samples: &[TrainingSample],
    kg: &Kg,
    model_config: &ModelConfig,
    config: &TrainConfig,
    providers: Providers<'_>,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model_config, kg.num_entities(), kg.num_relations());
    train_from(params, samples, kg, model_config, config, providers)
}

/// Like [`train`] but starting from the given parameters.
pub fn train_from(
    mut params: ModelParams<f64>,
    samples: &[TrainingSample],
    kg: &Kg,
    model_config: &ModelConfig,
    config: &TrainConfig,
    providers: Providers<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    params.validate(model_config, kg.num_entities(), kg.num_relations())?;
    if providers.encoder.dim() != model_config.d_llm {
        return Err(Error::Config(format!(
            "encoder produces {} dimensions but d_llm = {}",
            providers.encoder.dim(),
            model_config.d_llm
        )));
    }
    let usable: Vec<&TrainingSample> = samples.iter().filter(|s| !s.target_entities.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }

    let index = kg.build_index();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let validation: Vec<TrainingSample> = if config.validation_fraction > 0.0 {
        order.shuffle(&mut rng);
        let n_val = ((usable.len() as f64) * config.validation_fraction).round() as usize;
        let n_val = n_val.min(usable.len() - 1);
        let held: Vec<TrainingSample> = order.drain(..n_val).map(|i| usable[i].clone()).collect();
        order.sort_unstable();
        held
    } else {
        Vec::new()
    };

    let augment = config.augment_config();
    let alpha = config.alpha;
    let denominator = config.denominator();
    let mut cache = EncodingCache::new(providers.encoder);
    let mut optimizer = AdamW::new(AdamWConfig::new(config.learning_rate, config.weight_decay), &params);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut batches = Vec::new();
        let (mut attempts, mut failures) = (0, 0);
        let (mut rec_sum, mut entity_sum, mut sample_count) = (0.0, 0.0, 0usize);

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let wrap = |e: Error| Error::Training { epoch, batch: b, source: Box::new(e) };
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = usable[i];
                let augmented = run_pipeline(&sample.context, &augment, providers.rewrite, &mut rng);
                if augment.stage1_enabled && !sample.context.is_empty() {
                    attempts += 1;
                }
                failures += usize::from(augmented.stage1_failed);
                let context_entities =
                    substitute_entities(&sample.context_entities, &index, config.substitution_rate, &mut rng)
                        .map_err(wrap)?;
                batch.push(PreparedSample {
                    dialogue: cache.encode(&augmented.serialize()).map_err(wrap)?,
                    context_entities,
                    targets: distinct(&sample.target_entities),
                });
            }
            let (loss, mut grads) =
                total_loss_and_grad(&batch, &params, &index, model_config, alpha, denominator, &mut rng)
                    .map_err(wrap)?;
            let scale = 1.0 / batch.len() as f64;
            grads.for_each_mut(|_, xs| xs.iter_mut().for_each(|x| *x *= scale));
            optimizer.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(wrap(Error::Numeric("parameters diverged".into())));
            }
            rec_sum += loss.rec_loss;
            entity_sum += loss.entity_loss;
            sample_count += batch.len();
            batches.push(BatchRecord {
                batch: b,
                samples: batch.len(),
                rec_loss: loss.rec_loss * scale,
                entity_loss: loss.entity_loss,
                total: loss.rec_loss * scale + alpha * loss.entity_loss,
            });
        }

        let rec_loss = rec_sum / sample_count as f64;
        let entity_loss = entity_sum / batches.len() as f64;
        let validation_rec_loss = if validation.is_empty() {
            None
        } else {
            Some(mean_rec_loss(&validation, &params, &index, model_config, &mut cache)?)
        };
        let report = LossReport {
            epoch,
            rec_loss,
            entity_loss,
            total: rec_loss + alpha * entity_loss,
            batches,
            stage1_attempts: attempts,
            stage1_failures: failures,
            validation_rec_loss,
        };
        log::info!(
            "epoch {epoch}: total {:.6} rec {:.6} entity {:.6}",
            report.total,
            report.rec_loss,
            report.entity_loss
        );
        history.push(report);
    }

    let checkpoint = Checkpoint {
        model_config: *model_config,
        train_config: config.clone(),
        params: params.cast(),
        epoch: config.epochs,
        rng_digest: rng_digest(&rng),
        kg_fingerprint: kg.fingerprint(),
        encoder_id: providers.encoder.provider_id(),
    };
    Ok(TrainOutcome { checkpoint, history, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_training_samples, generate_synthetic, SyntheticSpec};
    use crate::model::HashedNgramEncoder;

    fn tiny() -> (crate::corpus::SyntheticDataset, ModelConfig) {
        let data = generate_synthetic(&SyntheticSpec {
            num_clusters: 2,
            entities_per_cluster: 5,
            items_per_cluster: 2,
            dialogues: 20,
            utterances_per_dialogue: 4,
            seed: 1,
        })
        .unwrap();
        let config = ModelConfig { d: 4, d_llm: 16, seed: 3, ..ModelConfig::default() };
        (data, config)
    }

    #[test]
    fn config_defaults_and_toml() {
        let c: TrainConfig = toml::from_str("alpha = 0.5\nepochs = 3\nstage1 = \"fixtures\"").unwrap();
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.stage1, Stage1Mode::Fixtures);
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.weight_decay, 0.01);
        assert_eq!(c.batch_size, 128);
        assert!(toml::from_str::<TrainConfig>("alpah = 1").is_err());
        assert!(TrainConfig { alpha: -1.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (data, mc) = tiny();
        let samples = build_training_samples(&data.dialogues);
        let enc = HashedNgramEncoder::new(16).unwrap();
        let tc = TrainConfig { learning_rate: 0.0, epochs: 1, batch_size: 8, ..TrainConfig::default() };
        let out = train(&samples, &data.kg, &mc, &tc, Providers { encoder: &enc, rewrite: None }).unwrap();
        let init = ModelParams::<f64>::init(&mc, data.kg.num_entities(), data.kg.num_relations());
        assert_eq!(out.params, init);
    }

    #[test]
    fn report_totals_are_exact() {
        let (data, mc) = tiny();
        let samples = build_training_samples(&data.dialogues);
        let enc = HashedNgramEncoder::new(16).unwrap();
        let tc = TrainConfig { epochs: 2, batch_size: 8, alpha: 0.7, validation_fraction: 0.2, ..TrainConfig::default() };
        let out = train(&samples, &data.kg, &mc, &tc, Providers { encoder: &enc, rewrite: None }).unwrap();
        assert_eq!(out.history.len(), 2);
        for r in &out.history {
            assert_eq!(r.total, r.rec_loss + 0.7 * r.entity_loss);
            assert!(r.validation_rec_loss.is_some());
            assert_eq!(r.stage1_attempts, 0);
        }
    }

    #[test]
    fn stage1_without_provider_counts_failures() {
        let (data, mc) = tiny();
        let samples = build_training_samples(&data.dialogues);
        let enc = HashedNgramEncoder::new(16).unwrap();
        let tc = TrainConfig { epochs: 1, batch_size: 8, stage1: Stage1Mode::Fixtures, ..TrainConfig::default() };
        let out = train(&samples, &data.kg, &mc, &tc, Providers { encoder: &enc, rewrite: None }).unwrap();
        let r = &out.history[0];
        assert!(r.stage1_failures > 0);
        assert!(r.stage1_failures <= r.stage1_attempts);
    }

    #[test]
    fn encoder_dimension_mismatch_is_config_error() {
        let (data, mc) = tiny();
        let samples = build_training_samples(&data.dialogues);
        let enc = HashedNgramEncoder::new(8).unwrap();
        let err = train(&samples, &data.kg, &mc, &TrainConfig::default(), Providers { encoder: &enc, rewrite: None })
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
