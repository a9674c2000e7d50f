//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "DACR" | version: u32 | manifest_len: u32 | manifest (JSON)
//!        | tensor payloads, f32 row-major, in manifest order
//!        | SHA-256 of everything above (32 bytes)
//! ```
//!
//! Training runs at 64-bit; parameters are rounded to 32-bit when stored.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::kg::Kg;
use crate::model::{InferenceModel, ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"DACR";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ModelParams<f32>,
    pub epoch: usize,
    pub rng_digest: String,
    pub kg_fingerprint: String,
    pub encoder_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    rng_digest: String,
    kg_fingerprint: String,
    encoder_id: String,
    num_entities: usize,
    num_relations: usize,
    tensors: Vec<TensorEntry>,
}

/// Hex SHA-256 of the generator's seed, stream and word position.
pub fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    hex::encode(h.finalize())
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

impl Checkpoint {
    pub fn num_entities(&self) -> usize {
        self.params.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.params.num_relations()
    }

    /// Parameters widened to 64-bit for computation.
    pub fn params_f64(&self) -> ModelParams<f64> {
        self.params.cast()
    }

    /// Checks that the stored shapes fit `kg`.
    pub fn check_kg(&self, kg: &Kg) -> Result<()> {
        self.params
            .validate(&self.model_config, kg.num_entities(), kg.num_relations())
            .map_err(|e| Error::Config(format!("checkpoint does not match the knowledge graph: {e}")))
    }

    pub fn inference_model(&self, kg: &Kg) -> Result<InferenceModel<f64>> {
        self.check_kg(kg)?;
        InferenceModel::new(self.model_config, self.params_f64(), kg)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.params.tensors();
        let manifest = Manifest {
            model_config: self.model_config,
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            rng_digest: self.rng_digest.clone(),
            kg_fingerprint: self.kg_fingerprint.clone(),
            encoder_id: self.encoder_id.clone(),
            num_entities: self.num_entities(),
            num_relations: self.num_relations(),
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry { name: name.clone(), shape: *shape })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.params.num_scalars() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, xs) in &tensors {
            for x in *xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 + DIGEST_LEN {
            return Err(corrupt("file is truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic bytes)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let manifest_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let payload_start = 12 + manifest_len;
        if body.len() < payload_start {
            return Err(corrupt("file is truncated"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[12..payload_start])
            .map_err(|e| corrupt(format!("bad manifest: {e}")))?;
        let expected_floats: usize = manifest.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
        if body.len() - payload_start != 4 * expected_floats {
            return Err(corrupt(format!(
                "payload holds {} bytes, manifest implies {}",
                body.len() - payload_start,
                4 * expected_floats
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("digest mismatch"));
        }

        let mut params =
            ModelParams::<f32>::zeros(&manifest.model_config, manifest.num_entities, manifest.num_relations);
        let want: Vec<(String, [usize; 2])> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if want.len() != manifest.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, its configuration implies {}",
                manifest.tensors.len(),
                want.len()
            )));
        }
        for ((name, shape), entry) in want.iter().zip(&manifest.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(Error::Config(format!(
                    "tensor {} {:?} does not match configuration ({name} {shape:?})",
                    entry.name, entry.shape
                )));
            }
        }
        let mut cursor = payload_start;
        params.for_each_mut(|_, xs| {
            for x in xs.iter_mut() {
                *x = f32::from_le_bytes(body[cursor..cursor + 4].try_into().unwrap());
                cursor += 4;
            }
        });
        Ok(Self {
            model_config: manifest.model_config,
            train_config: manifest.train_config,
            params,
            epoch: manifest.epoch,
            rng_digest: manifest.rng_digest,
            kg_fingerprint: manifest.kg_fingerprint,
            encoder_id: manifest.encoder_id,
        })
    }

    /// Hex SHA-256 of the serialized body; equals the digest stored on disk.
    pub fn digest(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes).map_err(|e| Error::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and requires its model configuration to equal `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let cp = load_checkpoint(path)?;
    if cp.model_config.d != expected.d || cp.model_config.d_llm != expected.d_llm {
        return Err(Error::Config(format!(
            "checkpoint dimensions d={} d_llm={} differ from expected d={} d_llm={}",
            cp.model_config.d, cp.model_config.d_llm, expected.d, expected.d_llm
        )));
    }
    if cp.model_config != *expected {
        return Err(Error::Config(format!(
            "checkpoint model configuration {:?} differs from expected {expected:?}",
            cp.model_config
        )));
    }
    Ok(cp)
}
