#![allow(dead_code)]

use crs_core::corpus::{
    build_test_samples, build_training_samples, generate_synthetic, split_train_test, SyntheticDataset,
    SyntheticSpec, TestSample, TrainingSample,
};
use crs_core::model::{HashedNgramEncoder, ModelConfig};
use crs_core::trainer::{Providers, TrainConfig};

pub struct Setup {
    pub data: SyntheticDataset,
    pub train: Vec<TrainingSample>,
    pub test: Vec<TestSample>,
    pub encoder: HashedNgramEncoder,
    pub model: ModelConfig,
    pub config: TrainConfig,
}

impl Setup {
    pub fn new(spec: SyntheticSpec, epochs: usize) -> Self {
        let data = generate_synthetic(&spec).unwrap();
        let (train_d, test_d) = split_train_test(&data.dialogues, 0.2, 7);
        let train = build_training_samples(&train_d);
        let test = build_test_samples(&test_d, &data.kg);
        Self {
            data,
            train,
            test,
            encoder: HashedNgramEncoder::new(64).unwrap(),
            model: ModelConfig { d: 16, d_llm: 64, seed: 1, ..ModelConfig::default() },
            config: TrainConfig { batch_size: 32, epochs, seed: 1, ..TrainConfig::default() },
        }
    }

    pub fn providers(&self) -> Providers<'_> {
        Providers { encoder: &self.encoder, rewrite: None }
    }
}
