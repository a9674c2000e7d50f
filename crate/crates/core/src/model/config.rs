use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    pub fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Entity embedding dimension.
    pub d: usize,
    /// Dialogue embedding dimension.
    pub d_llm: usize,
    pub num_rgcn_layers: usize,
    pub activation: Activation,
    pub num_attention_heads: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_llm: 256,
            num_rgcn_layers: 1,
            activation: Activation::Relu,
            num_attention_heads: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_llm == 0 {
            return Err(Error::Config("d and d_llm must be positive".into()));
        }
        if self.num_attention_heads == 0 || !self.d.is_multiple_of(self.num_attention_heads) {
            return Err(Error::Config(format!(
                "d = {} is not divisible into {} attention heads",
                self.d, self.num_attention_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.num_attention_heads
    }
}
