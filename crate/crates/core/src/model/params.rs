use ndarray::Array2;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RgcnLayer<T> {
    /// One `d × d` matrix per relation.
    pub relation_weights: Vec<Array2<T>>,
    /// Self-loop transform, `d × d`.
    pub self_weight: Array2<T>,
}

/// Every trainable tensor. Row-vector convention: a row `h` maps to `h · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// Initial entity embeddings, `|E| × d`.
    pub base_table: Array2<T>,
    pub layers: Vec<RgcnLayer<T>>,
    /// `d_llm × d`.
    pub w_query: Array2<T>,
    pub w_key: Array2<T>,
    pub w_value: Array2<T>,
    /// Projects the dialogue embedding into entity space, `d_llm × d`.
    pub w_dialogue: Array2<T>,
    /// Unconstrained fusion weight; `λ = logistic(fusion_raw)`.
    pub fusion_raw: T,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = ModelParams<T>;

impl<T: Scalar> ModelParams<T> {
    /// Uniform `[-1/√d, 1/√d]` initialization, `fusion_raw = 0`.
    pub fn init(config: &ModelConfig, num_entities: usize, num_relations: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (config.d as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || T::lit(dist.sample(&mut rng)))
        };
        let d = config.d;
        let base_table = draw(num_entities, d);
        let layers = (0..config.num_rgcn_layers)
            .map(|_| RgcnLayer {
                relation_weights: (0..num_relations).map(|_| draw(d, d)).collect(),
                self_weight: draw(d, d),
            })
            .collect();
        let w_query = draw(config.d_llm, d);
        let w_key = draw(d, d);
        let w_value = draw(d, d);
        let w_dialogue = draw(config.d_llm, d);
        Self {
            base_table,
            layers,
            w_query,
            w_key,
            w_value,
            w_dialogue,
            fusion_raw: T::zero(),
        }
    }

    pub fn zeros(config: &ModelConfig, num_entities: usize, num_relations: usize) -> Self {
        let d = config.d;
        Self {
            base_table: Array2::zeros((num_entities, d)),
            layers: (0..config.num_rgcn_layers)
                .map(|_| RgcnLayer {
                    relation_weights: vec![Array2::zeros((d, d)); num_relations],
                    self_weight: Array2::zeros((d, d)),
                })
                .collect(),
            w_query: Array2::zeros((config.d_llm, d)),
            w_key: Array2::zeros((d, d)),
            w_value: Array2::zeros((d, d)),
            w_dialogue: Array2::zeros((config.d_llm, d)),
            fusion_raw: T::zero(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, xs| xs.iter_mut().for_each(|x| *x = T::zero()));
        z
    }

    pub fn num_entities(&self) -> usize {
        self.base_table.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.layers.first().map_or(0, |l| l.relation_weights.len())
    }

    pub fn lambda(&self) -> T {
        crate::num::logistic(self.fusion_raw)
    }

    /// Named tensors in a fixed order, with their 2-D shapes.
    pub fn tensors(&self) -> Vec<(String, [usize; 2], &[T])> {
        fn view<T>(name: String, a: &Array2<T>) -> (String, [usize; 2], &[T]) {
            let shape = [a.nrows(), a.ncols()];
            (name, shape, a.as_slice().expect("standard layout"))
        }
        let mut out = vec![view("base_table".into(), &self.base_table)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (r, w) in layer.relation_weights.iter().enumerate() {
                out.push(view(format!("rgcn.{l}.relation.{r}"), w));
            }
            out.push(view(format!("rgcn.{l}.self"), &layer.self_weight));
        }
        out.push(view("attention.query".into(), &self.w_query));
        out.push(view("attention.key".into(), &self.w_key));
        out.push(view("attention.value".into(), &self.w_value));
        out.push(view("fusion.dialogue_proj".into(), &self.w_dialogue));
        out.push(("fusion.raw".into(), [1, 1], std::slice::from_ref(&self.fusion_raw)));
        out
    }

    /// Visits every tensor mutably in the same order as [`Self::tensors`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("base_table", self.base_table.as_slice_mut().expect("standard layout"));
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (r, w) in layer.relation_weights.iter_mut().enumerate() {
                f(&format!("rgcn.{l}.relation.{r}"), w.as_slice_mut().expect("standard layout"));
            }
            f(&format!("rgcn.{l}.self"), layer.self_weight.as_slice_mut().expect("standard layout"));
        }
        f("attention.query", self.w_query.as_slice_mut().expect("standard layout"));
        f("attention.key", self.w_key.as_slice_mut().expect("standard layout"));
        f("attention.value", self.w_value.as_slice_mut().expect("standard layout"));
        f("fusion.dialogue_proj", self.w_dialogue.as_slice_mut().expect("standard layout"));
        f("fusion.raw", std::slice::from_mut(&mut self.fusion_raw));
    }

    /// Pairs each tensor of `self` with the same tensor of `other`.
    pub fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(&str, &mut [T], &[T])) {
        let others: Vec<Vec<T>> = other.tensors().into_iter().map(|(_, _, xs)| xs.to_vec()).collect();
        let mut i = 0;
        self.for_each_mut(|name, xs| {
            f(name, xs, &others[i]);
            i += 1;
        });
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, _, xs)| xs.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, xs)| xs.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |a: &Array2<T>| a.mapv(|x| U::lit(x.to_f64_lossy()));
        ModelParams {
            base_table: c(&self.base_table),
            layers: self
                .layers
                .iter()
                .map(|l| RgcnLayer {
                    relation_weights: l.relation_weights.iter().map(c).collect(),
                    self_weight: c(&l.self_weight),
                })
                .collect(),
            w_query: c(&self.w_query),
            w_key: c(&self.w_key),
            w_value: c(&self.w_value),
            w_dialogue: c(&self.w_dialogue),
            fusion_raw: U::lit(self.fusion_raw.to_f64_lossy()),
        }
    }

    /// Checks every shape against the configuration and graph sizes.
    pub fn validate(&self, config: &ModelConfig, num_entities: usize, num_relations: usize) -> Result<()> {
        let expected = ModelParams::<T>::zeros(config, num_entities, num_relations);
        let want = expected.tensors();
        let have = self.tensors();
        if want.len() != have.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, configuration implies {}",
                have.len(),
                want.len()
            )));
        }
        for ((name, ws, _), (_, hs, _)) in want.iter().zip(&have) {
            if ws != hs {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {hs:?}, configuration implies {ws:?}"
                )));
            }
        }
        Ok(())
    }
}
