//! Relational graph convolution over the undirected KG index.
//!
//! Per layer: `H' = σ( Σ_r A_r H W_r + H W_0 )` where `A_r` averages the
//! relation-`r` neighbors of each row (weight `1 / c(m, r)`).

use ndarray::Array2;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::kg::KgIndex;
use crate::num::Scalar;

/// `A_r · h`.
pub(crate) fn aggregate<T: Scalar>(index: &KgIndex, relation: usize, h: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(h.raw_dim());
    for m in 0..index.num_entities() {
        let neigh = index.relation_neighbors(m, relation);
        if neigh.is_empty() {
            continue;
        }
        let inv = T::one() / T::lit(neigh.len() as f64);
        let mut row = out.row_mut(m);
        for &j in neigh {
            row.scaled_add(inv, &h.row(j));
        }
    }
    out
}

/// `A_rᵀ · g`.
fn aggregate_transpose<T: Scalar>(index: &KgIndex, relation: usize, g: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(g.raw_dim());
    for m in 0..index.num_entities() {
        let neigh = index.relation_neighbors(m, relation);
        if neigh.is_empty() {
            continue;
        }
        let inv = T::one() / T::lit(neigh.len() as f64);
        for &j in neigh {
            out.row_mut(j).scaled_add(inv, &g.row(m));
        }
    }
    out
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RgcnTrace<T> {
    inputs: Vec<Array2<T>>,
    pre_activations: Vec<Array2<T>>,
}

fn check_shapes<T: Scalar>(params: &ModelParams<T>, index: &KgIndex, config: &ModelConfig) -> Result<()> {
    if params.base_table.nrows() != index.num_entities() {
        return Err(Error::Config(format!(
            "embedding table has {} rows but the graph has {} entities",
            params.base_table.nrows(),
            index.num_entities()
        )));
    }
    if params.base_table.ncols() != config.d {
        return Err(Error::Config(format!(
            "embedding width {} does not match d = {}",
            params.base_table.ncols(),
            config.d
        )));
    }
    if params.layers.len() != config.num_rgcn_layers {
        return Err(Error::Config(format!(
            "{} RGCN layers stored, {} configured",
            params.layers.len(),
            config.num_rgcn_layers
        )));
    }
    for layer in &params.layers {
        if layer.relation_weights.len() != index.num_relations() {
            return Err(Error::Config(format!(
                "{} relation matrices stored, graph has {} relations",
                layer.relation_weights.len(),
                index.num_relations()
            )));
        }
    }
    Ok(())
}

pub fn rgcn_forward<T: Scalar>(params: &ModelParams<T>, index: &KgIndex, config: &ModelConfig) -> Result<Array2<T>> {
    rgcn_forward_traced(params, index, config).map(|(h, _)| h)
}

pub fn rgcn_forward_traced<T: Scalar>(
    params: &ModelParams<T>,
    index: &KgIndex,
    config: &ModelConfig,
) -> Result<(Array2<T>, RgcnTrace<T>)> {
    check_shapes(params, index, config)?;
    let mut h = params.base_table.clone();
    let mut trace = RgcnTrace {
        inputs: Vec::with_capacity(params.layers.len()),
        pre_activations: Vec::with_capacity(params.layers.len()),
    };
    for layer in &params.layers {
        let mut pre = h.dot(&layer.self_weight);
        for (r, w) in layer.relation_weights.iter().enumerate() {
            pre += &aggregate(index, r, &h).dot(w);
        }
        let next = pre.mapv(|x| config.activation.apply(x));
        trace.inputs.push(std::mem::replace(&mut h, next));
        trace.pre_activations.push(pre);
    }
    Ok((h, trace))
}

/// Accumulates `∂L/∂(base_table, W_r, W_0)` into `grads` given `∂L/∂H_out`.
pub fn rgcn_backward<T: Scalar>(
    params: &ModelParams<T>,
    index: &KgIndex,
    config: &ModelConfig,
    trace: &RgcnTrace<T>,
    d_out: Array2<T>,
    grads: &mut ModelParams<T>,
) {
    let mut d_h = d_out;
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input = &trace.inputs[l];
        let mut d_pre = trace.pre_activations[l].mapv(|x| config.activation.derivative(x));
        d_pre *= &d_h;
        let g = &mut grads.layers[l];
        g.self_weight += &input.t().dot(&d_pre);
        let mut d_in = d_pre.dot(&layer.self_weight.t());
        for (r, w) in layer.relation_weights.iter().enumerate() {
            let agg = aggregate(index, r, input);
            g.relation_weights[r] += &agg.t().dot(&d_pre);
            d_in += &aggregate_transpose(index, r, &d_pre.dot(&w.t()));
        }
        d_h = d_in;
    }
    grads.base_table += &d_h;
}
