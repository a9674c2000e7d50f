//! Dialogue-guided attention: the dialogue embedding is the query, the
//! mentioned entities supply keys and values.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::num::{softmax_in_place, Scalar};

#[derive(Debug, Clone)]
pub struct AttentionTrace<T> {
    query: Array1<T>,
    keys: Array2<T>,
    values: Array2<T>,
    /// One probability vector over the entity rows per head.
    pub weights: Vec<Array1<T>>,
}

/// `softmax(Q Kᵀ / √d_h) V` per head, heads concatenated.
pub fn attention_aggregate<T: Scalar>(
    dialogue: ArrayView1<T>,
    entity_rows: ArrayView2<T>,
    params: &ModelParams<T>,
    heads: usize,
) -> Result<Array1<T>> {
    attention_forward(dialogue, entity_rows, params, heads).map(|(h, _)| h)
}

pub fn attention_forward<T: Scalar>(
    dialogue: ArrayView1<T>,
    entity_rows: ArrayView2<T>,
    params: &ModelParams<T>,
    heads: usize,
) -> Result<(Array1<T>, AttentionTrace<T>)> {
    let d = params.w_key.ncols();
    if entity_rows.nrows() == 0 {
        return Err(Error::Argument("attention over an empty entity set".into()));
    }
    if dialogue.len() != params.w_query.nrows() || entity_rows.ncols() != params.w_key.nrows() {
        return Err(Error::Config(format!(
            "attention input widths ({}, {}) do not match parameters ({}, {})",
            dialogue.len(),
            entity_rows.ncols(),
            params.w_query.nrows(),
            params.w_key.nrows()
        )));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("d = {d} not divisible into {heads} heads")));
    }
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let query = dialogue.dot(&params.w_query);
    let keys = entity_rows.dot(&params.w_key);
    let values = entity_rows.dot(&params.w_value);
    let mut out = Array1::zeros(d);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![h * dh..(h + 1) * dh];
        let q = query.slice(cols);
        let mut w: Array1<T> = keys.slice(s![.., h * dh..(h + 1) * dh]).dot(&q) * scale;
        softmax_in_place(w.as_slice_mut().expect("contiguous"));
        out.slice_mut(cols)
            .assign(&w.dot(&values.slice(s![.., h * dh..(h + 1) * dh])));
        weights.push(w);
    }
    Ok((
        out,
        AttentionTrace {
            query,
            keys,
            values,
            weights,
        },
    ))
}

/// Accumulates `∂L/∂(W_Q, W_K, W_V)` into `grads`; returns `∂L/∂entity_rows`.
pub fn attention_backward<T: Scalar>(
    dialogue: ArrayView1<T>,
    entity_rows: ArrayView2<T>,
    params: &ModelParams<T>,
    trace: &AttentionTrace<T>,
    d_out: ArrayView1<T>,
    grads: &mut ModelParams<T>,
) -> Array2<T> {
    let d = params.w_key.ncols();
    let heads = trace.weights.len();
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let n = entity_rows.nrows();
    let mut d_query = Array1::<T>::zeros(d);
    let mut d_keys = Array2::<T>::zeros((n, d));
    let mut d_values = Array2::<T>::zeros((n, d));
    for (h, w) in trace.weights.iter().enumerate() {
        let lo = h * dh;
        let hi = lo + dh;
        let g = d_out.slice(s![lo..hi]);
        let v = trace.values.slice(s![.., lo..hi]);
        let k = trace.keys.slice(s![.., lo..hi]);
        let q = trace.query.slice(s![lo..hi]);
        // ∂L/∂weights
        let d_w = v.dot(&g);
        let mean = w.dot(&d_w);
        for i in 0..n {
            d_values.slice_mut(s![i, lo..hi]).scaled_add(w[i], &g);
            let d_score = w[i] * (d_w[i] - mean) * scale;
            d_keys.slice_mut(s![i, lo..hi]).scaled_add(d_score, &q);
            d_query.slice_mut(s![lo..hi]).scaled_add(d_score, &k.row(i));
        }
    }
    let outer = |a: ArrayView1<T>, b: &Array1<T>| {
        let col = a.insert_axis(ndarray::Axis(1));
        let row = b.view().insert_axis(ndarray::Axis(0));
        col.dot(&row)
    };
    grads.w_query += &outer(dialogue, &d_query);
    grads.w_key += &entity_rows.t().dot(&d_keys);
    grads.w_value += &entity_rows.t().dot(&d_values);
    d_keys.dot(&params.w_key.t()) + d_values.dot(&params.w_value.t())
}
