use ndarray::{Array1, ArrayView1, Axis};

use super::ModelParams;
use crate::num::Scalar;

/// Values needed to differentiate the fusion step.
#[derive(Debug, Clone)]
pub struct FusionTrace<T> {
    projected: Array1<T>,
    implicit: Option<Array1<T>>,
}

/// `u = λ·(s W_S) + (1 − λ)·h`, or `s W_S` alone when no entity was mentioned.
pub fn fuse_user<T: Scalar>(
    dialogue: ArrayView1<T>,
    implicit: Option<ArrayView1<T>>,
    params: &ModelParams<T>,
) -> Array1<T> {
    fuse_forward(dialogue, implicit, params).0
}

pub fn fuse_forward<T: Scalar>(
    dialogue: ArrayView1<T>,
    implicit: Option<ArrayView1<T>>,
    params: &ModelParams<T>,
) -> (Array1<T>, FusionTrace<T>) {
    let projected = dialogue.dot(&params.w_dialogue);
    let user = match implicit {
        None => projected.clone(),
        Some(h) => {
            let lambda = params.lambda();
            &projected * lambda + &(&h * (T::one() - lambda))
        }
    };
    (
        user,
        FusionTrace {
            projected,
            implicit: implicit.map(|h| h.to_owned()),
        },
    )
}

/// Accumulates `∂L/∂(W_S, fusion_raw)`; returns `∂L/∂h` when `h` was present.
pub fn fuse_backward<T: Scalar>(
    dialogue: ArrayView1<T>,
    params: &ModelParams<T>,
    trace: &FusionTrace<T>,
    d_user: ArrayView1<T>,
    grads: &mut ModelParams<T>,
) -> Option<Array1<T>> {
    let (d_proj, d_implicit) = match &trace.implicit {
        None => (d_user.to_owned(), None),
        Some(h) => {
            let lambda = params.lambda();
            let diff = &trace.projected - h;
            grads.fusion_raw += d_user.dot(&diff) * lambda * (T::one() - lambda);
            (&d_user * lambda, Some(&d_user * (T::one() - lambda)))
        }
    };
    let col = dialogue.insert_axis(Axis(1));
    let row = d_proj.view().insert_axis(Axis(0));
    grads.w_dialogue += &col.dot(&row);
    d_implicit
}
