//! Huber (smooth-L1) behavioral-cloning loss and the discriminator loss.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::mlp::{sigmoid, Gradients, MlpModel};
use crate::error::{check_len, Error, Result};

#[inline]
fn huber(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[inline]
fn huber_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Mean Huber loss over components and its gradient w.r.t. `pred`.
pub fn huber_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("huber target", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("huber prediction"));
    }
    let m = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += huber(d);
            huber_grad(d) / m
        })
        .collect();
    Ok((loss / m, grad))
}

/// Batched Huber loss averaged over rows and columns, with its gradient.
pub fn huber_batch(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    check_len("huber batch rows", pred.nrows(), target.nrows())?;
    check_len("huber batch cols", pred.ncols(), target.ncols())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("huber batch"));
    }
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = &pred - &target;
    grad.mapv_inplace(|d| {
        loss += huber(d);
        huber_grad(d) / count
    });
    Ok((loss / count, grad))
}

/// Per-row mean Huber loss.
pub fn huber_rows(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_len("huber rows", pred.nrows(), target.nrows())?;
    check_len("huber cols", pred.ncols(), target.ncols())?;
    let diff = &pred - &target;
    Ok(diff
        .map(|d| huber(*d))
        .mean_axis(Axis(1))
        .unwrap_or_else(|| Array1::zeros(0)))
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Discriminator loss `E_a[-log R(s,a)] + E_v[-log(1 - R(s,a))]` and its
/// parameter gradients. Rows of `attacker` and `victim` are concatenated
/// `(state, action)` inputs. Evaluated through logits, so it stays finite
/// for saturated outputs.
pub fn reward_loss(
    model: &MlpModel,
    attacker: ArrayView2<'_, f64>,
    victim: ArrayView2<'_, f64>,
) -> Result<(f64, Gradients)> {
    if attacker.nrows() == 0 || victim.nrows() == 0 {
        return Err(Error::EmptyInput("discriminator batch"));
    }
    check_len("discriminator output", 1, model.output_dim())?;
    let ma = attacker.nrows() as f64;
    let mv = victim.nrows() as f64;

    let ta = model.trace(attacker)?;
    let tv = model.trace(victim)?;
    let mut loss = 0.0;
    let da = ta.logits().mapv(|z| {
        loss += softplus(-z) / ma;
        (sigmoid(z) - 1.0) / ma
    });
    let dv = tv.logits().mapv(|z| {
        loss += softplus(z) / mv;
        sigmoid(z) / mv
    });
    let mut grads = model.backward_from_logits(&ta, da);
    let gv = model.backward_from_logits(&tv, dv);
    for (g, h) in grads.layers.iter_mut().zip(gv.layers) {
        g.weight += &h.weight;
        g.bias += &h.bias;
    }
    Ok((loss, grads))
}

/// Gradient of the mean Huber loss of `model(states)` against `actions`.
pub fn huber_gradients(
    model: &MlpModel,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
) -> Result<(f64, Gradients)> {
    let trace = model.trace(states)?;
    let (loss, d_out) = huber_batch(trace.output.view(), actions)?;
    Ok((loss, model.backward_from_output(&trace, &d_out)))
}
