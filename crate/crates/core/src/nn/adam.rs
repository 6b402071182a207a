use ndarray::Zip;

use super::mlp::{Gradients, MlpModel};
use crate::error::{check_len, Error, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Gradients,
    pub second: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<()> {
    check_len("gradient layers", model.layers().len(), grads.layers.len())?;
    for (l, g) in model.layers().iter().zip(&grads.layers) {
        if l.weight.raw_dim() != g.weight.raw_dim() || l.bias.raw_dim() != g.bias.raw_dim() {
            return Err(Error::Shape {
                context: "gradient layer",
                expected: l.weight.len() + l.bias.len(),
                actual: g.weight.len() + g.bias.len(),
            });
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamParams {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *params;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    for (((layer, g), m), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first.layers.iter_mut())
        .zip(state.second.layers.iter_mut())
    {
        Zip::from(&mut layer.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    Ok(())
}
