//! Independent oracles for checking the laboratory's closed forms.
//!
//! Each oracle recomputes a quantity from its definition with plain loops,
//! sharing no code with the implementation under test beyond the network's
//! forward pass.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use silab_core::nn::{Gradients, HiddenActivation, MlpModel, OutputActivation};
use silab_core::rng::Rng as LabRng;

/// Monte-Carlo estimate of `KL(p || q)` per dimension for diagonal
/// Gaussians: the sample mean of `log p(x) - log q(x)` over `x ~ p`.
pub fn monte_carlo_kl(
    mu_p: &[f64],
    sigma_p: &[f64],
    mu_q: &[f64],
    sigma_q: &[f64],
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let n = mu_p.len();
    let mut total = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for j in 0..n {
            let e: f64 = StandardNormal.sample(rng);
            let x = mu_p[j] + sigma_p[j] * e;
            let zq = (x - mu_q[j]) / sigma_q[j];
            log_ratio += (sigma_q[j] / sigma_p[j]).ln() - 0.5 * e * e + 0.5 * zq * zq;
        }
        total += log_ratio / n as f64;
    }
    total / samples as f64
}

/// Weighted per-column mean and standard deviation by direct summation.
pub fn weighted_stats(states: ArrayView2<'_, f64>, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = states.dim();
    let total: f64 = weights.iter().sum();
    let mut means = vec![0.0; n];
    let mut stds = vec![0.0; n];
    for j in 0..n {
        let mut mean = 0.0;
        for i in 0..m {
            mean += weights[i] * states[[i, j]];
        }
        mean /= total;
        let mut var = 0.0;
        for i in 0..m {
            var += weights[i] * (states[[i, j]] - mean).powi(2);
        }
        means[j] = mean;
        stds[j] = (var / total).sqrt();
    }
    (means, stds)
}

/// Mean element-wise Huber loss (delta 1) from its definition.
pub fn huber_direct(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        total += if d.abs() < 1.0 {
            0.5 * d * d
        } else {
            d.abs() - 0.5
        };
    }
    total / pred.len() as f64
}

/// Discriminator loss `mean(-log R(attacker)) + mean(-log(1 - R(victim)))`
/// evaluated through the forward pass.
pub fn discriminator_loss_direct(
    model: &MlpModel,
    attacker: ArrayView2<'_, f64>,
    victim: ArrayView2<'_, f64>,
) -> f64 {
    let ra = model.forward_batch(attacker).unwrap();
    let rv = model.forward_batch(victim).unwrap();
    ra.iter().map(|r| -r.ln()).sum::<f64>() / ra.len() as f64
        + rv.iter().map(|r| -(1.0 - r).ln()).sum::<f64>() / rv.len() as f64
}

fn param(m: &mut MlpModel, layer: usize, idx: usize) -> &mut f64 {
    let l = &mut m.layers_mut()[layer];
    let weights = l.weight.len();
    if idx < weights {
        &mut l.weight.as_slice_mut().unwrap()[idx]
    } else {
        &mut l.bias[idx - weights]
    }
}

/// Central-difference gradient of `loss` for every weight and bias, in the
/// order of [`flatten`].
pub fn central_difference(model: &MlpModel, loss: &dyn Fn(&MlpModel) -> f64, h: f64) -> Vec<f64> {
    let mut probe = model.clone();
    let mut out = Vec::new();
    for li in 0..model.layers().len() {
        let count = model.layers()[li].weight.len() + model.layers()[li].bias.len();
        for idx in 0..count {
            let orig = *param(&mut probe, li, idx);
            *param(&mut probe, li, idx) = orig + h;
            let up = loss(&probe);
            *param(&mut probe, li, idx) = orig - h;
            let down = loss(&probe);
            *param(&mut probe, li, idx) = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Gradients as one vector: per layer, weights row-major then biases.
pub fn flatten(g: &Gradients) -> Vec<f64> {
    g.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Largest relative difference, with magnitudes floored at 1e-6.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// A small random network with one or two hidden layers.
pub fn random_net(rng: &mut LabRng, input: usize, output: usize, act: OutputActivation) -> MlpModel {
    let mut dims = vec![input];
    for _ in 0..rng.random_range(1..=2) {
        dims.push(rng.random_range(2..=10));
    }
    dims.push(output);
    let hidden = if rng.random_bool(0.5) {
        HiddenActivation::Relu
    } else {
        HiddenActivation::Tanh
    };
    MlpModel::new(&dims, hidden, act, rng).unwrap()
}
