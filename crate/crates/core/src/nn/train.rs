//! Behavioral cloning and discriminator training loops.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng as _;

use super::adam::{adam_step, AdamParams, AdamState};
use super::loss::{huber_batch, huber_gradients, reward_loss};
use super::mlp::MlpModel;
use crate::dataset::{prune_saturated, shuffle, TransferDataset};
use crate::error::{check_len, Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Supervised training settings shared by every behavioral-cloning call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch count, or the epoch cap when early stopping is enabled.
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub early_stop_patience: Option<usize>,
    /// Stop as soon as the validation loss falls below this value.
    pub stop_below: Option<f64>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_patience: None,
            stop_below: None,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must lie in (0,1), got {}",
                self.val_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::InvalidConfig(
                "early_stop_patience must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// What a behavioral-cloning call did.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Mean validation Huber loss of the returned weights.
    pub val_loss: f64,
    pub epochs_run: usize,
    /// Best epoch (1-based) when early stopping restored weights; 0 if the
    /// initial weights were never beaten.
    pub best_epoch: usize,
}

/// Behavioral cloning: draw `demand` pairs from `dataset`, split them, and
/// fit `model` by minibatch Huber descent on the training part.
pub fn behavioral_cloning(
    dataset: &TransferDataset,
    model: &mut MlpModel,
    demand: usize,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("behavioral cloning dataset"));
    }
    if (demand as f64) * cfg.val_fraction < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "demand {demand} leaves an empty validation split"
        )));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "bc/sample"));
    let subset = dataset.sample(demand, cfg.val_fraction, &mut rng)?;
    fit_split(&subset, model, cfg)
}

/// Train on the dataset's own train split and validate on its validation
/// split.
pub fn fit_split(
    data: &TransferDataset,
    model: &mut MlpModel,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    check_len("bc state width", model.input_dim(), data.state_dim())?;
    check_len("bc action width", model.output_dim(), data.action_dim())?;
    if data.train_len() == 0 || data.val_len() == 0 {
        return Err(Error::EmptyInput("training or validation split"));
    }

    let mut rng = rng_from_seed(derive_seed(cfg.seed, "bc/shuffle"));
    let adam = cfg.adam();
    let mut state = AdamState::new(model);
    let train_s = data.train_states();
    let train_a = data.train_actions();
    let mut order: Vec<usize> = (0..data.train_len()).collect();

    let mut best = (validation_loss_split(model, data)?, 0usize);
    let mut best_model = cfg.early_stop_patience.map(|_| model.clone());
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let s = train_s.select(Axis(0), chunk);
            let a = train_a.select(Axis(0), chunk);
            let (_, grads) = huber_gradients(model, s.view(), a.view())?;
            adam_step(model, &grads, &mut state, &adam)?;
        }
        epochs_run = epoch;

        if cfg.early_stop_patience.is_none() && cfg.stop_below.is_none() {
            continue;
        }
        let loss = validation_loss_split(model, data)?;
        if let Some(patience) = cfg.early_stop_patience {
            if loss < best.0 {
                best = (loss, epoch);
                best_model = Some(model.clone());
            } else if epoch - best.1 >= patience {
                break;
            }
        }
        if cfg.stop_below.is_some_and(|t| loss < t) {
            break;
        }
    }

    let val_loss = match best_model {
        Some(m) => {
            *model = m;
            best.0
        }
        None => validation_loss_split(model, data)?,
    };
    Ok(FitOutcome {
        val_loss,
        epochs_run,
        best_epoch: best.1,
    })
}

fn validation_loss_split(model: &MlpModel, data: &TransferDataset) -> Result<f64> {
    mean_huber(model, data.val_states(), data.val_actions())
}

/// Mean Huber loss of `model` over every pair of `valset`.
pub fn validation_loss(model: &MlpModel, valset: &TransferDataset) -> Result<f64> {
    if valset.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    mean_huber(model, valset.states(), valset.actions())
}

fn mean_huber(
    model: &MlpModel,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
) -> Result<f64> {
    // Chunked to bound memory on large validation sets; the chunk size only
    // affects summation order, which is fixed.
    const CHUNK: usize = 8192;
    let rows = states.nrows();
    let mut total = 0.0;
    let mut start = 0;
    while start < rows {
        let end = (start + CHUNK).min(rows);
        let pred = model.forward_batch(states.slice(ndarray::s![start..end, ..]))?;
        let (loss, _) = huber_batch(pred.view(), actions.slice(ndarray::s![start..end, ..]))?;
        total += loss * (end - start) as f64;
        start = end;
    }
    Ok(total / rows as f64)
}

/// Discriminator output for one `(state, action)` pair, in `(0, 1)`.
pub fn reward_forward(reward: &MlpModel, state: &[f64], action: &[f64]) -> Result<f64> {
    check_len(
        "reward input",
        reward.input_dim(),
        state.len() + action.len(),
    )?;
    let input: Vec<f64> = state.iter().chain(action).copied().collect();
    Ok(reward.forward(&input)?[0])
}

/// Concatenate state and action columns into discriminator inputs.
pub fn pair_inputs(
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[states, actions]).map_err(|e| Error::Numeric(e.to_string()))
}

/// Discriminator training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    /// Drop saturated victim pairs before training.
    pub prune: bool,
    pub seed: u64,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            learning_rate: 1e-3,
            batch_size: 256,
            val_fraction: 0.1,
            prune: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardOutcome {
    /// Loss on the last minibatch.
    pub last_loss: f64,
    /// Victim pairs left in the training split after pruning.
    pub victim_pairs: usize,
}

/// Train the discriminator to output 1 on attacker pairs and 0 on victim
/// pairs. `demand` victim pairs are drawn and split; unless disabled,
/// saturated pairs are pruned from the training split before use.
pub fn train_reward(
    d_a: &TransferDataset,
    d_v: &TransferDataset,
    reward: &mut MlpModel,
    demand: usize,
    cfg: &RewardTrainConfig,
) -> Result<RewardOutcome> {
    if d_a.is_empty() || d_v.is_empty() {
        return Err(Error::EmptyInput("discriminator datasets"));
    }
    check_len(
        "reward input",
        reward.input_dim(),
        d_v.state_dim() + d_v.action_dim(),
    )?;
    check_len(
        "attacker pair width",
        reward.input_dim(),
        d_a.state_dim() + d_a.action_dim(),
    )?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "reward/sample"));
    let subset = d_v.sample(demand.min(d_v.len()), cfg.val_fraction, &mut rng)?;
    let victim = if cfg.prune {
        prune_saturated(&subset.train_split())
    } else {
        subset.train_split()
    };
    if victim.is_empty() {
        return Err(Error::DegenerateData(
            "pruning removed every victim training pair".into(),
        ));
    }
    if cfg.steps == 0 {
        return Ok(RewardOutcome {
            last_loss: f64::NAN,
            victim_pairs: victim.len(),
        });
    }

    let victim_in = pair_inputs(victim.states(), victim.actions())?;
    let attacker_in = pair_inputs(d_a.states(), d_a.actions())?;
    let adam = AdamParams {
        learning_rate: cfg.learning_rate,
        ..AdamParams::default()
    };
    let mut state = AdamState::new(reward);
    let mut last_loss = f64::NAN;
    let mut idx_v = vec![0usize; cfg.batch_size];
    let mut idx_a = vec![0usize; cfg.batch_size];
    for _ in 0..cfg.steps {
        idx_v
            .iter_mut()
            .for_each(|i| *i = rng.random_range(0..victim_in.nrows()));
        idx_a
            .iter_mut()
            .for_each(|i| *i = rng.random_range(0..attacker_in.nrows()));
        let bv = victim_in.select(Axis(0), &idx_v);
        let ba = attacker_in.select(Axis(0), &idx_a);
        let (loss, grads) = reward_loss(reward, ba.view(), bv.view())?;
        adam_step(reward, &grads, &mut state, &adam)?;
        last_loss = loss;
    }
    Ok(RewardOutcome {
        last_loss,
        victim_pairs: victim.len(),
    })
}
