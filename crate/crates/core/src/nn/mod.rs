//! Dense networks with exact gradients, Adam, and the Huber and
//! discriminator losses.

mod adam;
mod io;
mod loss;
mod mlp;
mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use loss::{huber_batch, huber_gradients, huber_loss, huber_rows, reward_loss};
pub use mlp::{
    sigmoid, Dense, ForwardTrace, Gradients, HiddenActivation, MlpModel, OutputActivation,
};
pub use train::{
    behavioral_cloning, fit_split, pair_inputs, reward_forward, train_reward, validation_loss,
    FitOutcome, RewardOutcome, RewardTrainConfig, TrainConfig,
};
