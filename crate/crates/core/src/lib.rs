//! Black-box policy extraction laboratory.
//!
//! Victim policies are built on small deterministic control tasks and
//! exposed through a budget-metered oracle. The attacker never sees the
//! environment or the victim's input ranges: it estimates the victim's state
//! distribution by reward-guided refinement of a Gaussian, clones the victim
//! on that estimate, and is scored by return ratio and KL divergence to a
//! reference fit of the victim's visited states.

pub mod analysis;
pub mod attack;
pub mod dataset;
pub mod dist;
pub mod envs;
pub mod error;
pub mod nn;
pub mod rng;
pub mod victim;

pub use dataset::TransferDataset;
pub use error::{Error, Result};
