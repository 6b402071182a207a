//! Victim construction, the budget-metered black-box oracle, and the
//! out-of-range defense.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::TransferDataset;
use crate::dist::{fit_reference_view, ReferenceStats};
use crate::envs::{calibrate_r_min, return_ratio, rollout, rollout_noisy, EnvSpec, ExpertPolicy};
use crate::error::{check_len, Error, Result};
use crate::nn::{
    behavioral_cloning, load_model, save_model, HiddenActivation, MlpModel, OutputActivation,
    TrainConfig,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// How a victim is built.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimConfig {
    pub hidden: Vec<usize>,
    /// Expert episodes collected for training data.
    pub episodes: usize,
    /// Standard deviation of the Gaussian noise added to executed expert
    /// actions during data collection.
    pub explore_noise: f64,
    /// Training settings; `epochs` is the epoch cap.
    pub train: TrainConfig,
    /// Validation Huber loss at which training stops.
    pub target_loss: f64,
    /// Minimum victim/expert return ratio (against the env's return floor).
    pub competence: f64,
    pub eval_episodes: usize,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            episodes: 100,
            explore_noise: 0.05,
            train: TrainConfig {
                epochs: 300,
                batch_size: 256,
                ..TrainConfig::default()
            },
            target_loss: 1e-3,
            competence: 0.9,
            eval_episodes: 8,
        }
    }
}

/// A built victim: policy, reference statistics of its visited states, the
/// environment, and its measured return.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimBundle {
    pub policy: MlpModel,
    pub reference: ReferenceStats,
    pub env: EnvSpec,
    pub victim_return: f64,
    pub victim_return_std: f64,
    pub expert_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReturnRecord {
    victim_return: f64,
    victim_return_std: f64,
    expert_return: f64,
}

pub const POLICY_FILE: &str = "policy.json";
pub const REFERENCE_FILE: &str = "reference.txt";
pub const ENV_FILE: &str = "env.json";
pub const RETURN_FILE: &str = "return.json";

impl VictimBundle {
    pub fn r_min(&self) -> Result<f64> {
        self.env
            .r_min
            .ok_or_else(|| Error::InvalidConfig("environment has no calibrated r_min".into()))
    }

    /// Return ratio of an attacker return against this victim's recorded
    /// return.
    pub fn return_ratio(&self, attacker_return: f64) -> Result<f64> {
        self.return_ratio_against(attacker_return, self.victim_return)
    }

    /// Return ratio against a victim return measured on the same episodes.
    pub fn return_ratio_against(&self, attacker_return: f64, victim_return: f64) -> Result<f64> {
        return_ratio(attacker_return, victim_return, Some(self.r_min()?))
    }

    /// Write the four bundle artifacts into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_model(&self.policy, dir.join(POLICY_FILE))?;
        self.reference.save(dir.join(REFERENCE_FILE))?;
        let env = serde_json::to_string_pretty(&self.env).expect("env serializes");
        fs::write(dir.join(ENV_FILE), env)?;
        let ret = ReturnRecord {
            victim_return: self.victim_return,
            victim_return_std: self.victim_return_std,
            expert_return: self.expert_return,
        };
        fs::write(
            dir.join(RETURN_FILE),
            serde_json::to_string_pretty(&ret).expect("record serializes"),
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let policy = load_model(dir.join(POLICY_FILE))?;
        let reference = ReferenceStats::load(dir.join(REFERENCE_FILE))?;
        let env: EnvSpec = serde_json::from_str(&fs::read_to_string(dir.join(ENV_FILE))?)
            .map_err(|e| Error::Format(format!("env config: {e}")))?;
        env.validate()?;
        let ret: ReturnRecord = serde_json::from_str(&fs::read_to_string(dir.join(RETURN_FILE))?)
            .map_err(|e| Error::Format(format!("return record: {e}")))?;
        check_len("victim input", env.state_dim, policy.input_dim())?;
        check_len("victim output", env.action_dim, policy.output_dim())?;
        Ok(Self {
            policy,
            reference,
            env,
            victim_return: ret.victim_return,
            victim_return_std: ret.victim_return_std,
            expert_return: ret.expert_return,
        })
    }
}

/// Noisy expert demonstrations used to train a victim.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstrations {
    /// States at which an action was taken.
    pub states: Array2<f64>,
    /// Clean clipped expert actions for `states`.
    pub actions: Array2<f64>,
    /// Every visited state, terminal states included.
    pub visited: Array2<f64>,
}

/// Roll out the expert with Gaussian action noise. Deterministic in `seed`
/// and shared with [`train_victim`], so callers can recover the exact
/// visited-state set of a built victim.
pub fn collect_demonstrations(
    env: &EnvSpec,
    cfg: &VictimConfig,
    seed: u64,
) -> Result<Demonstrations> {
    let demos = rollout_noisy(
        env,
        &mut ExpertPolicy(env),
        cfg.episodes,
        derive_seed(seed, "victim/demos"),
        cfg.explore_noise,
    )?;
    let rows: usize = demos.trajectories.iter().map(|t| t.actions.len()).sum();
    let mut states = Array2::zeros((rows, env.state_dim));
    let mut actions = Array2::zeros((rows, env.action_dim));
    let mut visited = Array2::zeros((rows + demos.trajectories.len(), env.state_dim));
    let (mut r, mut v) = (0, 0);
    for traj in &demos.trajectories {
        for (t, s) in traj.states.iter().enumerate() {
            visited.row_mut(v).assign(&ArrayView1::from(s));
            v += 1;
            if t < traj.actions.len() {
                states.row_mut(r).assign(&ArrayView1::from(s));
                actions
                    .row_mut(r)
                    .assign(&ArrayView1::from(&traj.actions[t]));
                r += 1;
            }
        }
    }
    Ok(Demonstrations {
        states,
        actions,
        visited,
    })
}

/// Build a victim: collect noisy expert demonstrations, clone them, fit the
/// reference statistics, and verify competence in the environment.
pub fn train_victim(env: &EnvSpec, cfg: &VictimConfig, seed: u64) -> Result<VictimBundle> {
    env.validate()?;
    let mut env = env.clone();
    if env.r_min.is_none() {
        env.r_min = Some(calibrate_r_min(&env, 100)?);
    }

    let demos = collect_demonstrations(&env, cfg, seed)?;
    let rows = demos.states.nrows();
    let (states, actions) = (demos.states, demos.actions);
    let visited = demos.visited;
    let reference = fit_reference_view(visited.view())?;

    // Shuffle rows so the positional split is random.
    let data = TransferDataset::new(states, actions, 0.0)?;
    let data = data.sample(
        rows,
        cfg.train.val_fraction,
        &mut rng_from_seed(derive_seed(seed, "victim/split")),
    )?;

    let mut dims = vec![env.state_dim];
    dims.extend(&cfg.hidden);
    dims.push(env.action_dim);
    let mut policy = MlpModel::new(
        &dims,
        HiddenActivation::Relu,
        OutputActivation::Tanh,
        &mut rng_from_seed(derive_seed(seed, "victim/init")),
    )?;
    policy.set_input_normalization(&reference.mu_star, &reference.sigma_star)?;
    let train = TrainConfig {
        stop_below: Some(cfg.target_loss),
        seed: derive_seed(seed, "victim/train"),
        ..cfg.train.clone()
    };
    behavioral_cloning(&data, &mut policy, rows, &train)?;

    let eval_seed = derive_seed(seed, "victim/eval");
    let expert = rollout(&env, &mut ExpertPolicy(&env), cfg.eval_episodes, eval_seed)?;
    let victim = rollout(&env, &mut &policy, cfg.eval_episodes, eval_seed)?;
    let ratio = return_ratio(victim.mean_return, expert.mean_return, env.r_min)?;
    if ratio < cfg.competence {
        return Err(Error::Build(format!(
            "victim return {:.4} vs expert return {:.4} (ratio {ratio:.4} < {})",
            victim.mean_return, expert.mean_return, cfg.competence
        )));
    }
    Ok(VictimBundle {
        policy,
        reference,
        env,
        victim_return: victim.mean_return,
        victim_return_std: victim.std_return,
        expert_return: expert.mean_return,
    })
}

/// Query counter with atomic check-and-increment.
#[derive(Debug)]
pub struct BudgetLedger {
    total: u64,
    consumed: AtomicU64,
}

impl BudgetLedger {
    pub fn new(total: u64) -> Self {
        Self {
            total,
            consumed: AtomicU64::new(0),
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.consumed()
    }

    /// Consume `count` queries, or fail without consuming anything.
    pub fn try_consume(&self, count: u64) -> Result<()> {
        self.consumed
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| {
                c.checked_add(count).filter(|next| *next <= self.total)
            })
            .map(|_| ())
            .map_err(|c| Error::BudgetExhausted {
                requested: count,
                remaining: self.total - c,
            })
    }
}

/// Out-of-range defense: states outside `[lo, hi]` in any component get a
/// uniform random action.
#[derive(Debug)]
pub struct Defense {
    lo: Vec<f64>,
    hi: Vec<f64>,
    rng: Mutex<Rng>,
}

impl Defense {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Result<Self> {
        check_len("defense range", lo.len(), hi.len())?;
        Ok(Self {
            lo,
            hi,
            rng: Mutex::new(rng_from_seed(seed)),
        })
    }

    /// Valid range taken from the victim's visited-state extremes.
    pub fn from_reference(reference: &ReferenceStats, seed: u64) -> Self {
        Self::new(reference.lo.clone(), reference.hi.clone(), seed).expect("reference ranges agree")
    }

    /// Closed-interval membership test.
    pub fn in_range(&self, state: &[f64]) -> bool {
        state
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(s, (l, h))| *s >= *l && *s <= *h)
    }
}

/// Black-box access to a victim policy. Answers are the victim's mean
/// action clipped to `[-1, 1]`; every answered state costs one unit of
/// budget.
#[derive(Debug)]
pub struct Oracle {
    policy: MlpModel,
    ledger: BudgetLedger,
    defense: Option<Defense>,
    /// Rows answered through either entry point.
    answered: AtomicU64,
}

impl Oracle {
    pub fn new(policy: MlpModel, budget: u64) -> Self {
        Self {
            policy,
            ledger: BudgetLedger::new(budget),
            defense: None,
            answered: AtomicU64::new(0),
        }
    }

    pub fn with_defense(policy: MlpModel, budget: u64, defense: Defense) -> Self {
        Self {
            policy,
            ledger: BudgetLedger::new(budget),
            defense: Some(defense),
            answered: AtomicU64::new(0),
        }
    }

    pub fn for_victim(victim: &VictimBundle, budget: u64, defense_seed: Option<u64>) -> Self {
        match defense_seed {
            Some(seed) => Self::with_defense(
                victim.policy.clone(),
                budget,
                Defense::from_reference(&victim.reference, seed),
            ),
            None => Self::new(victim.policy.clone(), budget),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    /// Rows answered so far, metered or not. For an attack this must equal
    /// the ledger's consumed count.
    pub fn answered(&self) -> u64 {
        self.answered.load(Ordering::SeqCst)
    }

    pub fn is_defended(&self) -> bool {
        self.defense.is_some()
    }

    /// Metered query; all-or-nothing against the budget.
    pub fn query(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("oracle state width", self.state_dim(), states.ncols())?;
        if states.nrows() == 0 {
            return Ok(Array2::zeros((0, self.action_dim())));
        }
        self.ledger.try_consume(states.nrows() as u64)?;
        self.answer(states)
    }

    /// Answers without touching the ledger. Reserved for analysis harnesses
    /// that study the victim from an analytical viewpoint, never for attacks.
    pub fn query_unmetered(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("oracle state width", self.state_dim(), states.ncols())?;
        self.answer(states)
    }

    fn answer(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        // Chunked so very large queries do not materialize every hidden
        // activation at once.
        const CHUNK: usize = 16_384;
        self.answered
            .fetch_add(states.nrows() as u64, Ordering::SeqCst);
        let mut actions = Array2::zeros((states.nrows(), self.action_dim()));
        let mut start = 0;
        while start < states.nrows() {
            let end = (start + CHUNK).min(states.nrows());
            let out = self
                .policy
                .forward_batch(states.slice(s![start..end, ..]))?;
            actions.slice_mut(s![start..end, ..]).assign(&out);
            start = end;
        }
        // Served at single precision, so extreme tanh logits round to
        // exactly +-1.
        actions.mapv_inplace(|a| (a as f32 as f64).clamp(-1.0, 1.0));
        if let Some(defense) = &self.defense {
            let mut rng = defense.rng.lock().expect("defense rng lock");
            for (row, mut a) in states.rows().into_iter().zip(actions.rows_mut()) {
                if !defense.in_range(&row.to_vec()) {
                    a.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
                }
            }
        }
        Ok(actions)
    }
}
