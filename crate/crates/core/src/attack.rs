//! Stealthy Imitation: iterative estimation of the victim's state
//! distribution followed by cloning on the best estimate, plus the
//! comparison attacks (random-scale queries and the exposed reference fit).

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::analysis::delta_kl;
use crate::dataset::{prune_saturated, TransferDataset};
use crate::dist::{
    dist_refine, fit_full_gaussian, kl_diag, proxy_rewards, GaussianEstimate, ReferenceStats,
};
use crate::envs::rollout;
use crate::error::{Error, Result};
use crate::nn::{
    behavioral_cloning, fit_split, huber_rows, train_reward, FitOutcome, HiddenActivation,
    MlpModel, OutputActivation, RewardTrainConfig, TrainConfig,
};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::victim::{Oracle, VictimBundle};

/// Smallest demand handed to a cloning or refinement step; keeps the
/// validation split non-empty when `b_v * mean(sigma)` rounds to almost
/// nothing.
pub const MIN_DEMAND: usize = 100;

/// Query-budget parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Total victim queries `B`.
    pub total: u64,
    /// Reserve `B_r` kept for the final transfer set.
    pub reserved: u64,
    /// Base per-iteration allotment `b_v`.
    pub base: u64,
    /// Attacker-side sample count `b_a`; `None` ties it to the current `b_c`.
    pub attacker_batch: Option<u64>,
}

impl BudgetConfig {
    pub fn desk() -> Self {
        Self {
            total: 2_000_000,
            reserved: 200_000,
            base: 20_000,
            attacker_batch: None,
        }
    }

    pub fn paper() -> Self {
        Self {
            total: 50_000_000,
            reserved: 1_000_000,
            base: 100_000,
            attacker_batch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total == 0 || self.base == 0 {
            return Err(Error::InvalidConfig(
                "budget total and base must be positive".into(),
            ));
        }
        if self.reserved >= self.total {
            return Err(Error::InvalidConfig(format!(
                "reserved budget {} must be below total {}",
                self.reserved, self.total
            )));
        }
        if self.base > self.total - self.reserved {
            return Err(Error::InvalidConfig(format!(
                "base budget {} exceeds the iteration budget {}",
                self.base,
                self.total - self.reserved
            )));
        }
        if self.attacker_batch == Some(0) {
            return Err(Error::InvalidConfig(
                "attacker batch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Component switches for ablation runs. All on is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Train the evaluator on `b_v` pairs rather than the whole transfer set.
    pub fixed_evaluator_budget: bool,
    /// Weight refinement by the discriminator's proxy reward; when off,
    /// per-pair Huber losses of the attacker policy are used instead.
    pub use_reward_model: bool,
    /// Drop saturated victim pairs before discriminator training and
    /// refinement.
    pub prune: bool,
    /// Clone on `b_v * mean(sigma)` pairs rather than `b_v`.
    pub dynamic_bc_budget: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            fixed_evaluator_budget: true,
            use_reward_model: true,
            prune: true,
            dynamic_bc_budget: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub budget: BudgetConfig,
    pub epochs_per_iter: usize,
    /// Starting mean; `None` is the zero vector.
    pub init_mu: Option<Vec<f64>>,
    /// Starting standard deviation; `None` is the unit vector.
    pub init_sigma: Option<Vec<f64>>,
    pub ablation: Ablation,
    /// Hidden widths of the attacker policy and the evaluator.
    pub hidden: Vec<usize>,
    /// Hidden widths of the discriminator.
    pub reward_hidden: Vec<usize>,
    /// Per-iteration cloning settings; `epochs` is replaced by
    /// `epochs_per_iter`.
    pub iter_train: TrainConfig,
    /// Final retraining settings.
    pub final_train: TrainConfig,
    pub reward: RewardTrainConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: BudgetConfig::desk(),
            epochs_per_iter: 1,
            init_mu: None,
            init_sigma: None,
            ablation: Ablation::default(),
            hidden: vec![64, 64],
            reward_hidden: vec![64, 64],
            iter_train: TrainConfig {
                batch_size: 256,
                ..TrainConfig::default()
            },
            final_train: TrainConfig {
                epochs: 2000,
                early_stop_patience: Some(20),
                ..TrainConfig::default()
            },
            reward: RewardTrainConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        self.iter_train.validate()?;
        self.final_train.validate()?;
        if self.epochs_per_iter == 0 {
            return Err(Error::InvalidConfig(
                "epochs_per_iter must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) || self.reward_hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The starting estimate `N(mu, sigma^2)` for an `n`-dimensional state.
    pub fn initial_estimate(&self, n: usize) -> Result<GaussianEstimate> {
        let mu = self.init_mu.clone().unwrap_or_else(|| vec![0.0; n]);
        let sigma = self.init_sigma.clone().unwrap_or_else(|| vec![1.0; n]);
        if mu.len() != n || sigma.len() != n {
            return Err(Error::Shape {
                context: "initial estimate",
                expected: n,
                actual: if mu.len() != n { mu.len() } else { sigma.len() },
            });
        }
        GaussianEstimate::diagonal(mu, sigma)
    }

    /// Start from `N(mu* + 3 sigma*, sigma*^2)`, a fixed distance from the
    /// reference (per-dimension KL of 4.5).
    pub fn with_shifted_init(mut self, reference: &ReferenceStats) -> Self {
        let est = reference
            .offset_gaussian(&vec![3.0; reference.dim()], 1.0)
            .expect("reference dimensions agree");
        self.init_mu = Some(est.mu().to_vec());
        self.init_sigma = Some(est.sigma());
        self
    }
}

/// Anything that answers batches of states with actions.
pub trait ActionSource {
    fn actions(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl ActionSource for Oracle {
    fn actions(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.query(states)
    }
}

impl ActionSource for MlpModel {
    fn actions(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_batch(states)
    }
}

/// Sample `b` states from `estimate`, label them with `source`, and split.
pub fn query_action<S: ActionSource + ?Sized>(
    source: &S,
    estimate: &GaussianEstimate,
    b: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<TransferDataset> {
    let states = estimate.sample(b, seed)?.into_inner();
    let actions = source.actions(states.view())?;
    TransferDataset::new(states, actions, val_fraction)
}

pub fn prune_data(d: &TransferDataset) -> TransferDataset {
    prune_saturated(d)
}

/// Train a freshly initialized evaluator on `b` pairs of `d_v` and return
/// its mean validation Huber loss.
pub fn distribution_evaluate(
    d_v: &TransferDataset,
    evaluator: &mut MlpModel,
    b: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    if d_v.len() < b {
        return Err(Error::DegenerateData(format!(
            "evaluator needs {b} pairs but the transfer set has {}",
            d_v.len()
        )));
    }
    Ok(behavioral_cloning(d_v, evaluator, b, cfg)?.val_loss)
}

/// Reports distance to the victim's reference statistics. Held by the
/// harness, never consulted by the attack's decisions.
#[derive(Debug, Clone, Default)]
pub struct KlProbe(Option<ReferenceStats>);

impl KlProbe {
    pub fn new(reference: Option<ReferenceStats>) -> Self {
        Self(reference)
    }

    pub fn kl(&self, estimate: &GaussianEstimate) -> Option<f64> {
        let reference = self.0.as_ref()?;
        let to_diag = GaussianEstimate::diagonal(estimate.mu().to_vec(), estimate.sigma()).ok()?;
        kl_diag(&reference.gaussian(), &to_diag).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    /// Ledger reading after this iteration's victim query.
    pub consumed_budget: u64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_mean: f64,
    pub b_c: u64,
    pub eval_loss: f64,
    pub kl: Option<f64>,
    pub selected: bool,
    pub bc_pairs: usize,
    /// Pairs left for refinement after pruning.
    pub refine_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub iteration: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eval_loss: f64,
    pub kl: Option<f64>,
}

/// What one Stealthy Imitation run produced, before environment
/// evaluation.
#[derive(Debug, Clone)]
pub struct SiOutcome {
    pub policy: MlpModel,
    /// The attacker policy as it stood after the last iteration.
    pub iteration_policy: MlpModel,
    pub iterations: Vec<IterationRecord>,
    pub selected: Selection,
    pub initial_kl: Option<f64>,
    pub final_fit: FitOutcome,
    pub final_data_len: usize,
    pub warnings: Vec<String>,
}

fn network(
    dims: &[usize],
    hidden: HiddenActivation,
    output: OutputActivation,
    seed: u64,
) -> Result<MlpModel> {
    MlpModel::new(dims, hidden, output, &mut rng_from_seed(seed))
}

fn policy_dims(n: usize, hidden: &[usize], k: usize) -> Vec<usize> {
    let mut dims = vec![n];
    dims.extend(hidden);
    dims.push(k);
    dims
}

/// A fresh tanh-output policy normalized by the sampler that generated its
/// training states.
pub fn fresh_policy(
    n: usize,
    k: usize,
    hidden: &[usize],
    estimate: &GaussianEstimate,
    seed: u64,
) -> Result<MlpModel> {
    let mut model = network(
        &policy_dims(n, hidden, k),
        HiddenActivation::Relu,
        OutputActivation::Tanh,
        seed,
    )?;
    model.set_input_normalization(estimate.mu(), &estimate.sigma())?;
    Ok(model)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dynamic_budget(base: u64, sigma_mean: f64) -> u64 {
    base.max((base as f64 * sigma_mean).round() as u64)
}

/// Run the full attack against `oracle`. `probe` only annotates the records.
pub fn stealthy_imitation(
    oracle: &Oracle,
    probe: &KlProbe,
    cfg: &AttackConfig,
) -> Result<SiOutcome> {
    cfg.validate()?;
    let (n, k) = (oracle.state_dim(), oracle.action_dim());
    let budget = &cfg.budget;
    let b_v = budget.base;
    let iter_limit = budget.total - budget.reserved;
    let vf = cfg.iter_train.val_fraction;

    let initial = cfg.initial_estimate(n)?;
    let (mut mu, mut sigma) = (initial.mu().to_vec(), initial.sigma());
    let mut b_c = dynamic_budget(b_v, mean(&sigma));
    let mut pi_a = fresh_policy(
        n,
        k,
        &cfg.hidden,
        &initial,
        derive_seed(cfg.seed, "attacker/init"),
    )?;
    let mut reward = network(
        &policy_dims(n + k, &cfg.reward_hidden, 1),
        HiddenActivation::Tanh,
        OutputActivation::Sigmoid,
        derive_seed(cfg.seed, "reward/init"),
    )?;

    let mut iterations = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(Selection, TransferDataset)> = None;
    let iter_train = TrainConfig {
        epochs: cfg.epochs_per_iter,
        early_stop_patience: None,
        stop_below: None,
        ..cfg.iter_train.clone()
    };

    for index in 0.. {
        if oracle.ledger().consumed() + b_c > iter_limit {
            warnings.push(format!(
                "iteration {index}: b_c = {b_c} exceeds the iteration budget"
            ));
            break;
        }
        let seed = derive_indexed(cfg.seed, "iteration", index as u64);
        let estimate = GaussianEstimate::diagonal(mu.clone(), sigma.clone())?;
        let sigma_mean = mean(&sigma);

        // I. Transfer set from the victim.
        let d_v = match query_action(
            oracle,
            &estimate,
            b_c as usize,
            vf,
            derive_seed(seed, "query/victim"),
        ) {
            Ok(d) => d,
            Err(Error::BudgetExhausted {
                requested,
                remaining,
            }) => {
                warnings.push(format!(
                    "iteration {index}: budget exhausted ({requested} requested, {remaining} left)"
                ));
                break;
            }
            Err(e) => return Err(e),
        };

        // Evaluate the estimate with a fresh evaluator.
        let eval_n = if cfg.ablation.fixed_evaluator_budget {
            (b_v as usize).min(d_v.len())
        } else {
            d_v.len()
        };
        let mut pi_e = fresh_policy(
            n,
            k,
            &cfg.hidden,
            &estimate,
            derive_seed(seed, "evaluator/init"),
        )?;
        let eval_loss = distribution_evaluate(
            &d_v,
            &mut pi_e,
            eval_n,
            &iter_train.with_seed(derive_seed(seed, "evaluator/train")),
        )?;
        let selected = best.as_ref().is_none_or(|(s, _)| eval_loss > s.eval_loss);
        let kl = probe.kl(&estimate);
        if selected {
            best = Some((
                Selection {
                    iteration: index,
                    mu: mu.clone(),
                    sigma: sigma.clone(),
                    eval_loss,
                    kl,
                },
                d_v.clone(),
            ));
        }

        // II. Clone the victim on the current estimate.
        let dyn_n = ((b_v as f64 * sigma_mean).round() as usize).max(MIN_DEMAND);
        let bc_n = if cfg.ablation.dynamic_bc_budget {
            dyn_n
        } else {
            b_v as usize
        }
        .min(d_v.len());
        pi_a.set_input_normalization(&mu, &sigma)?;
        behavioral_cloning(
            &d_v,
            &mut pi_a,
            bc_n,
            &iter_train.with_seed(derive_seed(seed, "attacker/train")),
        )?;

        // III and IV. Score victim pairs and refine the estimate.
        let demand = dyn_n.min(d_v.len());
        let refine_split = d_v
            .sample(
                demand,
                vf,
                &mut rng_from_seed(derive_seed(seed, "refine/sample")),
            )?
            .val_split();
        let refine_set = if cfg.ablation.prune {
            prune_saturated(&refine_split)
        } else {
            refine_split
        };
        let weights = if refine_set.is_empty() {
            warnings.push(format!(
                "iteration {index}: pruning left no refinement pairs"
            ));
            None
        } else if cfg.ablation.use_reward_model {
            let b_a = budget.attacker_batch.unwrap_or(b_c) as usize;
            let d_a = query_action(
                &pi_a,
                &estimate,
                b_a,
                vf,
                derive_seed(seed, "query/attacker"),
            )?;
            let mut shift = mu.clone();
            let mut scale = sigma.clone();
            shift.extend(std::iter::repeat_n(0.0, k));
            scale.extend(std::iter::repeat_n(1.0, k));
            reward.set_input_normalization(&shift, &scale)?;
            let reward_cfg = RewardTrainConfig {
                prune: cfg.ablation.prune,
                seed: derive_seed(seed, "reward/train"),
                ..cfg.reward.clone()
            };
            match train_reward(&d_a, &d_v, &mut reward, demand, &reward_cfg) {
                Ok(_) => Some(proxy_rewards(
                    &reward,
                    refine_set.states(),
                    refine_set.actions(),
                )?),
                Err(Error::DegenerateData(msg)) => {
                    warnings.push(format!("iteration {index}: {msg}"));
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            let pred = pi_a.forward_batch(refine_set.states())?;
            Some(huber_rows(pred.view(), refine_set.actions())?.to_vec())
        };

        if let Some(weights) = weights {
            match dist_refine(refine_set.states(), &weights) {
                Ok(r) => {
                    if r.is_degenerate() {
                        warnings.push(format!(
                            "iteration {index}: sigma floored in dims {:?}",
                            r.floored
                        ));
                    }
                    mu = r.mu;
                    sigma = r.sigma;
                }
                Err(Error::DegenerateData(msg)) => {
                    warnings.push(format!("iteration {index}: {msg}"))
                }
                Err(e) => return Err(e),
            }
        }

        iterations.push(IterationRecord {
            index,
            consumed_budget: oracle.ledger().consumed(),
            mu: estimate.mu().to_vec(),
            sigma: estimate.sigma(),
            sigma_mean,
            b_c,
            eval_loss,
            kl,
            selected,
            bc_pairs: bc_n,
            refine_pairs: refine_set.len(),
        });

        b_c = dynamic_budget(b_v, mean(&sigma));
        if oracle.ledger().consumed() + b_c >= iter_limit {
            break;
        }
    }

    let (selected, d_tilde) = match best {
        Some(b) => b,
        None => (
            Selection {
                iteration: 0,
                mu: initial.mu().to_vec(),
                sigma: initial.sigma(),
                eval_loss: f64::NAN,
                kl: probe.kl(&initial),
            },
            TransferDataset::empty(n, k),
        ),
    };
    let selected_estimate =
        GaussianEstimate::diagonal(selected.mu.clone(), selected.sigma.clone())?;
    let (policy, final_fit, final_data_len) =
        final_retrain(&d_tilde, oracle, &selected_estimate, cfg)?;
    Ok(SiOutcome {
        policy,
        iteration_policy: pi_a,
        iterations,
        selected,
        initial_kl: probe.kl(&initial),
        final_fit,
        final_data_len,
        warnings,
    })
}

/// Spend the rest of the budget at the selected estimate, merge with the
/// stored transfer set, and clone a fresh policy on the union.
pub fn final_retrain(
    d_tilde: &TransferDataset,
    oracle: &Oracle,
    estimate: &GaussianEstimate,
    cfg: &AttackConfig,
) -> Result<(MlpModel, FitOutcome, usize)> {
    let remaining = oracle.ledger().remaining() as usize;
    let vf = cfg.final_train.val_fraction;
    let fresh = if remaining > 0 {
        query_action(
            oracle,
            estimate,
            remaining,
            vf,
            derive_seed(cfg.seed, "final/query"),
        )?
    } else {
        TransferDataset::empty(oracle.state_dim(), oracle.action_dim())
    };
    let data = d_tilde.union_resplit(
        &fresh,
        vf,
        &mut rng_from_seed(derive_seed(cfg.seed, "final/split")),
    )?;
    let (policy, fit) = train_final_policy(&data, estimate, cfg)?;
    Ok((policy, fit, data.len()))
}

/// Clone a freshly initialized policy on `data` with the final-training
/// regimen. `estimate` is the sampler that produced the states.
pub fn train_final_policy(
    data: &TransferDataset,
    estimate: &GaussianEstimate,
    cfg: &AttackConfig,
) -> Result<(MlpModel, FitOutcome)> {
    let mut policy = fresh_policy(
        data.state_dim(),
        data.action_dim(),
        &cfg.hidden,
        estimate,
        derive_seed(cfg.seed, "final/init"),
    )?;
    let fit = fit_split(
        data,
        &mut policy,
        &cfg.final_train
            .with_seed(derive_seed(cfg.seed, "final/train")),
    )?;
    Ok((policy, fit))
}

/// Policy cloned from a single fixed query distribution.
#[derive(Debug, Clone)]
pub struct SingleShotOutcome {
    pub policy: MlpModel,
    pub estimate: GaussianEstimate,
    pub fit: FitOutcome,
    pub queries: u64,
}

/// Spend the whole remaining budget at `estimate` and clone on the result.
pub fn single_shot_steal(
    oracle: &Oracle,
    estimate: &GaussianEstimate,
    cfg: &AttackConfig,
) -> Result<SingleShotOutcome> {
    cfg.final_train.validate()?;
    let queries = oracle.ledger().remaining();
    let data = query_action(
        oracle,
        estimate,
        queries as usize,
        cfg.final_train.val_fraction,
        derive_seed(cfg.seed, "single/query"),
    )?;
    let (policy, fit) = train_final_policy(&data, estimate, cfg)?;
    Ok(SingleShotOutcome {
        policy,
        estimate: estimate.clone(),
        fit,
        queries,
    })
}

/// Random baseline: every query from `N(0, scale^2 I)`.
pub fn random_baseline(
    oracle: &Oracle,
    scale: f64,
    cfg: &AttackConfig,
) -> Result<SingleShotOutcome> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "baseline scale must be positive, got {scale}"
        )));
    }
    let n = oracle.state_dim();
    single_shot_steal(
        oracle,
        &GaussianEstimate::diagonal(vec![0.0; n], vec![scale; n])?,
        cfg,
    )
}

/// Steal with the defender's own distribution: queries from the reference
/// fit, diagonal or full covariance.
pub fn reference_fit_steal(
    oracle: &Oracle,
    estimate: &GaussianEstimate,
    cfg: &AttackConfig,
) -> Result<SingleShotOutcome> {
    single_shot_steal(oracle, estimate, cfg)
}

/// Full-covariance Gaussian fit to the states the victim visits over
/// `episodes` deployment episodes.
pub fn visited_full_gaussian(
    victim: &VictimBundle,
    episodes: usize,
    seed: u64,
) -> Result<GaussianEstimate> {
    let runs = rollout(
        &victim.env,
        &mut &victim.policy,
        episodes,
        derive_seed(seed, "reffit/visited"),
    )?;
    let n = victim.env.state_dim;
    let flat: Vec<f64> = runs
        .trajectories
        .iter()
        .flat_map(|t| t.states.iter().flatten().copied())
        .collect();
    let states = Array2::from_shape_vec((flat.len() / n, n), flat)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    fit_full_gaussian(states.view())
}

/// Returns of a stolen policy and the victim on the same episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub attacker_return: f64,
    pub victim_return: f64,
    pub return_ratio: f64,
}

pub const EVAL_EPISODES: usize = 8;

pub fn evaluate_policy(
    victim: &VictimBundle,
    policy: &MlpModel,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let eval_seed = derive_seed(seed, "evaluation");
    let attacker = rollout(&victim.env, &mut &*policy, episodes, eval_seed)?;
    let reference = rollout(&victim.env, &mut &victim.policy, episodes, eval_seed)?;
    Ok(Evaluation {
        attacker_return: attacker.mean_return,
        victim_return: reference.mean_return,
        return_ratio: victim.return_ratio_against(attacker.mean_return, reference.mean_return)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub return_ratio: f64,
    pub attacker_return: f64,
    pub victim_return: f64,
    pub kl_selected: Option<f64>,
    pub initial_kl: Option<f64>,
    /// Percent change of KL from the initial to the selected estimate.
    pub delta_kl: Option<f64>,
    pub final_val_loss: f64,
    pub final_data_len: usize,
}

/// Everything a run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub label: String,
    pub baseline_scale: Option<f64>,
    pub defense: bool,
    pub seed: u64,
    pub total_budget: u64,
    pub reserved_budget: u64,
    pub consumed_budget: u64,
    pub iterations: Vec<IterationRecord>,
    pub selected: Option<Selection>,
    pub result: FinalMetrics,
    pub warnings: Vec<String>,
    pub wall_clock_secs: f64,
}

/// Which attack to run.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    Stealthy,
    Random(f64),
    ReferenceFit(GaussianEstimate),
}

impl AttackKind {
    pub fn label(&self) -> String {
        match self {
            Self::Stealthy => "stealthy_imitation".into(),
            Self::Random(s) => format!("random{s}"),
            Self::ReferenceFit(GaussianEstimate::Diagonal { .. }) => "reffit_diagonal".into(),
            Self::ReferenceFit(GaussianEstimate::Full { .. }) => "reffit_full".into(),
        }
    }
}

/// Run an attack against `oracle` and score it in the victim's environment.
/// Returns the report and the stolen policy.
pub fn run_attack(
    victim: &VictimBundle,
    oracle: &Oracle,
    kind: &AttackKind,
    cfg: &AttackConfig,
) -> Result<(AttackReport, MlpModel)> {
    let start = Instant::now();
    let probe = KlProbe::new(Some(victim.reference.clone()));
    let (policy, iterations, selected, initial_kl, kl_selected, fit, data_len, warnings, scale) =
        match kind {
            AttackKind::Stealthy => {
                let out = stealthy_imitation(oracle, &probe, cfg)?;
                let kl_sel = out.selected.kl;
                (
                    out.policy,
                    out.iterations,
                    Some(out.selected),
                    out.initial_kl,
                    kl_sel,
                    out.final_fit,
                    out.final_data_len,
                    out.warnings,
                    None,
                )
            }
            AttackKind::Random(scale) => {
                let out = random_baseline(oracle, *scale, cfg)?;
                let kl = probe.kl(&out.estimate);
                (
                    out.policy,
                    vec![],
                    None,
                    kl,
                    kl,
                    out.fit,
                    out.queries as usize,
                    vec![],
                    Some(*scale),
                )
            }
            AttackKind::ReferenceFit(est) => {
                let out = reference_fit_steal(oracle, est, cfg)?;
                let kl = probe.kl(&out.estimate);
                (
                    out.policy,
                    vec![],
                    None,
                    kl,
                    kl,
                    out.fit,
                    out.queries as usize,
                    vec![],
                    None,
                )
            }
        };
    let eval = evaluate_policy(victim, &policy, EVAL_EPISODES, cfg.seed)?;
    let delta = match (initial_kl, kl_selected) {
        (Some(i), Some(f)) if i > 0.0 => Some(delta_kl(i, f)?),
        _ => None,
    };
    let report = AttackReport {
        label: kind.label(),
        baseline_scale: scale,
        defense: oracle.is_defended(),
        seed: cfg.seed,
        total_budget: oracle.ledger().total(),
        reserved_budget: cfg.budget.reserved,
        consumed_budget: oracle.ledger().consumed(),
        iterations,
        selected,
        result: FinalMetrics {
            return_ratio: eval.return_ratio,
            attacker_return: eval.attacker_return,
            victim_return: eval.victim_return,
            kl_selected,
            initial_kl,
            delta_kl: delta,
            final_val_loss: fit.val_loss,
            final_data_len: data_len,
        },
        warnings,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, policy))
}

/// Full-precision float for CSV cells.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("attack report: {e}")))
    }

    /// `iter,consumed_budget,kl,eval_loss,sigma_mean,b_c,selected_flag`.
    /// The flag marks the iteration finally selected.
    pub fn iterations_csv(&self) -> String {
        let chosen = self.selected.as_ref().map(|s| s.iteration);
        let mut out =
            String::from("iter,consumed_budget,kl,eval_loss,sigma_mean,b_c,selected_flag\n");
        for r in &self.iterations {
            let kl = r.kl.map_or_else(String::new, csv_float);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.index,
                r.consumed_budget,
                kl,
                csv_float(r.eval_loss),
                csv_float(r.sigma_mean),
                r.b_c,
                u8::from(chosen == Some(r.index))
            );
        }
        out
    }

    /// One-line summary: return ratio, selected KL and its change.
    pub fn summary_line(&self) -> String {
        let fmt =
            |v: Option<f64>, suffix: &str| v.map_or("n/a".into(), |x| format!("{x:.4}{suffix}"));
        format!(
            "{} seed={} defense={} rr={:.4} kl_selected={} delta_kl={} consumed={}/{}",
            self.label,
            self.seed,
            if self.defense { "on" } else { "off" },
            self.result.return_ratio,
            fmt(self.result.kl_selected, ""),
            fmt(self.result.delta_kl, "%"),
            self.consumed_budget,
            self.total_budget
        )
    }
}
