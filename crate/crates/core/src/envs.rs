//! Small deterministic control tasks observed through per-dimension affine
//! sensor encodings.
//!
//! Dynamics run in latent coordinates `x`; the policy only ever sees the
//! encoded state `s = scale * x + offset`. Scales differ by orders of
//! magnitude between dimensions, so a standard-normal guess of the state
//! distribution is far from the truth.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::MlpModel;
use crate::rng::{derive_indexed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Single-integrator reaching: `x' = x + dt a`, reward `-|x'|`.
    LinearReach,
    /// Independent damped springs, one `(x, v)` block per action dimension.
    DampedSpring,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LinearReach => "linear_reach",
            Self::DampedSpring => "damped_spring",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_reach" => Some(Self::LinearReach),
            "damped_spring" => Some(Self::DampedSpring),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub horizon: usize,
    pub encode_scale: Vec<f64>,
    pub encode_offset: Vec<f64>,
    pub init_low: Vec<f64>,
    pub init_high: Vec<f64>,
    /// Spring constant (damped_spring).
    pub spring_k: f64,
    /// Damping coefficient (damped_spring).
    pub damping: f64,
    /// Expert position gain (damped_spring).
    pub gain_pos: f64,
    /// Expert velocity gain (damped_spring).
    pub gain_vel: f64,
    /// Return floor for the shifted return ratio; `None` until calibrated.
    pub r_min: Option<f64>,
}

impl EnvSpec {
    pub fn linear_reach() -> Self {
        Self {
            kind: EnvKind::LinearReach,
            state_dim: 4,
            action_dim: 4,
            dt: 0.1,
            horizon: 100,
            encode_scale: vec![0.01, 0.5, 2.0, 5.0],
            encode_offset: vec![0.3, -2.0, 15.0, -400.0],
            init_low: vec![-8.0; 4],
            init_high: vec![2.0; 4],
            spring_k: 0.0,
            damping: 0.0,
            gain_pos: 0.0,
            gain_vel: 0.0,
            r_min: None,
        }
    }

    pub fn damped_spring() -> Self {
        Self {
            kind: EnvKind::DampedSpring,
            state_dim: 8,
            action_dim: 4,
            dt: 0.1,
            horizon: 200,
            encode_scale: vec![0.01, 0.2, 0.5, 10.0, 200.0, 3.0, 0.05, 50.0],
            encode_offset: vec![0.2, -1.0, 3.0, -20.0, 150.0, 0.5, -0.1, 80.0],
            init_low: vec![-1.0; 8],
            init_high: vec![1.0; 8],
            spring_k: 1.0,
            damping: 0.1,
            gain_pos: 2.0,
            gain_vel: 3.0,
            r_min: None,
        }
    }

    pub fn by_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::LinearReach => Self::linear_reach(),
            EnvKind::DampedSpring => Self::damped_spring(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim;
        let bad = |m: &str| Err(Error::InvalidConfig(format!("{}: {m}", self.kind.name())));
        if n == 0 || self.action_dim == 0 {
            return bad("dimensions must be positive");
        }
        match self.kind {
            EnvKind::LinearReach if n != self.action_dim => {
                return bad("linear_reach needs state_dim == action_dim")
            }
            EnvKind::DampedSpring if n != 2 * self.action_dim => {
                return bad("damped_spring needs state_dim == 2 * action_dim")
            }
            _ => {}
        }
        for (name, v) in [
            ("encode_scale", &self.encode_scale),
            ("encode_offset", &self.encode_offset),
            ("init_low", &self.init_low),
            ("init_high", &self.init_high),
        ] {
            if v.len() != n {
                return bad(&format!("{name} has length {} (expected {n})", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(&format!("{name} must be finite"));
            }
        }
        if self.encode_scale.iter().any(|s| *s == 0.0) {
            return bad("encode_scale components must be non-zero");
        }
        if self
            .init_low
            .iter()
            .zip(&self.init_high)
            .any(|(l, h)| l >= h)
        {
            return bad("init_low must be below init_high");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.horizon == 0 {
            return bad("dt and horizon must be positive");
        }
        if self.horizon > 1_000_000 {
            return bad("horizon too long");
        }
        Ok(())
    }

    pub fn encode(&self, latent: &[f64]) -> Vec<f64> {
        latent
            .iter()
            .zip(self.encode_scale.iter().zip(&self.encode_offset))
            .map(|(x, (s, o))| s * x + o)
            .collect()
    }

    pub fn decode(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.encode_scale.iter().zip(&self.encode_offset))
            .map(|(s, (sc, o))| (s - o) / sc)
            .collect()
    }

    /// Latent-coordinate transition and reward. `action` must already lie in
    /// `[-1, 1]`.
    pub fn latent_step(&self, x: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        match self.kind {
            EnvKind::LinearReach => {
                let next: Vec<f64> = x.iter().zip(action).map(|(x, a)| x + self.dt * a).collect();
                let reward = -next.iter().map(|v| v * v).sum::<f64>().sqrt();
                (next, reward)
            }
            EnvKind::DampedSpring => {
                let mut next = x.to_vec();
                let mut reward = 0.0;
                for (i, a) in action.iter().enumerate() {
                    let (p, v) = (x[2 * i], x[2 * i + 1]);
                    let v2 = v + self.dt * (a - self.spring_k * p - self.damping * v);
                    let p2 = p + self.dt * v2;
                    next[2 * i] = p2;
                    next[2 * i + 1] = v2;
                    reward -= p2 * p2 + 0.1 * a * a;
                }
                (next, reward)
            }
        }
    }

    /// Analytic expert in latent coordinates.
    pub fn latent_expert(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::LinearReach => x.iter().map(|x| (-x / self.dt).clamp(-1.0, 1.0)).collect(),
            EnvKind::DampedSpring => (0..self.action_dim)
                .map(|i| {
                    (-self.gain_pos * x[2 * i] - self.gain_vel * x[2 * i + 1]).clamp(-1.0, 1.0)
                })
                .collect(),
        }
    }

    pub fn sample_initial_latent(&self, rng: &mut Rng) -> Vec<f64> {
        self.init_low
            .iter()
            .zip(&self.init_high)
            .map(|(l, h)| rng.random_range(*l..*h))
            .collect()
    }
}

fn clip_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// One environment transition in encoded coordinates.
pub fn env_step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_len("env state", spec.state_dim, state.len())?;
    check_len("env action", spec.action_dim, action.len())?;
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite state or action".into()));
    }
    let (next, reward) = spec.latent_step(&spec.decode(state), &clip_action(action));
    let encoded = spec.encode(&next);
    if !reward.is_finite() || encoded.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "environment produced a non-finite state".into(),
        ));
    }
    Ok((encoded, reward))
}

/// Expert action for an encoded state.
pub fn expert_action(spec: &EnvSpec, state: &[f64]) -> Vec<f64> {
    spec.latent_expert(&spec.decode(state))
}

/// Anything that maps an encoded state to an action.
pub trait Policy {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>>;
}

impl Policy for MlpModel {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.forward(state)
    }
}

impl Policy for &MlpModel {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        self.forward(state)
    }
}

pub struct ExpertPolicy<'a>(pub &'a EnvSpec);

impl Policy for ExpertPolicy<'_> {
    fn act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(expert_action(self.0, state))
    }
}

pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn act(&mut self, _: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

pub struct UniformRandomPolicy {
    pub action_dim: usize,
    pub rng: Rng,
}

impl Policy for UniformRandomPolicy {
    fn act(&mut self, _: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.action_dim)
            .map(|_| self.rng.random_range(-1.0..=1.0))
            .collect())
    }
}

/// One episode. `states` has one more entry than `actions` (the terminal
/// state); `actions` are the policy's outputs clipped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSummary {
    pub mean_return: f64,
    pub std_return: f64,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutSummary {
    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.ret).collect()
    }
}

/// Run `episodes` episodes from the initial-state box. Episode `i` draws
/// its start from its own stream derived from `seed`, so results do not
/// depend on the policy's own randomness.
pub fn rollout<P: Policy + ?Sized>(
    spec: &EnvSpec,
    policy: &mut P,
    episodes: usize,
    seed: u64,
) -> Result<RolloutSummary> {
    rollout_noisy(spec, policy, episodes, seed, 0.0)
}

/// [`rollout`] with Gaussian exploration noise of standard deviation
/// `action_noise` added to the executed action. The recorded action is the
/// policy's clipped output without noise.
pub fn rollout_noisy<P: Policy + ?Sized>(
    spec: &EnvSpec,
    policy: &mut P,
    episodes: usize,
    seed: u64,
    action_noise: f64,
) -> Result<RolloutSummary> {
    spec.validate()?;
    if episodes == 0 {
        return Err(Error::EmptyInput("episode count"));
    }
    let mut trajectories = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = rng_from_seed(derive_indexed(seed, "episode", ep as u64));
        let mut state = spec.encode(&spec.sample_initial_latent(&mut rng));
        let mut traj = Trajectory {
            states: Vec::with_capacity(spec.horizon + 1),
            actions: Vec::with_capacity(spec.horizon),
            rewards: Vec::with_capacity(spec.horizon),
            ret: 0.0,
        };
        for _ in 0..spec.horizon {
            let raw = policy.act(&state)?;
            check_len("policy action", spec.action_dim, raw.len())?;
            let action = clip_action(&raw);
            let executed: Vec<f64> = if action_noise > 0.0 {
                action
                    .iter()
                    .map(|a| {
                        let eps: f64 =
                            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                        (a + action_noise * eps).clamp(-1.0, 1.0)
                    })
                    .collect()
            } else {
                action.clone()
            };
            let (next, reward) = env_step(spec, &state, &executed)?;
            traj.states.push(std::mem::replace(&mut state, next));
            traj.actions.push(action);
            traj.rewards.push(reward);
            traj.ret += reward;
        }
        traj.states.push(state);
        trajectories.push(traj);
    }
    let returns: Vec<f64> = trajectories.iter().map(|t| t.ret).collect();
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok(RolloutSummary {
        mean_return: mean,
        std_return: var.sqrt(),
        trajectories,
    })
}

/// Plain `R_a / R_v`, or `(R_a - R_min) / (R_v - R_min)` when a floor is
/// given.
pub fn return_ratio(attacker_return: f64, victim_return: f64, r_min: Option<f64>) -> Result<f64> {
    let (num, den) = match r_min {
        Some(floor) => (attacker_return - floor, victim_return - floor),
        None => (attacker_return, victim_return),
    };
    if den == 0.0 {
        return Err(Error::DegenerateData(
            "return ratio denominator is zero".into(),
        ));
    }
    Ok(num / den)
}

/// Return floor: mean return of the zero-action policy over `seeds`
/// single-episode rollouts. This is the return of an agent that never makes
/// progress on the task.
pub fn calibrate_r_min(spec: &EnvSpec, seeds: usize) -> Result<f64> {
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut zero = ConstantPolicy(vec![0.0; spec.action_dim]);
        total += rollout(
            spec,
            &mut zero,
            1,
            derive_indexed(0x5eed, "r_min", seed as u64),
        )?
        .mean_return;
    }
    Ok(total / seeds as f64)
}

/// CSV export: `episode,t,s0..,a0..,reward`, one row per transition.
pub fn trajectories_csv(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    if let Some(first) = trajectories.first() {
        let n = first.states[0].len();
        let k = first.actions.first().map_or(0, Vec::len);
        out.push_str("episode,t");
        (0..n).for_each(|i| {
            let _ = write!(out, ",s{i}");
        });
        (0..k).for_each(|i| {
            let _ = write!(out, ",a{i}");
        });
        out.push_str(",reward\n");
    }
    for (ep, traj) in trajectories.iter().enumerate() {
        for t in 0..traj.actions.len() {
            let _ = write!(out, "{ep},{t}");
            for v in traj.states[t].iter().chain(&traj.actions[t]) {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = writeln!(out, ",{:.16e}", traj.rewards[t]);
        }
    }
    out
}
