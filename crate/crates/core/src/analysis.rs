//! Rank correlation, the loss-versus-KL correlation experiment, robustness
//! sweeps and KL change metrics.
//!
//! The experiments here take an analytical viewpoint: they query the victim
//! without charging an attack budget.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::attack::{
    csv_float, evaluate_policy, fresh_policy, query_action, single_shot_steal, ActionSource,
    AttackConfig, EVAL_EPISODES,
};
use crate::dist::{kl_diag, ReferenceStats};
use crate::error::{check_len, Error, Result};
use crate::nn::{behavioral_cloning, TrainConfig};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::victim::{Oracle, VictimBundle};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation and its two-sided p-value from the
/// t-approximation `t = rho sqrt((m-2)/(1-rho^2))` with `m-2` degrees of
/// freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    check_len("spearman inputs", xs.len(), ys.len())?;
    if xs.len() < 4 {
        return Err(Error::DegenerateData(format!(
            "spearman needs at least 4 pairs, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("spearman inputs must be finite".into()));
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys)).ok_or_else(|| {
        Error::DegenerateData("spearman of a constant sequence is undefined".into())
    })?;
    let df = (xs.len() - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok((rho, p))
}

/// Two-sided permutation p-value for Spearman's rho: the share of `rounds`
/// shuffles of `ys` whose |rho| reaches the observed one (with the usual +1
/// correction).
pub fn spearman_permutation(xs: &[f64], ys: &[f64], rounds: usize, seed: u64) -> Result<f64> {
    let (rho, _) = spearman(xs, ys)?;
    let rx = average_ranks(xs);
    let mut ry = average_ranks(ys);
    let mut rng = rng_from_seed(seed);
    let mut hits = 0usize;
    for _ in 0..rounds {
        ry.shuffle(&mut rng);
        let r = pearson(&rx, &ry).unwrap_or(0.0);
        if r.abs() >= rho.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (rounds + 1) as f64)
}

/// Percent change `100 (final - initial) / initial`.
pub fn delta_kl(initial_kl: f64, final_kl: f64) -> Result<f64> {
    if !(initial_kl > 0.0) || !initial_kl.is_finite() {
        return Err(Error::DegenerateData(format!(
            "initial KL must be positive, got {initial_kl}"
        )));
    }
    Ok(100.0 * (final_kl - initial_kl) / initial_kl)
}

/// Unmetered access for analysis harnesses.
pub struct Unmetered<'a>(pub &'a Oracle);

impl ActionSource for Unmetered<'_> {
    fn actions(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.0.query_unmetered(states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub z: Vec<f64>,
    pub kl: f64,
    pub eval_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationConfig {
    pub count: usize,
    pub points_per_dist: usize,
    pub hidden: Vec<usize>,
    /// Cloning settings for each fresh policy (one epoch by default).
    pub train: TrainConfig,
    /// Largest offset magnitude, in reference standard deviations.
    pub max_offset: f64,
}

impl CorrelationConfig {
    pub fn desk() -> Self {
        Self {
            count: 200,
            points_per_dist: 10_000,
            hidden: vec![64, 64],
            train: TrainConfig {
                batch_size: 256,
                ..TrainConfig::default()
            },
            max_offset: 4.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            count: 600,
            points_per_dist: 100_000,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub records: Vec<CorrelationRecord>,
    pub rho: f64,
    pub p_value: f64,
}

/// Draw offset vectors `z`, query the source at `N(mu* + z sigma*, sigma*^2)`,
/// clone a fresh policy, and correlate its validation loss with the KL to
/// the reference. Record 0 is the exact reference (`z = 0`); the rest have
/// per-dimension magnitudes uniform in `[0, max_offset]` with random signs.
pub fn correlation_experiment<S: ActionSource + ?Sized>(
    source: &S,
    reference: &ReferenceStats,
    cfg: &CorrelationConfig,
    seed: u64,
) -> Result<CorrelationResult> {
    if cfg.count < 4 {
        return Err(Error::InvalidConfig(
            "correlation needs at least 4 distributions".into(),
        ));
    }
    let n = reference.dim();
    let target = reference.gaussian();
    let mut records = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = rng_from_seed(derive_indexed(seed, "correlation/z", i as u64));
        let z: Vec<f64> = if i == 0 {
            vec![0.0; n]
        } else {
            (0..n)
                .map(|_| {
                    let m = rng.random_range(0.0..=cfg.max_offset);
                    if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect()
        };
        let estimate = reference.offset_gaussian(&z, 1.0)?;
        let point_seed = derive_indexed(seed, "correlation/point", i as u64);
        let data = query_action(
            source,
            &estimate,
            cfg.points_per_dist,
            cfg.train.val_fraction,
            derive_seed(point_seed, "query"),
        )?;
        let k = data.action_dim();
        let mut policy = fresh_policy(
            n,
            k,
            &cfg.hidden,
            &estimate,
            derive_seed(point_seed, "init"),
        )?;
        let fit = behavioral_cloning(
            &data,
            &mut policy,
            cfg.points_per_dist,
            &cfg.train.with_seed(derive_seed(point_seed, "train")),
        )?;
        records.push(CorrelationRecord {
            kl: kl_diag(&target, &estimate)?,
            z,
            eval_loss: fit.val_loss,
        });
    }
    let losses: Vec<f64> = records.iter().map(|r| r.eval_loss).collect();
    let kls: Vec<f64> = records.iter().map(|r| r.kl).collect();
    let (rho, p_value) = spearman(&losses, &kls)?;
    Ok(CorrelationResult {
        records,
        rho,
        p_value,
    })
}

pub fn correlation_csv(records: &[CorrelationRecord]) -> String {
    let n = records.first().map_or(0, |r| r.z.len());
    let mut out = String::new();
    for i in 0..n {
        let _ = write!(out, "z{i},");
    }
    out.push_str("kl,eval_loss\n");
    for r in records {
        for z in &r.z {
            let _ = write!(out, "{},", csv_float(*z));
        }
        let _ = writeln!(out, "{},{}", csv_float(r.kl), csv_float(r.eval_loss));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// `N(mu*, (lambda sigma*)^2)`.
    SigmaScale,
    /// `N(mu* + z sigma*, sigma*^2)` with random per-dimension signs.
    MuShift,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SigmaScale => "sigma_scale",
            Self::MuShift => "mu_shift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kind: SweepKind,
    pub value: f64,
    pub rr: f64,
    pub seed: u64,
}

/// Steal with a fixed query distribution at each sweep point and record the
/// return ratio. Every point uses `queries` fresh victim answers and the
/// final-training regimen of `cfg`; `cfg.seed` is shared by all points so
/// they differ only in the distribution.
pub fn robustness_sweep(
    victim: &VictimBundle,
    lambdas: &[f64],
    zs: &[f64],
    queries: u64,
    cfg: &AttackConfig,
) -> Result<Vec<SweepPoint>> {
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma scale must be positive, got {bad}"
        )));
    }
    let n = victim.reference.dim();
    let mut points = Vec::new();
    let mut run = |kind, value, estimate| -> Result<()> {
        let oracle = Oracle::new(victim.policy.clone(), queries);
        let out = single_shot_steal(&oracle, &estimate, cfg)?;
        let eval = evaluate_policy(victim, &out.policy, EVAL_EPISODES, cfg.seed)?;
        points.push(SweepPoint {
            kind,
            value,
            rr: eval.return_ratio,
            seed: cfg.seed,
        });
        Ok(())
    };
    for &lambda in lambdas {
        run(
            SweepKind::SigmaScale,
            lambda,
            victim.reference.offset_gaussian(&vec![0.0; n], lambda)?,
        )?;
    }
    for (i, &z) in zs.iter().enumerate() {
        let mut rng = rng_from_seed(derive_indexed(cfg.seed, "sweep/signs", i as u64));
        let offsets: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { z } else { -z })
            .collect();
        run(
            SweepKind::MuShift,
            z,
            victim.reference.offset_gaussian(&offsets, 1.0)?,
        )?;
    }
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("kind,value,rr,seed\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.kind.name(),
            csv_float(p.value),
            csv_float(p.rr),
            p.seed
        );
    }
    out
}
