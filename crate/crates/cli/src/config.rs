//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; a document only lists the keys it overrides.
//! [`ExperimentConfig::to_text`] writes every key, so the output of one run
//! can be fed back as the input of the next.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use silab_core::analysis::CorrelationConfig;
use silab_core::attack::AttackConfig;
use silab_core::dist::ReferenceStats;
use silab_core::envs::{EnvKind, EnvSpec};
use silab_core::nn::TrainConfig;
use silab_core::rng::derive_seed;
use silab_core::victim::VictimConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// One-based line of the offending entry, when it came from a document.
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Starting distribution of the Stealthy Imitation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitProtocol {
    /// `N(0, I)`.
    Standard,
    /// `N(mu* + 3 sigma*, sigma*^2)`.
    Shifted3Sigma,
}

impl InitProtocol {
    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Shifted3Sigma => "shifted3sigma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Self::Standard),
            "shifted3sigma" => Some(Self::Shifted3Sigma),
            _ => None,
        }
    }
}

/// Which attack `attack` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Stealthy Imitation.
    None,
    Random1,
    Random10,
    Random100,
    /// Queries from the victim's own state distribution.
    Reffit,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Random1 => "random1",
            Self::Random10 => "random10",
            Self::Random100 => "random100",
            Self::Reffit => "reffit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "random1" => Some(Self::Random1),
            "random10" => Some(Self::Random10),
            "random100" => Some(Self::Random100),
            "reffit" => Some(Self::Reffit),
            _ => None,
        }
    }

    /// Query scale of a random baseline.
    pub fn scale(self) -> Option<f64> {
        match self {
            Self::Random1 => Some(1.0),
            Self::Random10 => Some(10.0),
            Self::Random100 => Some(100.0),
            _ => None,
        }
    }
}

/// Covariance family of the reference-fit attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReffitFamily {
    Diagonal,
    Full,
}

impl ReffitFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Diagonal => "diagonal",
            Self::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "diagonal" => Some(Self::Diagonal),
            "full" => Some(Self::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Correlation,
    Sweep,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Correlation => "correlation",
            Self::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "correlation" => Some(Self::Correlation),
            "sweep" => Some(Self::Sweep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub experiment: Experiment,
    pub correlation: CorrelationConfig,
    pub lambdas: Vec<f64>,
    pub zs: Vec<f64>,
    pub queries_per_point: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            experiment: Experiment::Correlation,
            correlation: CorrelationConfig::desk(),
            lambdas: vec![0.5, 1.0, 2.0],
            zs: vec![0.0, 2.0, 3.0],
            queries_per_point: 100_000,
        }
    }
}

/// A fully resolved experiment. `attack.seed` and the train seeds are
/// ignored; every stream derives from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvSpec,
    pub victim: VictimConfig,
    pub attack: AttackConfig,
    pub init: InitProtocol,
    pub baseline: Baseline,
    pub reffit_family: ReffitFamily,
    pub defense_enabled: bool,
    pub analysis: AnalysisSettings,
}

impl ExperimentConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            env: EnvSpec::by_kind(kind),
            victim: VictimConfig::default(),
            attack: AttackConfig::default(),
            init: InitProtocol::Shifted3Sigma,
            baseline: Baseline::None,
            reffit_family: ReffitFamily::Diagonal,
            defense_enabled: false,
            analysis: AnalysisSettings::default(),
        }
    }

    pub fn victim_seed(&self) -> u64 {
        derive_seed(self.seed, "victim")
    }

    pub fn attack_seed(&self) -> u64 {
        derive_seed(self.seed, "attack")
    }

    pub fn defense_seed(&self) -> u64 {
        derive_seed(self.seed, "defense")
    }

    pub fn analysis_seed(&self) -> u64 {
        derive_seed(self.seed, "analysis")
    }

    /// Attack settings with the derived seed and the configured starting
    /// distribution.
    pub fn attack_config(&self, reference: &ReferenceStats) -> AttackConfig {
        let cfg = AttackConfig {
            seed: self.attack_seed(),
            ..self.attack.clone()
        };
        match self.init {
            InitProtocol::Standard => AttackConfig {
                init_mu: None,
                init_sigma: None,
                ..cfg
            },
            InitProtocol::Shifted3Sigma => cfg.with_shifted_init(reference),
        }
    }

    /// Parse a document on top of the defaults for its `env.kind`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::at(line, format!("expected `key = value`, got `{content}`")));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::at(line, "empty key"));
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(ConfigError::at(
                    line,
                    format!("duplicate key `{key}` (first set on line {first})"),
                ));
            }
            entries.insert(key.to_string(), (line, value.trim().to_string()));
        }

        let kind = match entries.get("env.kind") {
            Some((line, v)) => EnvKind::parse(v)
                .ok_or_else(|| ConfigError::at(*line, format!("unknown env.kind `{v}`")))?,
            None => EnvKind::LinearReach,
        };
        let mut cfg = Self::for_env(kind);
        let known: Vec<String> = cfg.entries().into_iter().map(|(k, _)| k).collect();
        let mut ordered: Vec<(&String, &(usize, String))> = entries.iter().collect();
        ordered.sort_by_key(|(_, (line, _))| *line);
        for (key, (line, value)) in ordered {
            if !known.iter().any(|k| k == key) {
                return Err(ConfigError::at(*line, format!("unknown key `{key}`")));
            }
            cfg.set(key, value)
                .map_err(|m| ConfigError::at(*line, format!("{key}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: silab_core::Error| ConfigError::new(e.to_string());
        self.env.validate().map_err(wrap)?;
        self.victim.train.validate().map_err(wrap)?;
        self.attack.validate().map_err(wrap)?;
        self.analysis.correlation.train.validate().map_err(wrap)?;
        if self.victim.hidden.is_empty() || self.victim.hidden.contains(&0) {
            return Err(ConfigError::new("victim.hidden needs positive widths"));
        }
        if self.analysis.correlation.count < 4 {
            return Err(ConfigError::new("analysis.count must be at least 4"));
        }
        if self.analysis.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(ConfigError::new("analysis.lambdas must be positive"));
        }
        if self.analysis.queries_per_point == 0 {
            return Err(ConfigError::new("analysis.queries_per_point must be positive"));
        }
        Ok(())
    }

    /// Every key with its resolved value, in document order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());

        let e = &self.env;
        put("env.kind", e.kind.name().into());
        put("env.state_dim", e.state_dim.to_string());
        put("env.action_dim", e.action_dim.to_string());
        put("env.dt", fmt_f64(e.dt));
        put("env.horizon", e.horizon.to_string());
        put("env.encode_scale", fmt_list(&e.encode_scale));
        put("env.encode_offset", fmt_list(&e.encode_offset));
        put("env.init_low", fmt_list(&e.init_low));
        put("env.init_high", fmt_list(&e.init_high));
        put("env.spring_k", fmt_f64(e.spring_k));
        put("env.damping", fmt_f64(e.damping));
        put("env.gain_pos", fmt_f64(e.gain_pos));
        put("env.gain_vel", fmt_f64(e.gain_vel));
        put("env.r_min", fmt_opt(e.r_min.map(fmt_f64)));

        let v = &self.victim;
        put("victim.hidden", fmt_list(&v.hidden));
        put("victim.episodes", v.episodes.to_string());
        put("victim.explore_noise", fmt_f64(v.explore_noise));
        put("victim.target_loss", fmt_f64(v.target_loss));
        put("victim.competence", fmt_f64(v.competence));
        put("victim.eval_episodes", v.eval_episodes.to_string());
        train_entries(&mut put, "victim.train", &v.train, true);

        let a = &self.attack;
        put("attack.init", self.init.name().into());
        put("attack.baseline", self.baseline.name().into());
        put("attack.reffit_family", self.reffit_family.name().into());
        put("attack.budget.total", a.budget.total.to_string());
        put("attack.budget.reserved", a.budget.reserved.to_string());
        put("attack.budget.base", a.budget.base.to_string());
        put(
            "attack.budget.attacker_batch",
            fmt_opt(a.budget.attacker_batch.map(|b| b.to_string())),
        );
        put("attack.epochs_per_iter", a.epochs_per_iter.to_string());
        put("attack.hidden", fmt_list(&a.hidden));
        put("attack.reward_hidden", fmt_list(&a.reward_hidden));
        put(
            "attack.ablation.fixed_evaluator_budget",
            a.ablation.fixed_evaluator_budget.to_string(),
        );
        put(
            "attack.ablation.use_reward_model",
            a.ablation.use_reward_model.to_string(),
        );
        put("attack.ablation.prune", a.ablation.prune.to_string());
        put(
            "attack.ablation.dynamic_bc_budget",
            a.ablation.dynamic_bc_budget.to_string(),
        );
        train_entries(&mut put, "attack.iter", &a.iter_train, false);
        train_entries(&mut put, "attack.final", &a.final_train, true);
        put("attack.reward.steps", a.reward.steps.to_string());
        put("attack.reward.learning_rate", fmt_f64(a.reward.learning_rate));
        put("attack.reward.batch_size", a.reward.batch_size.to_string());
        put("attack.reward.val_fraction", fmt_f64(a.reward.val_fraction));
        put("attack.reward.prune", a.reward.prune.to_string());

        put("defense.enabled", self.defense_enabled.to_string());

        let an = &self.analysis;
        put("analysis.experiment", an.experiment.name().into());
        put("analysis.count", an.correlation.count.to_string());
        put(
            "analysis.points_per_dist",
            an.correlation.points_per_dist.to_string(),
        );
        put("analysis.max_offset", fmt_f64(an.correlation.max_offset));
        put("analysis.hidden", fmt_list(&an.correlation.hidden));
        train_entries(&mut put, "analysis.train", &an.correlation.train, true);
        put("analysis.lambdas", fmt_list(&an.lambdas));
        put("analysis.zs", fmt_list(&an.zs));
        put("analysis.queries_per_point", an.queries_per_point.to_string());
        out
    }

    /// The resolved document: every key, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if let Some(rest) = key.strip_prefix("victim.train.") {
            return set_train(&mut self.victim.train, rest, value);
        }
        if let Some(rest) = key.strip_prefix("attack.iter.") {
            return set_train(&mut self.attack.iter_train, rest, value);
        }
        if let Some(rest) = key.strip_prefix("attack.final.") {
            return set_train(&mut self.attack.final_train, rest, value);
        }
        if let Some(rest) = key.strip_prefix("analysis.train.") {
            return set_train(&mut self.analysis.correlation.train, rest, value);
        }
        let e = &mut self.env;
        let v = &mut self.victim;
        let a = &mut self.attack;
        let an = &mut self.analysis;
        match key {
            "seed" => self.seed = num(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "env.kind" => {}
            "env.state_dim" => e.state_dim = num(value)?,
            "env.action_dim" => e.action_dim = num(value)?,
            "env.dt" => e.dt = num(value)?,
            "env.horizon" => e.horizon = num(value)?,
            "env.encode_scale" => e.encode_scale = list(value)?,
            "env.encode_offset" => e.encode_offset = list(value)?,
            "env.init_low" => e.init_low = list(value)?,
            "env.init_high" => e.init_high = list(value)?,
            "env.spring_k" => e.spring_k = num(value)?,
            "env.damping" => e.damping = num(value)?,
            "env.gain_pos" => e.gain_pos = num(value)?,
            "env.gain_vel" => e.gain_vel = num(value)?,
            "env.r_min" => e.r_min = opt(value)?,
            "victim.hidden" => v.hidden = list(value)?,
            "victim.episodes" => v.episodes = num(value)?,
            "victim.explore_noise" => v.explore_noise = num(value)?,
            "victim.target_loss" => v.target_loss = num(value)?,
            "victim.competence" => v.competence = num(value)?,
            "victim.eval_episodes" => v.eval_episodes = num(value)?,
            "attack.init" => {
                self.init = InitProtocol::parse(value)
                    .ok_or("expected standard or shifted3sigma")?
            }
            "attack.baseline" => {
                self.baseline = Baseline::parse(value)
                    .ok_or("expected none, random1, random10, random100 or reffit")?
            }
            "attack.reffit_family" => {
                self.reffit_family =
                    ReffitFamily::parse(value).ok_or("expected diagonal or full")?
            }
            "attack.budget.total" => a.budget.total = num(value)?,
            "attack.budget.reserved" => a.budget.reserved = num(value)?,
            "attack.budget.base" => a.budget.base = num(value)?,
            "attack.budget.attacker_batch" => a.budget.attacker_batch = opt(value)?,
            "attack.epochs_per_iter" => a.epochs_per_iter = num(value)?,
            "attack.hidden" => a.hidden = list(value)?,
            "attack.reward_hidden" => a.reward_hidden = list(value)?,
            "attack.ablation.fixed_evaluator_budget" => {
                a.ablation.fixed_evaluator_budget = num(value)?
            }
            "attack.ablation.use_reward_model" => a.ablation.use_reward_model = num(value)?,
            "attack.ablation.prune" => a.ablation.prune = num(value)?,
            "attack.ablation.dynamic_bc_budget" => a.ablation.dynamic_bc_budget = num(value)?,
            "attack.reward.steps" => a.reward.steps = num(value)?,
            "attack.reward.learning_rate" => a.reward.learning_rate = num(value)?,
            "attack.reward.batch_size" => a.reward.batch_size = num(value)?,
            "attack.reward.val_fraction" => a.reward.val_fraction = num(value)?,
            "attack.reward.prune" => a.reward.prune = num(value)?,
            "defense.enabled" => self.defense_enabled = num(value)?,
            "analysis.experiment" => {
                an.experiment = Experiment::parse(value).ok_or("expected correlation or sweep")?
            }
            "analysis.count" => an.correlation.count = num(value)?,
            "analysis.points_per_dist" => an.correlation.points_per_dist = num(value)?,
            "analysis.max_offset" => an.correlation.max_offset = num(value)?,
            "analysis.hidden" => an.correlation.hidden = list(value)?,
            "analysis.lambdas" => an.lambdas = list(value)?,
            "analysis.zs" => an.zs = list(value)?,
            "analysis.queries_per_point" => an.queries_per_point = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_env(EnvKind::LinearReach)
    }
}

fn train_entries(
    put: &mut impl FnMut(&str, String),
    prefix: &str,
    t: &TrainConfig,
    with_epochs: bool,
) {
    let key = |name: &str| format!("{prefix}.{name}");
    put(&key("learning_rate"), fmt_f64(t.learning_rate));
    put(&key("batch_size"), t.batch_size.to_string());
    if with_epochs {
        put(&key("epochs"), t.epochs.to_string());
    }
    put(&key("adam_beta1"), fmt_f64(t.adam_beta1));
    put(&key("adam_beta2"), fmt_f64(t.adam_beta2));
    put(&key("adam_epsilon"), fmt_f64(t.adam_epsilon));
    put(
        &key("early_stop_patience"),
        fmt_opt(t.early_stop_patience.map(|p| p.to_string())),
    );
    put(&key("stop_below"), fmt_opt(t.stop_below.map(fmt_f64)));
    put(&key("val_fraction"), fmt_f64(t.val_fraction));
}

fn set_train(t: &mut TrainConfig, name: &str, value: &str) -> Result<(), String> {
    match name {
        "learning_rate" => t.learning_rate = num(value)?,
        "batch_size" => t.batch_size = num(value)?,
        "epochs" => t.epochs = num(value)?,
        "adam_beta1" => t.adam_beta1 = num(value)?,
        "adam_beta2" => t.adam_beta2 = num(value)?,
        "adam_epsilon" => t.adam_epsilon = num(value)?,
        "early_stop_patience" => t.early_stop_patience = opt(value)?,
        "stop_below" => t.stop_below = opt(value)?,
        "val_fraction" => t.val_fraction = num(value)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Shortest text that parses back to the same float.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_list<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_opt(x: Option<String>) -> String {
    x.unwrap_or_else(|| "none".into())
}

fn num<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse `{value}`"))
}

fn opt<T: FromStr>(value: &str) -> Result<Option<T>, String> {
    if value == "none" {
        Ok(None)
    } else {
        num(value).map(Some)
    }
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|x| num(x.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for kind in [EnvKind::LinearReach, EnvKind::DampedSpring] {
            let cfg = ExperimentConfig::for_env(kind);
            let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), cfg.to_text());
        }
    }

    #[test]
    fn env_kind_selects_defaults() {
        let cfg = ExperimentConfig::parse("env.kind = damped_spring\n").unwrap();
        assert_eq!(cfg.env, EnvSpec::damped_spring());
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# desk run\nseed = 7  # trailing\n\nattack.budget.total = 1000000\nanalysis.zs =\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.attack.budget.total, 1_000_000);
        assert!(cfg.analysis.zs.is_empty());
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ExperimentConfig::parse("seed = 1\nattack.bogus = 3\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("attack.bogus"));
    }

    #[test]
    fn malformed_line_names_line() {
        let err = ExperimentConfig::parse("seed = 1\n\nthis is not a pair\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().starts_with("config line 3"));
    }

    #[test]
    fn bad_value_and_duplicate() {
        let err = ExperimentConfig::parse("seed = -4\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        let err = ExperimentConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn invalid_combination_rejected() {
        let err = ExperimentConfig::parse("attack.budget.reserved = 5000000\n").unwrap_err();
        assert!(err.message.contains("reserved"));
        assert!(ExperimentConfig::parse("analysis.lambdas = 1,0\n").is_err());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut cfg = ExperimentConfig::default();
        cfg.env.dt = 0.1 + 0.2;
        cfg.env.r_min = Some(-770.1392836538996);
        cfg.attack.final_train.stop_below = Some(1e-300);
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let cfg = ExperimentConfig::default();
        let seeds = [
            cfg.victim_seed(),
            cfg.attack_seed(),
            cfg.defense_seed(),
            cfg.analysis_seed(),
        ];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
