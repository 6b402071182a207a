//! Subcommand implementations. Each writes its artifacts and a manifest
//! into its own run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use silab_core::analysis::{
    correlation_csv, correlation_experiment, robustness_sweep, sweep_csv, Unmetered,
};
use silab_core::attack::{run_attack, visited_full_gaussian, AttackKind, AttackReport};
use silab_core::victim::{
    train_victim, Oracle, VictimBundle, ENV_FILE, POLICY_FILE, REFERENCE_FILE, RETURN_FILE,
};

use crate::config::{Baseline, ConfigError, Experiment, ExperimentConfig, ReffitFamily};
use crate::manifest::{content_hash, hash_artifacts, RunManifest, TOOL_VERSION};

/// Overrides the configured `output_dir`.
pub const OUTPUT_ROOT_VAR: &str = "SILAB_OUTPUT_ROOT";

pub const VICTIM_DIR: &str = "victim";
pub const BUNDLE_FILES: [&str; 4] = [POLICY_FILE, REFERENCE_FILE, ENV_FILE, RETURN_FILE];
pub const REPORT_FILE: &str = "report.json";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug)]
pub enum CommandError {
    /// Bad invocation or configuration; exit code 1.
    Usage(String),
    /// Failure while running; exit code 2.
    Runtime(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CommandError {}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<silab_core::Error> for CommandError {
    fn from(e: silab_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

pub type CommandResult<T> = Result<T, CommandError>;

/// Read a config document and apply the output-root override.
pub fn load_config(path: &Path) -> CommandResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CommandError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_VAR) {
        cfg.output_dir = PathBuf::from(root);
    }
    Ok(cfg)
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// One-line human summary.
    pub summary: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn finish(
    command: &str,
    cfg: &ExperimentConfig,
    dir: &Path,
    started: String,
    inputs: Vec<(String, Vec<u8>)>,
    artifacts: &[&str],
    summary: String,
) -> CommandResult<RunOutput> {
    let paths: Vec<PathBuf> = artifacts.iter().map(PathBuf::from).collect();
    let manifest = RunManifest {
        command: command.into(),
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        started,
        finished: now(),
        input_hash: content_hash(&inputs),
        artifacts: hash_artifacts(dir, &paths)?,
        config: cfg.clone(),
    };
    manifest.write(dir)?;
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        manifest,
        summary,
    })
}

pub fn victim_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(VICTIM_DIR)
}

fn load_victim(cfg: &ExperimentConfig) -> CommandResult<(VictimBundle, Vec<(String, Vec<u8>)>)> {
    let dir = victim_dir(cfg);
    if !BUNDLE_FILES.iter().all(|f| dir.join(f).is_file()) {
        return Err(CommandError::Runtime(format!(
            "victim bundle missing at {}; run build-victim first",
            dir.display()
        )));
    }
    let bundle = VictimBundle::load(&dir)?;
    let mut inputs = vec![("config".to_string(), cfg.to_text().into_bytes())];
    for f in BUNDLE_FILES {
        inputs.push((format!("{VICTIM_DIR}/{f}"), fs::read(dir.join(f))?));
    }
    Ok((bundle, inputs))
}

/// Train a victim and write its bundle and manifest.
pub fn cmd_build_victim(cfg: &ExperimentConfig) -> CommandResult<RunOutput> {
    let started = now();
    let bundle = train_victim(&cfg.env, &cfg.victim, cfg.victim_seed())?;
    let dir = victim_dir(cfg);
    bundle.save(&dir)?;
    let summary = format!(
        "victim {} return={:.4} expert_return={:.4} dir={}",
        bundle.env.kind.name(),
        bundle.victim_return,
        bundle.expert_return,
        dir.display()
    );
    let inputs = vec![("config".to_string(), cfg.to_text().into_bytes())];
    finish("build-victim", cfg, &dir, started, inputs, &BUNDLE_FILES, summary)
}

/// Run the configured attack against the built victim.
pub fn cmd_attack(cfg: &ExperimentConfig) -> CommandResult<RunOutput> {
    let started = now();
    let (victim, inputs) = load_victim(cfg)?;
    let attack_cfg = cfg.attack_config(&victim.reference);
    let kind = match cfg.baseline {
        Baseline::None => AttackKind::Stealthy,
        Baseline::Reffit => match cfg.reffit_family {
            ReffitFamily::Diagonal => AttackKind::ReferenceFit(victim.reference.gaussian()),
            ReffitFamily::Full => AttackKind::ReferenceFit(visited_full_gaussian(
                &victim,
                cfg.victim.eval_episodes,
                cfg.attack_seed(),
            )?),
        },
        b => AttackKind::Random(b.scale().expect("random baselines have a scale")),
    };
    let oracle = Oracle::for_victim(
        &victim,
        attack_cfg.budget.total,
        cfg.defense_enabled.then(|| cfg.defense_seed()),
    );
    let (report, _) = run_attack(&victim, &oracle, &kind, &attack_cfg)?;
    let dir = attack_dir(cfg, &report);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(REPORT_FILE), report.to_json())?;
    fs::write(dir.join(ITERATIONS_FILE), report.iterations_csv())?;
    finish(
        "attack",
        cfg,
        &dir,
        started,
        inputs,
        &[REPORT_FILE, ITERATIONS_FILE],
        report.summary_line(),
    )
}

fn attack_dir(cfg: &ExperimentConfig, report: &AttackReport) -> PathBuf {
    let defense = if report.defense { "on" } else { "off" };
    cfg.output_dir
        .join("attack")
        .join(format!("{}-defense-{defense}", report.label))
}

/// Run an analysis experiment against the built victim. Victim queries are
/// unmetered here.
pub fn cmd_analyze(cfg: &ExperimentConfig) -> CommandResult<RunOutput> {
    let started = now();
    let (victim, inputs) = load_victim(cfg)?;
    let experiment = cfg.analysis.experiment;
    let dir = cfg.output_dir.join("analysis").join(experiment.name());
    fs::create_dir_all(&dir)?;
    let (csv_name, summary_json, summary) = match experiment {
        Experiment::Correlation => {
            let oracle = Oracle::new(victim.policy.clone(), 1);
            let c = &cfg.analysis.correlation;
            let res = correlation_experiment(
                &Unmetered(&oracle),
                &victim.reference,
                c,
                cfg.analysis_seed(),
            )?;
            fs::write(dir.join("correlation.csv"), correlation_csv(&res.records))?;
            let line = format!(
                "correlation rho={:.4} p={:.3e} count={}",
                res.rho,
                res.p_value,
                res.records.len()
            );
            let doc = json!({
                "experiment": "correlation",
                "viewpoint": "analytical",
                "rho": res.rho,
                "p_value": res.p_value,
                "count": res.records.len(),
                "points_per_dist": c.points_per_dist,
                "batch_size": c.train.batch_size,
                "epochs": c.train.epochs,
                "seed": cfg.seed,
                "config": cfg.to_text(),
            });
            ("correlation.csv", doc, line)
        }
        Experiment::Sweep => {
            let attack_cfg = cfg.attack_config(&victim.reference);
            let points = robustness_sweep(
                &victim,
                &cfg.analysis.lambdas,
                &cfg.analysis.zs,
                cfg.analysis.queries_per_point,
                &attack_cfg,
            )?;
            fs::write(dir.join("sweep.csv"), sweep_csv(&points))?;
            let line = points
                .iter()
                .map(|p| format!("{}={}:rr={:.4}", p.kind.name(), p.value, p.rr))
                .collect::<Vec<_>>()
                .join(" ");
            let doc = json!({
                "experiment": "sweep",
                "viewpoint": "analytical",
                "points": points,
                "queries_per_point": cfg.analysis.queries_per_point,
                "seed": cfg.seed,
                "config": cfg.to_text(),
            });
            ("sweep.csv", doc, format!("sweep {line}"))
        }
    };
    fs::write(
        dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary_json).expect("summary serializes"),
    )?;
    finish(
        "analyze",
        cfg,
        &dir,
        started,
        inputs,
        &[csv_name, SUMMARY_FILE],
        summary,
    )
}

/// Parse `a..b` (end exclusive).
pub fn parse_seed_range(s: &str) -> Result<std::ops::Range<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
    if a >= b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(a..b)
}

/// The config for one seed of a fan-out: its own seed and subdirectory.
pub fn seeded(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        output_dir: cfg.output_dir.join(format!("seed-{seed}")),
        ..cfg.clone()
    }
}
