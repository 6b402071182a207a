use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use silab::commands::{
    cmd_analyze, cmd_attack, cmd_build_victim, load_config, parse_seed_range, seeded,
    CommandResult, RunOutput,
};
use silab::config::{Baseline, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "silab", version, about = "Black-box policy extraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a victim policy and write its bundle.
    BuildVictim {
        config: PathBuf,
        /// Run seeds a..b (end exclusive), each in its own subdirectory.
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<std::ops::Range<u64>>,
    },
    /// Steal the built victim.
    Attack {
        config: PathBuf,
        #[arg(long, value_enum)]
        defense: Option<Switch>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<std::ops::Range<u64>>,
    },
    /// Run an analysis experiment on the built victim.
    Analyze {
        config: PathBuf,
        #[arg(long, value_enum)]
        experiment: Option<ExperimentArg>,
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<std::ops::Range<u64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    None,
    Random1,
    Random10,
    Random100,
    Reffit,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Correlation,
    Sweep,
}

type Runner = fn(&ExperimentConfig) -> CommandResult<RunOutput>;

fn fan_out(
    cfg: &ExperimentConfig,
    seeds: Option<std::ops::Range<u64>>,
    run: Runner,
) -> CommandResult<()> {
    let Some(seeds) = seeds else {
        let out = run(cfg)?;
        println!("{}", out.summary);
        return Ok(());
    };
    let configs: Vec<ExperimentConfig> = seeds.map(|s| seeded(cfg, s)).collect();
    let results: Vec<CommandResult<RunOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    let mut first_err = None;
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(out) => println!("seed {}: {}", c.seed, out.summary),
            Err(e) => {
                eprintln!("seed {}: {e}", c.seed);
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn dispatch(cli: Cli) -> CommandResult<()> {
    match cli.command {
        Command::BuildVictim { config, seeds } => {
            fan_out(&load_config(&config)?, seeds, cmd_build_victim)
        }
        Command::Attack {
            config,
            defense,
            baseline,
            seeds,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(d) = defense {
                cfg.defense_enabled = matches!(d, Switch::On);
            }
            if let Some(b) = baseline {
                cfg.baseline = match b {
                    BaselineArg::None => Baseline::None,
                    BaselineArg::Random1 => Baseline::Random1,
                    BaselineArg::Random10 => Baseline::Random10,
                    BaselineArg::Random100 => Baseline::Random100,
                    BaselineArg::Reffit => Baseline::Reffit,
                };
            }
            fan_out(&cfg, seeds, cmd_attack)
        }
        Command::Analyze {
            config,
            experiment,
            seeds,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(e) = experiment {
                cfg.analysis.experiment = match e {
                    ExperimentArg::Correlation => Experiment::Correlation,
                    ExperimentArg::Sweep => Experiment::Sweep,
                };
            }
            fan_out(&cfg, seeds, cmd_analyze)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
