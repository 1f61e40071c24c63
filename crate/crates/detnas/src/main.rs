use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detnas::config::RunConfig;
use detnas::error::CliResult;
use detnas::pipeline;
use detnas_core::evolution::Controller;

#[derive(Parser)]
#[command(name = "detnas", version, about = "One-shot backbone search: pretrain, finetune, search")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set evolution.iterations=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Space preset: large, small or tiny.
    #[arg(long, global = true)]
    space: Option<String>,
    /// Custom space file; takes precedence over `--space`.
    #[arg(long, global = true)]
    space_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Evolution,
    Random,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Train the supernet on the classification task.
    Pretrain,
    /// Train the supernet on the localization task.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Start from random weights and lengthen the schedule.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Search the finetuned supernet.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "evolution")]
        controller: ControllerArg,
    },
    /// Train one architecture on its own and report test metrics.
    Retrain {
        #[arg(long)]
        arch: String,
    },
    /// Score one architecture with inherited supernet weights.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        arch: String,
    },
    /// MACs of an architecture, or a summary of the whole space.
    Flops {
        #[arg(long)]
        arch: Option<String>,
    },
    /// Per-stage choice histogram of the architectures listed in a file.
    ReportPatterns {
        #[arg(long)]
        input: PathBuf,
    },
}

fn resolve(common: &Common, command: &Command) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_env()?;
    for o in &common.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.output {
        config.output = out.clone();
    }
    if let Some(space) = &common.space {
        config.space_preset = space.clone();
        config.space_file = None;
    }
    if let Some(file) = &common.space_file {
        config.space_file = Some(file.clone());
    }
    if let Command::Finetune { from_scratch: true, .. } = command {
        config.from_scratch = true;
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    let config = resolve(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Pretrain => {
            let path = pipeline::cmd_pretrain(&config)?;
            println!("wrote {}", path.display());
        }
        Command::Finetune { checkpoint, .. } => {
            let path = pipeline::cmd_finetune(&config, checkpoint.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Search { checkpoint, controller } => {
            let controllers: &[Controller] = match controller {
                ControllerArg::Evolution => &[Controller::Evolution],
                ControllerArg::Random => &[Controller::Random],
                ControllerArg::Both => &[Controller::Evolution, Controller::Random],
            };
            for r in pipeline::cmd_search(&config, checkpoint, controllers)? {
                println!(
                    "{}: best {} ({}) fitness {:.4} over {} evaluations",
                    r.controller.name(),
                    r.best_architecture.symbolic(),
                    r.best_architecture,
                    r.best_fitness,
                    r.log.len()
                );
            }
        }
        Command::Retrain { arch } => {
            let report = pipeline::cmd_retrain(&config, arch)?;
            if !report.within_constraint {
                eprintln!(
                    "warning: {} MACs exceed evolution.max_flops = {}; the budget only constrains search",
                    report.flops, config.evolution.constraint.max_flops
                );
            }
            print!("{}", report.to_text());
        }
        Command::Eval { checkpoint, arch } => print!("{}", pipeline::cmd_eval(&config, checkpoint, arch)?),
        Command::Flops { arch } => print!("{}", pipeline::cmd_flops(&config, arch.as_deref())?),
        Command::ReportPatterns { input } => print!("{}", pipeline::cmd_report_patterns(&config, input)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
