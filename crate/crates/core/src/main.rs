use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hrsnn::config::{ExperimentConfig, Task};
use hrsnn::error::Result;
use hrsnn::runner::{cmd_bo, cmd_build, cmd_evaluate, cmd_prune, cmd_train, Invocation, Outcome};

/// Heterogeneous recurrent spiking networks: build, train, prune, evaluate
/// and tune by Bayesian optimization.
#[derive(Debug, Parser)]
#[command(name = "hrsnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a network and draw its neuron parameters.
    Build(Common),
    /// STDP-train a snapshot on the task stream and fit the readout.
    Train(Common),
    /// Prune a snapshot (Lyapunov noise pruning or activity pruning).
    Prune(Common),
    /// Evaluate a snapshot on the task.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Also report memory capacity, efficiency and separation rank.
        #[arg(long)]
        extended: bool,
        /// Dense parent snapshot for the SOP ratio.
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
    },
    /// Bayesian optimization over the parameter distributions.
    Bo(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration file).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Input model snapshot (graph JSON; parameters in the `.params.json` sidecar).
    #[arg(long, value_name = "PATH")]
    snapshot: Option<PathBuf>,
    /// Task (overrides the configuration file).
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

impl Common {
    fn invocation(self) -> Result<Invocation> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let inv = Invocation::new(cfg, self.seed, self.out, self.snapshot, self.task)?;
        inv.cfg.validate()?;
        Ok(inv)
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Build(c) => cmd_build(&c.invocation()?),
        Command::Train(c) => cmd_train(&c.invocation()?),
        Command::Prune(c) => cmd_prune(&c.invocation()?),
        Command::Evaluate { common, extended, reference } => {
            let mut inv = common.invocation()?;
            inv.extended = extended;
            inv.reference = reference;
            cmd_evaluate(&inv)
        }
        Command::Bo(c) => cmd_bo(&c.invocation()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            println!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hrsnn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
