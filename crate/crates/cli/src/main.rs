use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmb_core::exec::Execution;
use fmb_core::harness::{load_config, run_command, Artifact, Command, ExperimentConfig, HarnessError, OutputFormat};

#[derive(Parser)]
#[command(name = "fmb", version, about = "Force-metric-bias laboratory on the Price equation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run an optimizer on an objective and trace its FMB decomposition
    Run(Opts),
    /// Rank-weighted evolution strategy
    Es(Opts),
    /// Variational fit of a discrete model
    Vb(Opts),
    /// One-shot Gaussian-process update
    Gp(Opts),
    /// Linear Kalman filter over an observation sequence
    Kalman(Opts),
    /// Learning-guided evolution on a needle landscape
    Baldwin(Opts),
    /// Price and FMB decomposition of one population
    Decompose(Opts),
    /// Divergences between two distributions
    Diverge(Opts),
    /// Derivative and identity self-checks
    Verify(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Opts {
    /// Config file (.toml or .json)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Comma-separated seeds; one output file per seed
    #[arg(long)]
    replicates: Option<String>,
    /// Run without the thread pool
    #[arg(long)]
    sequential: bool,
}

impl Sub {
    fn split(self) -> (Command, Opts) {
        match self {
            Sub::Run(o) => (Command::Run, o),
            Sub::Es(o) => (Command::Es, o),
            Sub::Vb(o) => (Command::Vb, o),
            Sub::Gp(o) => (Command::Gp, o),
            Sub::Kalman(o) => (Command::Kalman, o),
            Sub::Baldwin(o) => (Command::Baldwin, o),
            Sub::Decompose(o) => (Command::Decompose, o),
            Sub::Diverge(o) => (Command::Diverge, o),
            Sub::Verify(o) => (Command::Verify, o),
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| HarnessError::Config(vec![format!("bad replicate seed {t:?}: {e}")])))
        .collect()
}

fn run(command: Command, opts: Opts) -> Result<(), HarnessError> {
    let mut cfg = match &opts.config {
        Some(p) => load_config(p, Some(command))?,
        None if command == Command::Verify => ExperimentConfig::default(),
        None => return Err(HarnessError::Config(vec![format!("`{}` needs --config", command.id())])),
    };
    if let Some(s) = opts.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = opts.out {
        cfg.output = Some(o);
    }
    if let Some(f) = opts.format {
        cfg.format = Some(match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        });
    }
    let seeds = opts.replicates.as_deref().map(parse_seeds).transpose()?;
    let exec = if opts.sequential { Execution::Sequential } else { Execution::Parallel };
    for s in run_command(&cfg, command, seeds.as_deref(), exec)? {
        match (&s.artifact, &s.path) {
            (Artifact::Record(_), None) => print!("{}", s.text),
            _ => println!(
                "{}",
                serde_json::json!({
                    "command": command.id(),
                    "seed": s.seed,
                    "path": s.path.as_ref().map(|p| p.display().to_string()),
                    "rows": s.rows,
                    "sha256": s.sha256,
                })
            ),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", HarnessError::Config(vec![first]).to_json_line());
            return ExitCode::from(1);
        }
    };
    let (command, opts) = cli.command.split();
    match run(command, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
