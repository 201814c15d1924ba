//! `fedsim`: run federated-learning simulations from JSON configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsim_core::experiment::{
    apply_seed_override, compare, compare_files, parse_config, preset, presets, run_to_dir, ConfigError,
    ExperimentConfig, RunError, RunResult, SEED_ENV,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or its grid of variants) and write metrics.
    Run(RunArgs),
    /// Tabulate metrics CSVs side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        csv: Vec<PathBuf>,
        /// Virtual-time cutoffs for accuracy columns.
        #[arg(long = "at")]
        at: Vec<f64>,
    },
    /// List built-in presets, or print one as JSON.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => parse_config(path)?,
        (None, Some(name)) => preset(name)?.config,
        (None, None) => unreachable!("clap enforces one source"),
    };
    let env = std::env::var(SEED_ENV).ok();
    apply_seed_override(&mut config, env.as_deref())?;
    config.validate()?;
    Ok(config)
}

fn report(results: &[RunResult], config: &ExperimentConfig) -> Result<(), Failure> {
    if results.len() > 1 {
        let runs: Vec<_> = results
            .iter()
            .map(|r| (r.label.clone().unwrap_or_default(), r.log.clone()))
            .collect();
        print!("{}", compare(&runs, &config.summary.acc_at_times)?);
        return Ok(());
    }
    let s = &results[0].summary;
    println!(
        "{}: scheme {} final accuracy {:.4} at version {} (t={:.1}); {} requests, {} models exchanged",
        s.name, s.scheme, s.final_accuracy, s.final_version, s.final_time, s.update_requests, s.models_exchanged
    );
    for c in &s.acc_at_times {
        println!("  acc@{}s = {:.4}", c.at, c.accuracy);
    }
    for c in &s.acc_at_rounds {
        println!("  acc@{}rounds = {:.4}", c.at, c.accuracy);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let config = load(&args)?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(config.name.replace('/', "_")));
            let results = run_to_dir(&config, &out)?;
            report(&results, &config)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Compare { csv, at } => {
            print!("{}", compare_files(&csv, &at)?);
        }
        Command::Presets { show: Some(name) } => {
            println!("{}", preset(&name)?.config.to_json_pretty());
        }
        Command::Presets { show: None } => {
            let all = presets();
            let width = all.iter().map(|p| p.name.len()).max().unwrap_or(0);
            for p in all {
                println!("{:<width$}  {}", p.name, p.description);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
