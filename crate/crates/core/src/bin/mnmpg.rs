use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mnmpg::harness::{self, checks, io, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mnmpg", version, about = "Value-decomposition MARL with a meta-learned global hierarchy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config file.
    Train {
        config: PathBuf,
        /// `key=value`, applied on top of the file; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Greedy evaluation of a saved snapshot.
    Evaluate {
        snapshot: PathBuf,
        config: PathBuf,
        /// Write the visitation histogram to this CSV file.
        #[arg(long)]
        visitation: Option<PathBuf>,
    },
    /// Median/min/max across seeds of one or more run directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the full summary (every evaluation point) as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Check {
        /// Also run the multi-seed learning checks (slow).
        #[arg(long)]
        learning: bool,
    },
}

fn run(cli: Cli) -> mnmpg::Result<bool> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = ExperimentConfig::load_with_overrides(&config, &overrides)?;
            for out in harness::run_experiment(&cfg)? {
                println!(
                    "seed {}: final return {}, win rate {} ({})",
                    out.seed,
                    out.final_return.map_or("-".into(), |v| format!("{v:.4}")),
                    out.final_win_rate.map_or("-".into(), |v| format!("{v:.4}")),
                    out.metrics.display()
                );
            }
            Ok(true)
        }
        Command::Evaluate {
            snapshot,
            config,
            visitation,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let snap = io::parse_snapshot(&io::read_file(&snapshot)?, &snapshot.display().to_string())?;
            let res = harness::evaluate_snapshot(&snap, &cfg.for_seed(snap.seed))?;
            println!("episodes {}", res.returns.len());
            println!("mean_return {}", res.mean_return);
            println!("win_rate {}", res.win_rate);
            if let Some(path) = visitation {
                let rec = mnmpg::train::VisitationRecord {
                    eval_round: 0,
                    env_steps: snap.env_steps,
                    counts: res.visitation,
                };
                io::write_file(&path, &io::visitation_csv(&[rec]))?;
            }
            Ok(true)
        }
        Command::Compare { dirs, csv } => {
            let rows = harness::compare_dirs(&dirs)?;
            print!("{}", harness::summary_text(&rows));
            if let Some(path) = csv {
                io::write_file(&path, &harness::summary_csv(&rows))?;
            }
            Ok(true)
        }
        Command::Check { learning } => {
            let mut outcomes = checks::invariant_suite()?;
            if learning {
                outcomes.extend(checks::learning_suite()?);
            }
            for o in &outcomes {
                println!("{o}");
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
