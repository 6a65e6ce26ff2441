use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use som_core::experiment::{load_config, oracle_suite, run_experiment, WORKERS_ENV};

/// Exit status for unreadable or invalid configs and I/O failures.
const EXIT_SETUP: u8 = 3;

#[derive(Parser)]
#[command(
    name = "som",
    version,
    about = "Sequential optimistic matching simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write ledger and summary CSVs.
    #[command(after_help = format!(
        "Seeds run in parallel; set {WORKERS_ENV} to bound the worker count.\n\
         Exit status: 0 all invariants held, 2 optimism event violated, \
         1 hard invariant breach, 3 config or I/O error."
    ))]
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding `run.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the brute-force equivalence checks of the matching oracles.
    OracleSuite {
        #[arg(long, default_value_t = 500)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut config = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return setup_error(e),
            };
            if let Some(seed) = seed {
                config.run.seeds = vec![seed];
            }
            if let Some(out) = out {
                config.run.out_dir = out;
            }
            let summary = match run_experiment(&config) {
                Ok(s) => s,
                Err(e) => return setup_error(e),
            };
            for seed in &summary.seeds {
                let t = &seed.tallies;
                println!(
                    "seed {}: cum_total_gap={:.6} slope={} optimism_violations={} hard_violations={}",
                    seed.seed,
                    seed.cumulative[som_core::evaluation::TOTAL_GAP],
                    seed.slope.map_or("n/a".to_string(), |s| format!("{s:.4}")),
                    t.optimism_violations,
                    t.hard_violations(),
                );
            }
            println!("wrote {}", config.run.out_dir.join("summary.csv").display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Command::Check { config } => match load_config(&config) {
            Ok(c) => {
                println!(
                    "ok: {} seeds, {} episodes, d={} H={} |C|={} |E|={} agents/side={}",
                    c.run.seeds.len(),
                    c.som.episodes,
                    c.market.d,
                    c.market.horizon,
                    c.market.num_contexts,
                    c.market.num_actions,
                    c.market.agents_per_side
                );
                ExitCode::SUCCESS
            }
            Err(e) => setup_error(e),
        },
        Command::OracleSuite { cases, seed } => match oracle_suite(cases, seed) {
            Ok(report) => {
                println!(
                    "cases={} assignment_mismatches={} duality_failures={} stability_failures={} instability_failures={}",
                    report.cases,
                    report.assignment_mismatches,
                    report.duality_failures,
                    report.stability_failures,
                    report.instability_failures
                );
                if report.failures() == 0 {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => setup_error(e),
        },
    }
}

fn setup_error(e: som_core::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_SETUP)
}
