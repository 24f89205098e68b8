use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wavecascade::config::load_config;
use wavecascade::diagnostics::fit_cascade_rate;
use wavecascade::driver::{execute, run_checks, RunOptions, Summary};
use wavecascade::io::read_reservoir_series;
use wavecascade::oracle::kernel_cross_check;

const EXIT_INPUT: u8 = 1;
const EXIT_CHECK: u8 = 2;

#[derive(Parser)]
#[command(
    name = "wavecascade",
    version,
    about = "Energy cascade simulator for the isotropic 3-wave kinetic equation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a configuration and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Omit the timestamp line so repeated runs are byte-identical.
        #[arg(long)]
        reproducible: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run, then evaluate every configured check; prints one JSON report per line.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reproducible: bool,
    },
    /// Seeded sweep over the kernel identities.
    Oracle {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Fit E_inf(t) ≈ C1 − C2/√t on a window of a record CSV.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        t_lo: f64,
        #[arg(long)]
        t_hi: f64,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn simulate(config: PathBuf, opts: RunOptions, checks: bool) -> ExitCode {
    let cfg = match load_config(&config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let out = match execute(&cfg, &opts) {
        Ok(o) => o,
        Err(e) if e.is_input_error() => return fail(EXIT_INPUT, e),
        Err(e) => return fail(EXIT_CHECK, e),
    };
    let outcome = checks.then(|| run_checks(&cfg, &out.history));
    let pass = outcome.as_ref().is_none_or(|o| o.pass());
    if let Some(o) = &outcome {
        for c in &o.checks {
            println!("{}", serde_json::to_string(c).expect("report serializes"));
        }
    }
    let summary = Summary::new(&out, outcome);
    if let Some(p) = &cfg.output.summary_path {
        if let Err(e) = summary.save(p) {
            return fail(EXIT_INPUT, e);
        }
    }
    eprintln!(
        "t={} steps={} halvings={} E_inf={}",
        out.final_state.t, out.steps, out.halvings, out.final_state.e_inf
    );
    if pass {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_CHECK, "one or more hard checks failed")
    }
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            reproducible,
            resume,
        } => simulate(
            config,
            RunOptions {
                reproducible,
                resume,
                keep_states: false,
            },
            false,
        ),
        Cmd::Check {
            config,
            reproducible,
        } => simulate(
            config,
            RunOptions {
                reproducible,
                resume: None,
                keep_states: true,
            },
            true,
        ),
        Cmd::Oracle { seed, samples } => match kernel_cross_check(samples, seed) {
            Ok(report) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
                if report.pass() {
                    ExitCode::SUCCESS
                } else {
                    fail(EXIT_CHECK, "kernel identity violated")
                }
            }
            Err(e) => fail(EXIT_INPUT, e),
        },
        Cmd::Fit { csv, t_lo, t_hi } => {
            let series = match read_reservoir_series(&csv) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_INPUT, e),
            };
            match fit_cascade_rate(&series, (t_lo, t_hi)) {
                Ok(fit) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&fit).expect("fit serializes")
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_INPUT, e),
            }
        }
    }
}
