mod config;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use permlearn::decode::mask_only_baseline;
use permlearn::verify::{run_suite, Suite};

use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "permlearn", version, about = "Entropy-adaptive Gumbel-Sinkhorn experiments")]
struct Cli {
    /// Output directory for `run`; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = logical cores). PERMLEARN_THREADS takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task x mode x seed x sweep cell of a JSON experiment config.
    Run { config: PathBuf },
    /// Run a verification suite and report each check.
    Verify { what: SuiteArg },
    /// Estimate a reference baseline.
    Baseline {
        kind: BaselineKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        anchors: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    #[value(name = "prop1")]
    Prop1,
    #[value(name = "prop2")]
    Prop2,
    #[value(name = "closed_form")]
    ClosedForm,
    #[value(name = "gradcheck")]
    Gradcheck,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Prop1 => Suite::Prop1,
            SuiteArg::Prop2 => Suite::Prop2,
            SuiteArg::ClosedForm => Suite::ClosedForm,
            SuiteArg::Gradcheck => Suite::Gradcheck,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    #[value(name = "mask_only")]
    MaskOnly,
}

fn threads(flag: usize) -> Result<usize, String> {
    match std::env::var("PERMLEARN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("PERMLEARN_THREADS must be a non-negative integer, got '{v}'")),
        Err(_) => Ok(flag),
    }
}

fn run(cli: &Cli, path: &Path) -> ExitCode {
    let config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = match threads(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    match runner::run(&config, &out_dir, threads) {
        Ok(o) => {
            println!(
                "{} runs, {} failed; outputs in {}",
                o.runs,
                o.failed,
                o.out_dir.display()
            );
            if o.failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn verify(what: SuiteArg) -> ExitCode {
    match run_suite(what.into()) {
        Ok(checks) => {
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{} checks, {failed} failed", checks.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Verify { what } => verify(*what),
        Command::Baseline {
            kind: BaselineKind::MaskOnly,
            n,
            anchors,
            trials,
            seed,
        } => match mask_only_baseline(*n, *anchors, *trials, *seed) {
            Ok(b) => {
                println!(
                    "mask_only n={n} anchors={anchors} trials={trials}: tau {:.4} ± {:.4}",
                    b.mean, b.std_err
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
