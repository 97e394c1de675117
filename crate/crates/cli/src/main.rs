mod align;
mod bench;
mod demo;
mod eval;
mod gradcheck;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs: exit 1.
    Validation(String),
    /// A check the command exists to perform did not hold: exit 2. Carries
    /// the full report and a one-line reason.
    Assertion { report: String, reason: String },
}

impl From<axreid::Error> for CliError {
    fn from(e: axreid::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "axreid",
    version,
    about = "Axial-attention video re-identification toolkit"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic FLOP counts for the backbone and attention variants.
    Bench(bench::BenchArgs),
    /// Finite-difference checks of every analytic backward pass.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Re-detect, link and align tracklets from a candidate file.
    Align(align::AlignArgs),
    /// CMC and mAP under the original or revised protocol.
    Eval(eval::EvalArgs),
    /// Train the toy model on synthetic tracklets and report retrieval.
    Demo(demo::DemoArgs),
}

fn run(cli: Cli) -> CliResult<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Bench(a) => bench::run(&a),
        Command::Gradcheck(a) => gradcheck::run(&a),
        Command::Align(a) => align::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Demo(a) => demo::run(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Assertion { report, reason }) => {
            print!("{report}");
            eprintln!("check failed: {reason}");
            ExitCode::from(2)
        }
    }
}
