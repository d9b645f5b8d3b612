//! Command-line front end for `emlaplace`: reads a data file, fits a mixture
//! by EM, and writes a JSON report with the Laplace posterior or the outcome
//! of the oracle cross-checks.
//!
//! Exit codes: 0 success, 1 input error, 2 EM hit `--max-iters`, 3 the fitted
//! point is not a usable mode, 4 a check failed or an oracle errored.

pub mod args;
pub mod data;
mod error;
pub mod report;
pub mod run;

use std::io::Write;

pub use args::Cli;
pub use error::CliError;
pub use report::RunReport;
pub use run::{run, Outcome, Status};

use args::Command;

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match execute_inner(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute_inner(command: &Command) -> Result<i32, CliError> {
    let output = command.output();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(output.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(format!("--threads: {e}")))?;
    let Outcome { report, status } = pool.install(|| run(command))?;

    let json = report.to_json();
    let mut stdout = std::io::stdout().lock();
    let print_lines = matches!(command, Command::Check(a) if !a.json);
    if print_lines {
        for check in report.checks.iter().flatten() {
            writeln!(stdout, "{}", check.line())?;
        }
    }
    match &output.out {
        Some(path) => std::fs::write(path, &json)?,
        None if !print_lines => stdout.write_all(json.as_bytes())?,
        None => {}
    }

    match &status {
        Status::NotConverged => eprintln!(
            "warning: EM stopped after {} iterations without converging",
            report.em.iterations
        ),
        Status::ModeFailure(msg) => eprintln!("error: {msg}"),
        Status::ChecksFailed => eprintln!("error: one or more checks failed"),
        Status::Ok => {}
    }
    Ok(status.exit_code())
}
