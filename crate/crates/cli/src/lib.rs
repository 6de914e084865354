//! Command-line front end: CSV ingestion, validation and report writing around
//! the `clp_bounds` library.
//!
//! Every command is split into a planning step, which reads and validates all
//! inputs, and an execution step, which runs the solvers and writes files.

pub mod args;
pub mod commands;
pub mod data;
pub mod error;

use args::{Cli, Command};
use commands::{diagnose, estimate, generate, policy, simulate};
use error::CliError;

/// Validated work for one invocation.
pub enum Plan {
    Estimate(estimate::EstimatePlan),
    Policy(policy::PolicyPlan),
    Simulate(simulate::SimulatePlan),
    Diagnose(diagnose::DiagnosePlan),
    Generate(args::GenerateArgs),
}

/// Reads and checks every input of `command`; no solver runs here.
pub fn plan(command: &Command) -> Result<Plan, CliError> {
    Ok(match command {
        Command::Estimate(a) => Plan::Estimate(estimate::plan(a)?),
        Command::Policy(a) => Plan::Policy(policy::plan(a)?),
        Command::Simulate(a) => Plan::Simulate(simulate::plan(a)?),
        Command::Diagnose(a) => Plan::Diagnose(diagnose::plan(a)?),
        Command::Generate(a) => {
            generate::validate(a)?;
            Plan::Generate(a.clone())
        }
    })
}

pub fn execute(plan: &Plan) -> Result<(), CliError> {
    match plan {
        Plan::Estimate(p) => estimate::execute(p).map(drop),
        Plan::Policy(p) => policy::execute(p).map(drop),
        Plan::Simulate(p) => simulate::execute(p).map(drop),
        Plan::Diagnose(p) => diagnose::execute(p).map(drop),
        Plan::Generate(a) => generate::execute(a),
    }
}

/// Plans, then executes inside a thread pool sized by `--threads`.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Validation("--threads must be positive".into()));
    }
    let plan = plan(&cli.command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("could not start the thread pool: {e}")))?;
    pool.install(|| execute(&plan))
}
