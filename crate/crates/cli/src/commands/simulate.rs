use std::path::PathBuf;

use clp_bounds::entropic::EtaSchedule;
use clp_bounds::sim::{run_sweep, DgpKind, EngineSpec, SimConfig, SimResult};

use super::{create_dir, write_json};
use crate::args::SimulateArgs;
use crate::error::CliError;

pub struct SimulatePlan {
    config: SimConfig,
    output: PathBuf,
}

/// Parses `bfs`, `entropic[:log|:sqrt|:<eta>]` and `lse[:log|:sqrt|:<xi>]`.
pub fn parse_engine(text: &str, kappa: f64) -> Result<EngineSpec, CliError> {
    let invalid = || CliError::Validation(format!("unknown engine cell `{text}`"));
    let (name, hyper) = match text.trim().split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (text.trim(), None),
    };
    let schedule = |hyper: Option<&str>| -> Result<EtaSchedule, CliError> {
        match hyper {
            None | Some("log") => Ok(EtaSchedule::Log { kappa }),
            Some("sqrt") => Ok(EtaSchedule::Sqrt { kappa }),
            Some(v) => match v.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(EtaSchedule::Fixed(v)),
                _ => Err(invalid()),
            },
        }
    };
    match name {
        "bfs" if hyper.is_none() => Ok(EngineSpec::Bfs),
        "entropic" => Ok(EngineSpec::Entropic(schedule(hyper)?)),
        "lse" => Ok(EngineSpec::LogSumExp(schedule(hyper)?)),
        _ => Err(invalid()),
    }
}

pub fn plan(args: &SimulateArgs) -> Result<SimulatePlan, CliError> {
    if !(args.kappa > 0.0 && args.kappa.is_finite()) {
        return Err(CliError::Validation(format!("--kappa must be positive, got {}", args.kappa)));
    }
    let mut config = SimConfig::new(args.n, args.levels, args.r, args.reps, args.seed);
    config.rho = args.rho;
    config.engines = args
        .engines
        .iter()
        .map(|e| parse_engine(e, args.kappa))
        .collect::<Result<_, _>>()?;
    config.alpha = args.alpha;
    config.oracle_draws = args.oracle_draws;
    config.standardize_y1 = args.standardize_y1;
    config.exact_nuisances = args.exact_nuisances;
    config.normalize_objective = args.normalize_objective;
    if args.identical_outcomes {
        config.dgp = DgpKind::IdenticalOutcomes;
    }
    config.validate()?;
    Ok(SimulatePlan {
        config,
        output: args.output.clone(),
    })
}

pub fn execute(plan: &SimulatePlan) -> Result<SimResult, CliError> {
    let result = run_sweep(&plan.config)?;
    create_dir(&plan.output)?;
    write_json(&plan.output.join("simulation.json"), &result)?;
    let csv_path = plan.output.join("simulation.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    result.write_csv(file)?;
    println!(
        "oracle: theta_L = {:.6} (se {:.1e}), theta_U = {:.6} (se {:.1e})",
        result.oracle.theta_l, result.oracle.se_l, result.oracle.theta_u, result.oracle.se_u
    );
    for c in &result.cells {
        let hyper = c.hyper.map_or_else(|| "-".to_string(), |h| format!("{h:.4}"));
        println!(
            "{:<9} hyper {:>9}  n {:>6}  L {}  r {}  bias {:+.5}/{:+.5}  sd {:.5}/{:.5}  rmse {:.5}/{:.5}  \
             coverage {:.3}/{:.3}  failed {}",
            c.engine,
            hyper,
            c.n,
            c.levels,
            c.r,
            c.bias_l,
            c.bias_u,
            c.sd_l,
            c.sd_u,
            c.rmse_l,
            c.rmse_u,
            c.coverage_l,
            c.coverage_u,
            c.n_failed
        );
    }
    Ok(result)
}
