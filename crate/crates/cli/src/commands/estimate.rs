use clp_bounds::estimators::{estimate_bounds, BoundsReport, Engine, EstimatorConfig};
use clp_bounds::lp::{ENUMERATION_MAX_J, ENUMERATION_MAX_K};
use clp_bounds::problems::ProblemSpec;
use serde::{Deserialize, Serialize};

use super::{
    check_alpha, create_dir, load, nuisances, objective_name, problem_spec, resolve_engine, setting_name,
    write_csv_rows, write_json, NuisancePlan, ResolvedEngine,
};
use crate::args::{EngineArg, EstimateArgs};
use crate::data::Dataset;
use crate::error::CliError;

/// Contents of `bounds.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub input: String,
    pub setting: String,
    pub objective: String,
    pub engine: String,
    /// `eta` or `xi` actually used.
    pub hyperparameter: Option<f64>,
    /// `fixed`, `log` or `sqrt`.
    pub schedule: Option<String>,
    pub nuisance_source: String,
    pub folds: Option<usize>,
    pub seed: u64,
    pub report: BoundsReport,
}

/// The single row of `bounds.csv`.
#[derive(Debug, Serialize)]
struct SummaryRow {
    engine: String,
    hyperparameter: Option<f64>,
    n: usize,
    n_used: usize,
    n_excluded_infeasible: usize,
    theta_l: f64,
    theta_u: f64,
    se_l: f64,
    se_u: f64,
    ci_lo: f64,
    ci_hi: f64,
    alpha: f64,
    bounds_crossed: bool,
}

pub struct EstimatePlan {
    args: EstimateArgs,
    dataset: Dataset,
    nuisances: NuisancePlan,
    spec: ProblemSpec,
    engine: ResolvedEngine,
    config: EstimatorConfig,
}

pub fn plan(args: &EstimateArgs) -> Result<EstimatePlan, CliError> {
    check_alpha(args.alpha)?;
    let (dataset, nuisances) = load(&args.data)?;
    let spec = problem_spec(dataset.setting, &args.objective)?;
    let engine = resolve_engine(&args.engine, EngineArg::Bfs, dataset.n())?;
    if matches!(engine.engine, Engine::LogSumExp { .. }) {
        let (k, j) = (spec.matrix.cols(), spec.matrix.rows());
        if k > ENUMERATION_MAX_K || j > ENUMERATION_MAX_J {
            return Err(CliError::Validation(format!(
                "the lse engine enumerates vertices and supports at most {ENUMERATION_MAX_K} cells and \
                 {ENUMERATION_MAX_J} constraints (this problem has {k} and {j})"
            )));
        }
    }
    let mut config = EstimatorConfig::new(engine.engine, args.alpha);
    config.strict = args.strict;
    config.normalize_objective = args.engine.normalize_objective;
    Ok(EstimatePlan {
        args: args.clone(),
        dataset,
        nuisances,
        spec,
        engine,
        config,
    })
}

pub fn execute(plan: &EstimatePlan) -> Result<EstimateOutput, CliError> {
    let nus = nuisances(&plan.dataset, &plan.nuisances)?;
    let report = estimate_bounds(&plan.spec, &plan.dataset.observations, &nus, &plan.config)?;
    let args = &plan.args;
    let output = EstimateOutput {
        input: args.data.input.display().to_string(),
        setting: setting_name(plan.dataset.setting).into(),
        objective: objective_name(&args.objective).into(),
        engine: plan.engine.name().into(),
        hyperparameter: plan.engine.hyperparameter(),
        schedule: plan.engine.schedule.map(String::from),
        nuisance_source: plan.nuisances.label().into(),
        folds: plan.nuisances.folds(),
        seed: args.data.seed,
        report,
    };

    create_dir(&args.output)?;
    write_json(&args.output.join("bounds.json"), &output)?;
    let r = &output.report;
    let row = SummaryRow {
        engine: output.engine.clone(),
        hyperparameter: output.hyperparameter,
        n: r.n,
        n_used: r.n_used,
        n_excluded_infeasible: r.n_excluded_infeasible,
        theta_l: r.theta_l,
        theta_u: r.theta_u,
        se_l: r.se_l(),
        se_u: r.se_u(),
        ci_lo: r.ci.0,
        ci_hi: r.ci.1,
        alpha: r.alpha,
        bounds_crossed: r.diagnostics.bounds_crossed,
    };
    write_csv_rows(&args.output.join("bounds.csv"), &[row])?;
    println!(
        "{} {}: theta_L = {:.6}, theta_U = {:.6}, CI (alpha {}) [{:.6}, {:.6}] ({} of {} used)",
        output.objective,
        output.engine,
        r.theta_l,
        r.theta_u,
        r.alpha,
        r.ci.0,
        r.ci.1,
        r.n_used,
        r.n
    );
    Ok(output)
}
