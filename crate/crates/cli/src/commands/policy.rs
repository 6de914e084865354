use std::path::PathBuf;

use clp_bounds::estimators::{BoundsReport, Engine, EstimatorConfig};
use clp_bounds::policy::{
    evaluate_policy, fit_policy_bfs, fit_policy_entropic, FeatureMap, LogisticPolicy, OptimizerConfig,
    PolicyFitReport, PolicyProblem,
};
use clp_bounds::problems::{Setting, UtilitySpec};
use clp_bounds::sim::substream;
use serde::{Deserialize, Serialize};

use super::{
    check_alpha, create_dir, load, nuisances, resolve_engine, utility, write_json, NuisancePlan, ResolvedEngine,
    STREAM_RESTARTS,
};
use crate::args::{EngineArg, FeatureArg, PolicyArgs};
use crate::data::Dataset;
use crate::error::CliError;

/// Contents of `policy_lambda_{lambda}.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub lambda: f64,
    pub utilities: Vec<f64>,
    pub engine: String,
    pub hyperparameter: Option<f64>,
    pub schedule: Option<String>,
    pub nuisance_source: String,
    pub seed: u64,
    pub fit: PolicyFitReport,
    /// Bounds on the regret of the fitted rule.
    pub evaluation: BoundsReport,
}

pub struct PolicyPlan {
    args: PolicyArgs,
    dataset: Dataset,
    nuisances: NuisancePlan,
    utilities: Vec<UtilitySpec>,
    engine: ResolvedEngine,
    feature_map: FeatureMap,
}

/// File stem shared by the JSON report and the policy curve of one `lambda`.
pub fn file_stem(lambda: f64) -> String {
    format!("policy_lambda_{lambda}")
}

pub fn plan(args: &PolicyArgs) -> Result<PolicyPlan, CliError> {
    let invalid = |m: String| Err(CliError::Validation(m));
    check_alpha(args.alpha)?;
    if args.lambda.is_empty() {
        return invalid("--lambda needs at least one value".into());
    }
    for (i, a) in args.lambda.iter().enumerate() {
        if args.lambda[..i].iter().any(|b| file_stem(*a) == file_stem(*b)) {
            return invalid(format!("--lambda lists {a} twice"));
        }
    }
    if args.grid_points < 2 {
        return invalid("--grid-points must be at least 2".into());
    }
    if args.max_iter == 0 {
        return invalid("--max-iter must be positive".into());
    }
    if args.engine.normalize_objective {
        return invalid("--normalize-objective is not supported when fitting policies".into());
    }
    let feature_map = match args.features {
        FeatureArg::Intercept => FeatureMap::Intercept,
        FeatureArg::Linear => FeatureMap::Linear,
        FeatureArg::Polynomial if args.degree >= 1 => FeatureMap::Polynomial { degree: args.degree },
        FeatureArg::Polynomial => return invalid("--degree must be at least 1".into()),
    };

    let (dataset, nuisances) = load(&args.data)?;
    let Setting::JointPo { m: 2, l } = dataset.setting else {
        return invalid("policies are fitted in the joint-po setting with two arms".into());
    };
    let utilities = args
        .lambda
        .iter()
        .map(|&lambda| utility(&args.utility, l, lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let engine = resolve_engine(&args.engine, EngineArg::Entropic, dataset.n())?;
    if matches!(engine.engine, Engine::LogSumExp { .. }) {
        return invalid("policies are fitted with the bfs or entropic engine".into());
    }
    Ok(PolicyPlan {
        args: args.clone(),
        dataset,
        nuisances,
        utilities,
        engine,
        feature_map,
    })
}

/// Returns the paths written, two per `lambda`.
pub fn execute(plan: &PolicyPlan) -> Result<Vec<PathBuf>, CliError> {
    let args = &plan.args;
    let ds = &plan.dataset;
    let nus = nuisances(ds, &plan.nuisances)?;
    let levels = ds.setting.levels();
    let covariates = ds.covariates.len();
    let config = OptimizerConfig {
        restarts: args.restarts,
        seed: substream(args.data.seed, STREAM_RESTARTS, 0),
        max_iter: args.max_iter,
        ..OptimizerConfig::default()
    };
    let init = LogisticPolicy::zeros(plan.feature_map, covariates);
    let eval_config = EstimatorConfig::new(plan.engine.engine, args.alpha);
    let grid = covariate_grid(ds, args.grid_points);

    create_dir(&args.output)?;
    let mut written = Vec::new();
    for utility in &plan.utilities {
        let problem = PolicyProblem::regret(levels, utility.clone(), ds.observations.clone(), &nus)?;
        let fit = match plan.engine.engine {
            Engine::Entropic { eta } => fit_policy_entropic(&problem, eta, &init, &config)?,
            _ => fit_policy_bfs(&problem, &init, &config)?,
        };
        let evaluation = evaluate_policy(&problem, &fit.policy, &eval_config)?;
        let stem = file_stem(utility.lambda);
        let json = args.output.join(format!("{stem}.json"));
        let csv_path = args.output.join(format!("{stem}.csv"));
        let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
        let mut header: Vec<&str> = ds.covariates.iter().map(String::as_str).collect();
        header.push("pi");
        writer.write_record(&header).map_err(|e| CliError::io(&csv_path, e))?;
        for x in &grid {
            let mut record: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            record.push(fit.policy.probability(x).to_string());
            writer.write_record(&record).map_err(|e| CliError::io(&csv_path, e))?;
        }
        writer.flush().map_err(|e| CliError::io(&csv_path, e))?;
        println!(
            "lambda {}: regret upper bound {:.6} (CI upper {:.6}), best start {} of {}",
            utility.lambda,
            evaluation.theta_u,
            evaluation.ci.1,
            fit.best_restart,
            fit.n_restarts
        );
        let output = PolicyOutput {
            lambda: utility.lambda,
            utilities: utility.utilities.clone(),
            engine: plan.engine.name().into(),
            hyperparameter: plan.engine.hyperparameter(),
            schedule: plan.engine.schedule.map(String::from),
            nuisance_source: plan.nuisances.label().into(),
            seed: args.data.seed,
            fit,
            evaluation,
        };
        write_json(&json, &output)?;
        written.push(json);
        written.push(csv_path);
    }
    Ok(written)
}

/// Evenly spaced values of the first covariate over its observed range, with any
/// other covariates held at their sample means.
fn covariate_grid(ds: &Dataset, points: usize) -> Vec<Vec<f64>> {
    let n = ds.n() as f64;
    let p = ds.covariates.len();
    let means: Vec<f64> = (0..p)
        .map(|k| ds.observations.iter().map(|o| o.x[k]).sum::<f64>() / n)
        .collect();
    let (lo, hi) = ds
        .observations
        .iter()
        .map(|o| o.x[0])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (0..points)
        .map(|i| {
            let mut x = means.clone();
            x[0] = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            x
        })
        .collect()
}
