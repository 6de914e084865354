use std::path::PathBuf;

use clp_bounds::entropic::{solve_entropic_dual, Direction};
use clp_bounds::lp::{
    interior_margin, max_l1_norm, probe_suboptimality, solve_simplex, ProbeMethod, StandardFormLp,
    ENUMERATION_MAX_J, ENUMERATION_MAX_K,
};
use clp_bounds::problems::ProblemSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, load, nuisances, objective_name, problem_spec, setting_name, write_csv_rows, write_json, NuisancePlan};
use crate::args::DiagnoseArgs;
use crate::data::Dataset;
use crate::error::CliError;

/// One row of `diagnose.csv`. Solver fields are empty for infeasible rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDiagnostics {
    /// 1-based data row.
    pub row: usize,
    pub feasible: bool,
    /// Largest `t` with a feasible `p >= t`; zero on the boundary of the cone.
    pub interior_margin: Option<f64>,
    pub theta_l: Option<f64>,
    pub theta_u: Option<f64>,
    /// Lower bound on the distance from the optimum to the next vertex value.
    pub gap_l: Option<f64>,
    pub gap_u: Option<f64>,
    /// Condition number of `A diag(p) A'` at the regularised solution.
    pub condition_l: Option<f64>,
    pub condition_u: Option<f64>,
    /// Largest total mass over the feasible set.
    pub r1: Option<f64>,
    /// Plug-in lower and upper bounds coincide.
    pub point_identified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub input: String,
    pub setting: String,
    pub objective: String,
    pub nuisance_source: String,
    pub eta: f64,
    pub probe: ProbeMethod,
    pub n: usize,
    pub n_infeasible: usize,
    pub fraction_infeasible: f64,
    pub n_point_identified: usize,
    pub max_condition_number: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutput {
    pub summary: DiagnoseSummary,
    pub observations: Vec<ObservationDiagnostics>,
}

pub struct DiagnosePlan {
    args: DiagnoseArgs,
    dataset: Dataset,
    nuisances: NuisancePlan,
    spec: ProblemSpec,
    eta: f64,
    probe: ProbeMethod,
}

pub fn plan(args: &DiagnoseArgs) -> Result<DiagnosePlan, CliError> {
    let (dataset, nuisances) = load(&args.data)?;
    let spec = problem_spec(dataset.setting, &args.objective)?;
    let eta = match args.eta {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(CliError::Validation(format!("--eta must be positive, got {v}"))),
        None => 2.0 * (dataset.n() as f64).ln(),
    };
    let probe = if spec.matrix.cols() <= ENUMERATION_MAX_K && spec.matrix.rows() <= ENUMERATION_MAX_J {
        ProbeMethod::VertexEnumeration
    } else {
        ProbeMethod::ReducedCostBound
    };
    Ok(DiagnosePlan {
        args: args.clone(),
        dataset,
        nuisances,
        spec,
        eta,
        probe,
    })
}

fn diagnose_row(
    plan: &DiagnosePlan,
    row: usize,
    obs: &clp_bounds::problems::Observation,
    nu: &clp_bounds::problems::NuisanceValues,
) -> Result<ObservationDiagnostics, CliError> {
    let spec = &plan.spec;
    let (b, _) = spec.b_and_phi(obs, nu).map_err(|e| row_error(row, e))?;
    let (c, _) = spec.c_and_phi(obs, nu).map_err(|e| row_error(row, e))?;
    let solver = |e: clp_bounds::lp::LpError| CliError::Solver(format!("row {row}: {e}"));
    let margin = interior_margin(&spec.matrix, &b).map_err(solver)?;
    let mut out = ObservationDiagnostics {
        row,
        feasible: margin.is_some(),
        interior_margin: margin,
        theta_l: None,
        theta_u: None,
        gap_l: None,
        gap_u: None,
        condition_l: None,
        condition_u: None,
        r1: None,
        point_identified: false,
    };
    let Some(margin) = margin else { return Ok(out) };

    let mut values = [0.0; 2];
    let mut gaps = [0.0; 2];
    for (slot, dir) in Direction::BOTH.into_iter().enumerate() {
        let lp = StandardFormLp::with_matrix(spec.matrix.clone(), b.clone(), c.clone(), dir.sense()).map_err(solver)?;
        let sol = solve_simplex(&lp).map_err(solver)?;
        values[slot] = sol.value;
        gaps[slot] = probe_suboptimality(&lp, &sol, plan.probe).map_err(solver)?.gap_lower_bound;
    }
    let scale = 1.0 + values[0].abs().max(values[1].abs());
    out.point_identified = (values[1] - values[0]).abs() <= 1e-9 * scale;
    if out.point_identified {
        gaps = [0.0, 0.0];
    }
    out.theta_l = Some(values[0]);
    out.theta_u = Some(values[1]);
    out.gap_l = Some(gaps[0]);
    out.gap_u = Some(gaps[1]);
    out.r1 = Some(max_l1_norm(&spec.matrix, &b).map_err(solver)?);
    if margin > 1e-12 {
        // Boundary rows have no regularised solution; their condition numbers stay empty.
        out.condition_l = solve_entropic_dual(&spec.matrix, &b, &c, plan.eta, Direction::Lower)
            .ok()
            .map(|s| s.condition_number);
        out.condition_u = solve_entropic_dual(&spec.matrix, &b, &c, plan.eta, Direction::Upper)
            .ok()
            .map(|s| s.condition_number);
    }
    Ok(out)
}

fn row_error(row: usize, e: clp_bounds::problems::ProblemError) -> CliError {
    match CliError::from(e) {
        CliError::Validation(m) => CliError::Validation(format!("row {row}: {m}")),
        CliError::Solver(m) => CliError::Solver(format!("row {row}: {m}")),
        CliError::Io(m) => CliError::Io(m),
    }
}

pub fn execute(plan: &DiagnosePlan) -> Result<DiagnoseOutput, CliError> {
    let ds = &plan.dataset;
    let nus = nuisances(ds, &plan.nuisances)?;
    let observations: Vec<ObservationDiagnostics> = ds
        .observations
        .par_iter()
        .zip(nus.par_iter())
        .enumerate()
        .map(|(i, (obs, nu))| diagnose_row(plan, i + 1, obs, nu))
        .collect::<Result<_, _>>()?;
    let n = observations.len();
    let n_infeasible = observations.iter().filter(|o| !o.feasible).count();
    let max_condition_number = observations
        .iter()
        .flat_map(|o| [o.condition_l, o.condition_u])
        .flatten()
        .reduce(f64::max);
    let args = &plan.args;
    let summary = DiagnoseSummary {
        input: args.data.input.display().to_string(),
        setting: setting_name(ds.setting).into(),
        objective: objective_name(&args.objective).into(),
        nuisance_source: plan.nuisances.label().into(),
        eta: plan.eta,
        probe: plan.probe,
        n,
        n_infeasible,
        fraction_infeasible: n_infeasible as f64 / n as f64,
        n_point_identified: observations.iter().filter(|o| o.point_identified).count(),
        max_condition_number,
    };
    println!(
        "{} of {} observations infeasible ({:.1}%), {} point identified",
        n_infeasible,
        n,
        100.0 * summary.fraction_infeasible,
        summary.n_point_identified
    );
    let output = DiagnoseOutput { summary, observations };
    let dir: &PathBuf = &args.output;
    create_dir(dir)?;
    write_json(&dir.join("diagnose.json"), &output)?;
    write_csv_rows(&dir.join("diagnose.csv"), &output.observations)?;
    Ok(output)
}
