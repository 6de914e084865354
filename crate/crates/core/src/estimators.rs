//! De-biased estimates of the lower and upper bounds.
//!
//! Each observation contributes one term per direction. For the vertex engine the
//! term is `<c + phi_c, p_B> + <c, A_B^{-1} phi_b>` with `B` the plug-in optimal
//! basis; for the entropic engine it is `<c + phi_c, p> + <c, J_b phi_b + J_c phi_c>`;
//! for the log-sum-exp engine it is the soft-max value plus its first-order
//! correction. Bounds are sample means of the terms and variances are their
//! (1/n-normalised) sample variances.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::crossfit::{cross_fit, FoldPlan, NuisanceLearner};
use crate::entropic::{
    self, Direction, EntropicError, EntropicSolution, NewtonConfig,
};
use crate::lp::{
    self, basis_apply, probe_suboptimality, solve_simplex, ConstraintMatrix, LpError, LpStatus,
    ProbeMethod, StandardFormLp,
};
use crate::problems::{LpInputs, NuisanceValues, Observation, ProblemError, ProblemSpec, Setting};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Entropic(#[from] EntropicError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("every observation ({n}) produced an infeasible LP")]
    AllInfeasible { n: usize },
    #[error("observation {index} produced an infeasible LP")]
    Infeasible { index: usize },
    #[error("observation {index}: solver failed: {source}")]
    SolverFailure {
        index: usize,
        #[source]
        source: SolverError,
    },
    #[error("observation {index}: {source}")]
    Problem {
        index: usize,
        #[source]
        source: ProblemError,
    },
    #[error("second-stage regression design is singular: {0}")]
    DegenerateDesign(String),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Setup(#[from] ProblemError),
}

impl EstimatorError {
    fn solver(index: usize, err: impl Into<SolverError>) -> Self {
        EstimatorError::SolverFailure {
            index,
            source: err.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Engine {
    Bfs,
    Entropic { eta: f64 },
    LogSumExp { xi: f64 },
}

impl Engine {
    pub fn label(&self) -> String {
        match self {
            Engine::Bfs => "bfs".into(),
            Engine::Entropic { eta } => format!("entropic(eta={eta})"),
            Engine::LogSumExp { xi } => format!("lse(xi={xi})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub engine: Engine,
    pub alpha: f64,
    /// Abort on the first infeasible observation instead of excluding it.
    pub strict: bool,
    /// Divide `eta` by `|c(x)|_inf` per observation (equivalently, rescale `c` to
    /// unit sup-norm before regularising).
    pub normalize_objective: bool,
    /// Sub-optimality probe for the vertex engine's diagnostics.
    pub probe: Option<ProbeMethod>,
    /// Solve two-margin entropic problems by matrix scaling instead of Newton.
    pub use_sinkhorn: bool,
    pub newton: NewtonConfig,
}

impl EstimatorConfig {
    pub fn new(engine: Engine, alpha: f64) -> Self {
        Self {
            engine,
            alpha,
            strict: false,
            normalize_objective: false,
            probe: Some(ProbeMethod::ReducedCostBound),
            use_sinkhorn: false,
            newton: NewtonConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EstimatorError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        match self.engine {
            Engine::Entropic { eta } if !(eta > 0.0 && eta.is_finite()) => Err(
                EstimatorError::InvalidConfig(format!("eta must be positive, got {eta}")),
            ),
            Engine::LogSumExp { xi } if !(xi > 0.0 && xi.is_finite()) => Err(
                EstimatorError::InvalidConfig(format!("xi must be positive, got {xi}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean probed sub-optimality gap lower bound over used observations (vertex engine).
    pub mean_gap_lower_bound_l: Option<f64>,
    pub mean_gap_lower_bound_u: Option<f64>,
    /// Largest condition number of `A diag(p) A'` (entropic engine).
    pub max_condition_number: Option<f64>,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    /// Observations whose plug-in optimum was degenerate (vertex engine).
    pub n_degenerate: usize,
    /// True when the estimated lower bound exceeds the estimated upper bound.
    pub bounds_crossed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub engine: Engine,
    pub theta_l: f64,
    pub theta_u: f64,
    pub v_l: f64,
    pub v_u: f64,
    pub n: usize,
    pub n_used: usize,
    pub n_excluded_infeasible: usize,
    pub alpha: f64,
    pub ci: (f64, f64),
    /// Influence contributions of the used observations, in data order.
    pub per_obs_l: Vec<f64>,
    pub per_obs_u: Vec<f64>,
    /// Data index of each entry of `per_obs_l` / `per_obs_u`.
    pub used_indices: Vec<usize>,
    pub excluded_indices: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl BoundsReport {
    pub fn se_l(&self) -> f64 {
        (self.v_l / self.n_used as f64).sqrt()
    }

    pub fn se_u(&self) -> f64 {
        (self.v_u / self.n_used as f64).sqrt()
    }
}

/// Upper `alpha` quantile of the standard normal.
pub fn z_quantile(alpha: f64) -> f64 {
    if alpha == 0.5 {
        return 0.0;
    }
    Normal::standard().inverse_cdf(1.0 - alpha)
}

/// `(theta_l - z sqrt(v_l / n), theta_u + z sqrt(v_u / n))` with `z = z_{1 - alpha}`.
pub fn combine_wald_interval(
    theta_l: f64,
    v_l: f64,
    theta_u: f64,
    v_u: f64,
    n: usize,
    alpha: f64,
) -> (f64, f64) {
    let z = z_quantile(alpha);
    let n = n as f64;
    (theta_l - z * (v_l / n).sqrt(), theta_u + z * (v_u / n).sqrt())
}

/// Mean and 1/n-normalised variance.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Result of solving one observation in one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub value: f64,
    /// The plug-in bound at this observation (no correction).
    pub plug_in: f64,
    pub iterations: usize,
    pub gap_lower_bound: Option<f64>,
    pub condition_number: Option<f64>,
    pub degenerate: bool,
}

/// Solves one conditional LP in one direction and returns the de-biased term, or
/// `None` when the estimated constraints are infeasible.
pub fn observation_contribution(
    matrix: &Arc<ConstraintMatrix>,
    inputs: &LpInputs,
    direction: Direction,
    config: &EstimatorConfig,
    setting: Option<Setting>,
) -> Result<Option<Contribution>, SolverError> {
    match config.engine {
        Engine::Bfs => bfs_contribution(matrix, inputs, direction, config.probe),
        Engine::Entropic { eta } => {
            let eta = effective_eta(eta, &inputs.c, config.normalize_objective);
            let sol = match solve_entropic(matrix, inputs, eta, direction, config, setting) {
                Ok(sol) => sol,
                Err(EntropicError::NotStrictlyFeasible) => {
                    // Distinguish infeasible (excluded) from boundary (an error).
                    return match lp::check_feasibility(matrix, &inputs.b)? {
                        lp::Feasibility::Infeasible => Ok(None),
                        lp::Feasibility::Feasible => {
                            Err(EntropicError::NotStrictlyFeasible.into())
                        }
                    };
                }
                Err(e) => return Err(e.into()),
            };
            Ok(Some(entropic_contribution(&sol, inputs)))
        }
        Engine::LogSumExp { xi } => {
            let bound = match entropic::logsumexp_bound(matrix, &inputs.b, &inputs.c, xi, direction)
            {
                Ok(b) => b,
                Err(EntropicError::NotStrictlyFeasible) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let gb = bound.grad_b(matrix.matrix(), &inputs.c)?;
            let gc = bound.grad_c(matrix.cols());
            Ok(Some(Contribution {
                value: bound.value + gb.dot(&inputs.phi_b) + gc.dot(&inputs.phi_c),
                plug_in: bound.value,
                iterations: bound.vertices.len(),
                gap_lower_bound: None,
                condition_number: None,
                degenerate: false,
            }))
        }
    }
}

pub(crate) fn effective_eta(eta: f64, c: &DVector<f64>, normalize: bool) -> f64 {
    if !normalize {
        return eta;
    }
    let scale = c.amax();
    if scale > 0.0 {
        eta / scale
    } else {
        eta
    }
}

pub(crate) fn solve_entropic(
    matrix: &Arc<ConstraintMatrix>,
    inputs: &LpInputs,
    eta: f64,
    direction: Direction,
    config: &EstimatorConfig,
    setting: Option<Setting>,
) -> Result<EntropicSolution, EntropicError> {
    if config.use_sinkhorn {
        if let Some(Setting::JointPo { m: 2, l }) = setting {
            let b = &inputs.b;
            let mut row = vec![0.0; l];
            let mut col = vec![0.0; l];
            for level in 1..l {
                row[level] = b[level - 1];
                col[level] = b[l - 1 + level - 1];
            }
            row[0] = b[b.len() - 1] - row[1..].iter().sum::<f64>();
            col[0] = b[b.len() - 1] - col[1..].iter().sum::<f64>();
            if row.iter().chain(&col).any(|&v| v <= 0.0) {
                return Err(EntropicError::NotStrictlyFeasible);
            }
            let cost = DMatrix::from_row_slice(l, l, inputs.c.as_slice());
            return entropic::solve_sinkhorn(&row, &col, &cost, eta, direction);
        }
    }
    entropic::solve_entropic_dual_with(matrix, &inputs.b, &inputs.c, eta, direction, &config.newton)
}

pub(crate) fn entropic_contribution(sol: &EntropicSolution, inputs: &LpInputs) -> Contribution {
    let correction = &sol.jac_b * &inputs.phi_b + &sol.jac_c * &inputs.phi_c;
    let value = (&inputs.c + &inputs.phi_c).dot(&sol.primal) + inputs.c.dot(&correction);
    Contribution {
        value,
        plug_in: sol.value,
        iterations: sol.iterations,
        gap_lower_bound: None,
        condition_number: Some(sol.condition_number),
        degenerate: false,
    }
}

fn bfs_contribution(
    matrix: &Arc<ConstraintMatrix>,
    inputs: &LpInputs,
    direction: Direction,
    probe: Option<ProbeMethod>,
) -> Result<Option<Contribution>, SolverError> {
    let lp = StandardFormLp::with_matrix(
        matrix.clone(),
        inputs.b.clone(),
        inputs.c.clone(),
        direction.sense(),
    )?;
    let sol = solve_simplex(&lp)?;
    match sol.status {
        LpStatus::Infeasible => return Ok(None),
        LpStatus::Unbounded => return Err(LpError::NotOptimal(LpStatus::Unbounded).into()),
        LpStatus::Optimal => {}
    }
    let primal = DVector::from_column_slice(&sol.primal);
    let correction = basis_apply(&sol.basis, matrix.matrix(), &inputs.phi_b)?;
    let value = (&inputs.c + &inputs.phi_c).dot(&primal) + inputs.c.dot(&correction);
    let gap = match probe {
        Some(method) => {
            let method = if method == ProbeMethod::VertexEnumeration
                && (matrix.cols() > lp::ENUMERATION_MAX_K || matrix.rows() > lp::ENUMERATION_MAX_J)
            {
                ProbeMethod::ReducedCostBound
            } else {
                method
            };
            Some(probe_suboptimality(&lp, &sol, method)?.gap_lower_bound)
        }
        None => None,
    };
    Ok(Some(Contribution {
        value,
        plug_in: sol.value,
        iterations: sol.pivots,
        gap_lower_bound: gap,
        condition_number: None,
        degenerate: sol.is_degenerate,
    }))
}

/// Builds the LP inputs of every observation.
pub fn assemble_inputs(
    spec: &ProblemSpec,
    data: &[Observation],
    nuisances: &[NuisanceValues],
) -> Result<Vec<LpInputs>, EstimatorError> {
    if data.len() != nuisances.len() {
        return Err(EstimatorError::InvalidConfig(format!(
            "{} observations but {} nuisance rows",
            data.len(),
            nuisances.len()
        )));
    }
    data.par_iter()
        .zip(nuisances.par_iter())
        .enumerate()
        .map(|(index, (obs, nu))| {
            spec.inputs(obs, nu)
                .map_err(|source| EstimatorError::Problem { index, source })
        })
        .collect()
}

/// Estimates both bounds from precomputed per-observation LP inputs.
pub fn estimate_from_inputs(
    matrix: &Arc<ConstraintMatrix>,
    inputs: &[LpInputs],
    config: &EstimatorConfig,
    setting: Option<Setting>,
) -> Result<BoundsReport, EstimatorError> {
    config.validate()?;
    let n = inputs.len();
    if n < 2 {
        return Err(EstimatorError::InvalidConfig(format!(
            "need at least two observations, got {n}"
        )));
    }
    type Pair = Option<(Contribution, Contribution)>;
    let results: Vec<Result<Pair, EstimatorError>> = inputs
        .par_iter()
        .enumerate()
        .map(|(index, inp)| {
            let lower = observation_contribution(matrix, inp, Direction::Lower, config, setting)
                .map_err(|e| EstimatorError::solver(index, e))?;
            let Some(lower) = lower else { return Ok(None) };
            let upper = observation_contribution(matrix, inp, Direction::Upper, config, setting)
                .map_err(|e| EstimatorError::solver(index, e))?;
            Ok(upper.map(|u| (lower, u)))
        })
        .collect();

    let mut used = Vec::new();
    let mut excluded = Vec::new();
    let mut lowers = Vec::new();
    let mut uppers = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r? {
            Some((l, u)) => {
                used.push(index);
                lowers.push(l);
                uppers.push(u);
            }
            None => {
                if config.strict {
                    return Err(EstimatorError::Infeasible { index });
                }
                excluded.push(index);
            }
        }
    }
    if used.is_empty() {
        return Err(EstimatorError::AllInfeasible { n });
    }
    if used.len() < 2 {
        return Err(EstimatorError::InvalidConfig(
            "fewer than two feasible observations".into(),
        ));
    }
    Ok(build_report(config, n, used, excluded, &lowers, &uppers))
}

fn build_report(
    config: &EstimatorConfig,
    n: usize,
    used: Vec<usize>,
    excluded: Vec<usize>,
    lowers: &[Contribution],
    uppers: &[Contribution],
) -> BoundsReport {
    let per_obs_l: Vec<f64> = lowers.iter().map(|c| c.value).collect();
    let per_obs_u: Vec<f64> = uppers.iter().map(|c| c.value).collect();
    let (theta_l, v_l) = mean_and_variance(&per_obs_l);
    let (theta_u, v_u) = mean_and_variance(&per_obs_u);
    let n_used = used.len();
    let ci = combine_wald_interval(theta_l, v_l, theta_u, v_u, n_used, config.alpha);

    let all = || lowers.iter().chain(uppers.iter());
    let mean_gap = |cs: &[Contribution]| -> Option<f64> {
        let gaps: Vec<f64> = cs.iter().filter_map(|c| c.gap_lower_bound).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    };
    let conds: Vec<f64> = all().filter_map(|c| c.condition_number).collect();
    let diagnostics = Diagnostics {
        mean_gap_lower_bound_l: mean_gap(lowers),
        mean_gap_lower_bound_u: mean_gap(uppers),
        max_condition_number: (!conds.is_empty())
            .then(|| conds.iter().copied().fold(0.0, f64::max))
            .filter(|v| v.is_finite()),
        mean_iterations: all().map(|c| c.iterations as f64).sum::<f64>() / (2 * n_used) as f64,
        max_iterations: all().map(|c| c.iterations).max().unwrap_or(0),
        n_degenerate: lowers
            .iter()
            .zip(uppers)
            .filter(|(l, u)| l.degenerate || u.degenerate)
            .count(),
        bounds_crossed: theta_l > theta_u,
    };
    BoundsReport {
        engine: config.engine,
        theta_l,
        theta_u,
        v_l,
        v_u,
        n,
        n_used,
        n_excluded_infeasible: excluded.len(),
        alpha: config.alpha,
        ci,
        per_obs_l,
        per_obs_u,
        used_indices: used,
        excluded_indices: excluded,
        diagnostics,
    }
}

/// Estimates both bounds with nuisances already aligned to `data`.
pub fn estimate_bounds(
    spec: &ProblemSpec,
    data: &[Observation],
    nuisances: &[NuisanceValues],
    config: &EstimatorConfig,
) -> Result<BoundsReport, EstimatorError> {
    let inputs = assemble_inputs(spec, data, nuisances)?;
    estimate_from_inputs(&spec.matrix, &inputs, config, Some(spec.setting))
}

pub fn estimate_bounds_bfs(
    spec: &ProblemSpec,
    data: &[Observation],
    nuisances: &[NuisanceValues],
    alpha: f64,
) -> Result<BoundsReport, EstimatorError> {
    estimate_bounds(spec, data, nuisances, &EstimatorConfig::new(Engine::Bfs, alpha))
}

pub fn estimate_bounds_entropic(
    spec: &ProblemSpec,
    data: &[Observation],
    nuisances: &[NuisanceValues],
    eta: f64,
    alpha: f64,
) -> Result<BoundsReport, EstimatorError> {
    estimate_bounds(
        spec,
        data,
        nuisances,
        &EstimatorConfig::new(Engine::Entropic { eta }, alpha),
    )
}

pub fn estimate_bounds_lse(
    spec: &ProblemSpec,
    data: &[Observation],
    nuisances: &[NuisanceValues],
    xi: f64,
    alpha: f64,
) -> Result<BoundsReport, EstimatorError> {
    let (k, j) = (spec.matrix.cols(), spec.matrix.rows());
    if k > lp::ENUMERATION_MAX_K || j > lp::ENUMERATION_MAX_J {
        return Err(EstimatorError::solver(
            0,
            LpError::TooLargeForEnumeration { k, j },
        ));
    }
    estimate_bounds(
        spec,
        data,
        nuisances,
        &EstimatorConfig::new(Engine::LogSumExp { xi }, alpha),
    )
}

/// Cross-fits the nuisances with `learner` and then estimates.
pub fn estimate_bounds_crossfit(
    spec: &ProblemSpec,
    data: &[Observation],
    learner: &dyn NuisanceLearner,
    plan: &FoldPlan,
    config: &EstimatorConfig,
) -> Result<BoundsReport, EstimatorError> {
    let nuisances = cross_fit(learner, data, plan, spec.clip_floor)?;
    estimate_bounds(spec, data, &nuisances, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regression {
    PolynomialLs { degree: usize },
    Binned { n_bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBoundsReport {
    pub v_grid: Vec<f64>,
    pub theta_l_of_v: Vec<f64>,
    pub theta_u_of_v: Vec<f64>,
    pub regression: Regression,
    /// Grid points where the fitted lower curve lies above the upper curve.
    pub n_crossings: usize,
}

/// Regresses the per-observation contributions of `report` on a scalar `v`.
///
/// `v` is indexed like the original data; only the used observations enter.
pub fn conditional_bounds_from_report(
    report: &BoundsReport,
    v: &[f64],
    v_grid: &[f64],
    regression: Regression,
) -> Result<ConditionalBoundsReport, EstimatorError> {
    if v.len() != report.n {
        return Err(EstimatorError::InvalidConfig(format!(
            "conditioning variable has {} entries, expected {}",
            v.len(),
            report.n
        )));
    }
    let vs: Vec<f64> = report.used_indices.iter().map(|&i| v[i]).collect();
    let (theta_l_of_v, theta_u_of_v) = match regression {
        Regression::PolynomialLs { degree } => (
            polynomial_fit(&vs, &report.per_obs_l, degree, v_grid)?,
            polynomial_fit(&vs, &report.per_obs_u, degree, v_grid)?,
        ),
        Regression::Binned { n_bins } => (
            binned_fit(&vs, &report.per_obs_l, n_bins, v_grid)?,
            binned_fit(&vs, &report.per_obs_u, n_bins, v_grid)?,
        ),
    };
    let n_crossings = theta_l_of_v
        .iter()
        .zip(&theta_u_of_v)
        .filter(|(l, u)| l > u)
        .count();
    Ok(ConditionalBoundsReport {
        v_grid: v_grid.to_vec(),
        theta_l_of_v,
        theta_u_of_v,
        regression,
        n_crossings,
    })
}

/// Estimates the marginal bounds and regresses their contributions on `v(obs)`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_bounds(
    spec: &ProblemSpec,
    data: &[Observation],
    nuisances: &[NuisanceValues],
    config: &EstimatorConfig,
    v_extractor: impl Fn(&Observation) -> f64,
    v_grid: &[f64],
    regression: Regression,
) -> Result<(BoundsReport, ConditionalBoundsReport), EstimatorError> {
    let report = estimate_bounds(spec, data, nuisances, config)?;
    let v: Vec<f64> = data.iter().map(v_extractor).collect();
    let cond = conditional_bounds_from_report(&report, &v, v_grid, regression)?;
    Ok((report, cond))
}

fn polynomial_fit(
    v: &[f64],
    y: &[f64],
    degree: usize,
    grid: &[f64],
) -> Result<Vec<f64>, EstimatorError> {
    let n = v.len();
    let p = degree + 1;
    if n < p {
        return Err(EstimatorError::DegenerateDesign(format!(
            "{n} points for a degree-{degree} polynomial"
        )));
    }
    let (mean, var) = mean_and_variance(v);
    let sd = var.sqrt();
    if !(sd > 0.0) && degree > 0 {
        return Err(EstimatorError::DegenerateDesign(
            "conditioning variable is constant".into(),
        ));
    }
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let design = DMatrix::from_fn(n, p, |i, j| ((v[i] - mean) / sd).powi(j as i32));
    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * scale) {
        return Err(EstimatorError::DegenerateDesign(
            "polynomial design is rank deficient".into(),
        ));
    }
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * DVector::from_column_slice(y);
    let coef = gram
        .cholesky()
        .ok_or_else(|| EstimatorError::DegenerateDesign("normal equations not positive definite".into()))?
        .solve(&rhs);
    Ok(grid
        .iter()
        .map(|&g| {
            let t = (g - mean) / sd;
            (0..p).map(|j| coef[j] * t.powi(j as i32)).sum()
        })
        .collect())
}

fn binned_fit(v: &[f64], y: &[f64], n_bins: usize, grid: &[f64]) -> Result<Vec<f64>, EstimatorError> {
    if n_bins == 0 || v.len() < n_bins {
        return Err(EstimatorError::DegenerateDesign(format!(
            "{} points for {n_bins} bins",
            v.len()
        )));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let n = v.len();
    let mut upper_edges = Vec::with_capacity(n_bins);
    let mut means = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let lo = b * n / n_bins;
        let hi = (b + 1) * n / n_bins;
        let slice = &order[lo..hi];
        means.push(slice.iter().map(|&i| y[i]).sum::<f64>() / slice.len() as f64);
        upper_edges.push(v[*slice.last().expect("non-empty bin")]);
    }
    Ok(grid
        .iter()
        .map(|&g| {
            let bin = upper_edges
                .iter()
                .position(|&e| g <= e)
                .unwrap_or(n_bins - 1);
            means[bin]
        })
        .collect())
}
