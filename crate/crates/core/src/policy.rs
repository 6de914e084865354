//! Treatment rules that optimise an estimated bound.
//!
//! A logistic rule `pi(x) = 1 / (1 + exp(-<w, f(x)>))` is scored by the de-biased
//! average of a bound whose objective vector depends on `pi(x)`. The entropic engine
//! gives a smooth score that is optimised by gradient descent; the vertex engine is
//! optimised by Nelder-Mead.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::entropic::{
    solve_entropic_dual_from, solve_entropic_dual_with, Direction, EntropicError, NewtonConfig,
};
use crate::estimators::{
    estimate_from_inputs, observation_contribution, BoundsReport, Engine, EstimatorConfig,
    EstimatorError, SolverError,
};
use crate::lp::{self, ConstraintMatrix};
use crate::problems::{
    power_law_regret_vector, power_law_regret_vector_dpi, JointPoObjective, LpInputs,
    NuisanceValues, Observation, ProblemError, ProblemSpec, Setting, UtilitySpec,
};

/// Treatment probabilities are clipped to `[PI_CLIP, 1 - PI_CLIP]` inside the objective.
pub const PI_CLIP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("analytic gradient disagrees with finite differences (relative error {rel_error:e} at weights {weights:?})")]
    GradientCheckFailed { rel_error: f64, weights: Vec<f64> },
    #[error("objective is not finite at weights {0:?}")]
    NonFiniteObjective(Vec<f64>),
    #[error("observation {index}: {source}")]
    Solver { index: usize, source: SolverError },
    #[error("no observation has strictly feasible constraints")]
    NoUsableObservations,
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMap {
    /// `(1)`: a constant treatment probability.
    Intercept,
    /// `(1, x)`.
    Linear,
    /// `(1, x, x^2, ..., x^degree)` per covariate.
    Polynomial { degree: usize },
}

impl FeatureMap {
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![1.0];
        match *self {
            FeatureMap::Intercept => {}
            FeatureMap::Linear => out.extend_from_slice(x),
            FeatureMap::Polynomial { degree } => {
                for power in 1..=degree {
                    out.extend(x.iter().map(|v| v.powi(power as i32)));
                }
            }
        }
        out
    }

    pub fn dim(&self, covariates: usize) -> usize {
        match *self {
            FeatureMap::Intercept => 1,
            FeatureMap::Linear => 1 + covariates,
            FeatureMap::Polynomial { degree } => 1 + degree * covariates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticPolicy {
    pub weights: Vec<f64>,
    pub feature_map: FeatureMap,
}

impl LogisticPolicy {
    pub fn new(weights: Vec<f64>, feature_map: FeatureMap) -> Self {
        Self {
            weights,
            feature_map,
        }
    }

    pub fn zeros(feature_map: FeatureMap, covariates: usize) -> Self {
        Self::new(vec![0.0; feature_map.dim(covariates)], feature_map)
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.feature_map
            .features(x)
            .iter()
            .zip(&self.weights)
            .map(|(f, w)| f * w)
            .sum()
    }

    /// Unclipped `pi(x)`.
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Objective vector `c(x, pi)` and its derivative in `pi`. Objectives built this
/// way do not depend on the nuisances, so their correction term is zero.
pub trait PolicyObjective: Send + Sync {
    fn c_and_dpi(&self, obs: &Observation, pi: f64) -> (DVector<f64>, DVector<f64>);
}

/// Power-law regret relative to the best treatment, two arms.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretObjective {
    pub setting: Setting,
    pub utility: UtilitySpec,
}

impl PolicyObjective for RegretObjective {
    fn c_and_dpi(&self, _obs: &Observation, pi: f64) -> (DVector<f64>, DVector<f64>) {
        (
            power_law_regret_vector(&self.setting, &self.utility, pi),
            power_law_regret_vector_dpi(&self.setting, &self.utility, pi),
        )
    }
}

/// Whether the bound is an upper bound to push down (regret) or a lower bound to
/// push up (welfare).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyGoal {
    MinimizeUpper,
    MaximizeLower,
}

impl PolicyGoal {
    pub fn direction(self) -> Direction {
        match self {
            PolicyGoal::MinimizeUpper => Direction::Upper,
            PolicyGoal::MaximizeLower => Direction::Lower,
        }
    }

    /// Factor turning the bound into the minimised quantity.
    pub fn sign(self) -> f64 {
        match self {
            PolicyGoal::MinimizeUpper => 1.0,
            PolicyGoal::MaximizeLower => -1.0,
        }
    }
}

/// Data, constraint vectors and corrections shared by every candidate rule.
pub struct PolicyProblem {
    pub matrix: Arc<ConstraintMatrix>,
    pub setting: Setting,
    pub objective: Arc<dyn PolicyObjective>,
    pub observations: Vec<Observation>,
    pub b: Vec<DVector<f64>>,
    pub phi_b: Vec<DVector<f64>>,
    /// Indices whose constraints are strictly feasible.
    pub interior: Vec<usize>,
}

impl PolicyProblem {
    /// Regret problem for a joint potential-outcome setting with two arms.
    pub fn regret(
        levels: usize,
        utility: UtilitySpec,
        observations: Vec<Observation>,
        nuisances: &[NuisanceValues],
    ) -> Result<Self, PolicyError> {
        let spec = ProblemSpec::joint_po(
            2,
            levels,
            JointPoObjective::PowerLawRegret {
                utility: utility.clone(),
                pi: 0.5,
            },
        )?;
        let objective = Arc::new(RegretObjective {
            setting: spec.setting,
            utility,
        });
        Self::new(&spec, objective, observations, nuisances)
    }

    pub fn new(
        spec: &ProblemSpec,
        objective: Arc<dyn PolicyObjective>,
        observations: Vec<Observation>,
        nuisances: &[NuisanceValues],
    ) -> Result<Self, PolicyError> {
        if observations.len() != nuisances.len() {
            return Err(PolicyError::InvalidConfig(format!(
                "{} observations but {} nuisance rows",
                observations.len(),
                nuisances.len()
            )));
        }
        let pairs: Vec<(DVector<f64>, DVector<f64>)> = observations
            .iter()
            .zip(nuisances)
            .map(|(o, nu)| spec.b_and_phi(o, nu))
            .collect::<Result<_, _>>()?;
        let tol = |b: &DVector<f64>| 1e-12 * (1.0 + b.amax());
        let interior: Vec<usize> = pairs
            .par_iter()
            .enumerate()
            .filter_map(|(i, (b, _))| match lp::interior_margin(&spec.matrix, b) {
                Ok(Some(t)) if t > tol(b) => Some(Ok(i)),
                Ok(_) => None,
                Err(e) => Some(Err(PolicyError::Solver {
                    index: i,
                    source: SolverError::Lp(e),
                })),
            })
            .collect::<Result<_, _>>()?;
        let (b, phi_b) = pairs.into_iter().unzip();
        Ok(Self {
            matrix: spec.matrix.clone(),
            setting: spec.setting,
            objective,
            observations,
            b,
            phi_b,
            interior,
        })
    }

    pub fn covariates(&self) -> usize {
        self.observations.first().map_or(0, |o| o.x.len())
    }

    fn clipped_pi(&self, policy: &LogisticPolicy, i: usize) -> (f64, Vec<f64>, bool) {
        let feat = policy.feature_map.features(&self.observations[i].x);
        let raw = sigmoid(feat.iter().zip(&policy.weights).map(|(f, w)| f * w).sum());
        let clipped = raw.clamp(PI_CLIP, 1.0 - PI_CLIP);
        (clipped, feat, clipped != raw)
    }

    /// Inputs of every observation under the frozen rule.
    pub fn inputs(&self, policy: &LogisticPolicy) -> Vec<LpInputs> {
        (0..self.observations.len())
            .map(|i| {
                let (pi, _, _) = self.clipped_pi(policy, i);
                let (c, _) = self.objective.c_and_dpi(&self.observations[i], pi);
                LpInputs {
                    b: self.b[i].clone(),
                    phi_b: self.phi_b[i].clone(),
                    phi_c: DVector::zeros(c.len()),
                    c,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub goal: PolicyGoal,
    /// Random starts in addition to the supplied initial rule.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once an accepted step improves the objective by less than this
    /// (relative to `1 + |f|`).
    pub tol: f64,
    pub audit_points: usize,
    pub audit_step: f64,
    pub audit_rel_tol: f64,
    pub newton: NewtonConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            goal: PolicyGoal::MinimizeUpper,
            restarts: 10,
            seed: 0,
            max_iter: 1000,
            tol: 1e-12,
            audit_points: 20,
            audit_step: 1e-5,
            audit_rel_tol: 1e-4,
            newton: NewtonConfig {
                check_interior: false,
                ..NewtonConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFitReport {
    pub policy: LogisticPolicy,
    /// Minimised objective (the bound times the goal sign) at every accepted
    /// iterate of the best restart.
    pub objective_path: Vec<f64>,
    /// Final minimised objective of each start, initial rule first.
    pub restart_objectives: Vec<f64>,
    pub n_restarts: usize,
    pub best_restart: usize,
    pub final_objective: f64,
    /// The bound itself at the returned rule.
    pub bound: f64,
    pub goal: PolicyGoal,
    pub engine: Engine,
    /// Worst relative gradient error seen by the start-up audit.
    pub audit_max_rel_error: Option<f64>,
}

/// Entropic score and gradient at one rule.
struct EntropicEval {
    value: f64,
    grad: Vec<f64>,
    duals: Vec<DVector<f64>>,
}

struct EntropicScorer<'a> {
    problem: &'a PolicyProblem,
    eta: f64,
    goal: PolicyGoal,
    newton: NewtonConfig,
    feature_map: FeatureMap,
}

impl EntropicScorer<'_> {
    /// Minimised objective and gradient in the weights. `warm` holds duals of the
    /// interior observations from a nearby rule.
    fn eval(&self, weights: &[f64], warm: Option<&[DVector<f64>]>) -> Result<EntropicEval, PolicyError> {
        let p = self.problem;
        let policy = LogisticPolicy::new(weights.to_vec(), self.feature_map);
        let direction = self.goal.direction();
        let terms: Vec<(f64, Vec<f64>, DVector<f64>)> = p
            .interior
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let (pi, feat, clipped) = p.clipped_pi(&policy, i);
                let (c, dc) = p.objective.c_and_dpi(&p.observations[i], pi);
                let (value, dvalue, dual) = entropic_term(
                    &p.matrix,
                    &p.b[i],
                    &p.phi_b[i],
                    &c,
                    &dc,
                    self.eta,
                    direction,
                    warm.map(|w| &w[slot]),
                    &self.newton,
                )
                .map_err(|e| PolicyError::Solver {
                    index: i,
                    source: e.into(),
                })?;
                let dpi = if clipped { 0.0 } else { pi * (1.0 - pi) };
                let grad = feat.iter().map(|f| dvalue * dpi * f).collect();
                Ok((value, grad, dual))
            })
            .collect::<Result<_, PolicyError>>()?;
        let m = terms.len() as f64;
        let s = self.goal.sign();
        let mut value = 0.0;
        let mut grad = vec![0.0; weights.len()];
        let mut duals = Vec::with_capacity(terms.len());
        for (v, g, d) in terms {
            value += v;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
            duals.push(d);
        }
        value *= s / m;
        grad.iter_mut().for_each(|g| *g *= s / m);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFiniteObjective(weights.to_vec()));
        }
        Ok(EntropicEval { value, grad, duals })
    }
}

/// De-biased entropic term `<c, p + Jb phi_b>` and its derivative along `dc`.
///
/// With `Q = (A P A')^{-1}`, `g = A' Q phi_b` and `w = Q A P c`, the gradient in
/// `c` is `p + Jb phi_b + Jc c + Jc ((c - A' w) * g)`.
#[allow(clippy::too_many_arguments)]
fn entropic_term(
    matrix: &Arc<ConstraintMatrix>,
    b: &DVector<f64>,
    phi_b: &DVector<f64>,
    c: &DVector<f64>,
    dc: &DVector<f64>,
    eta: f64,
    direction: Direction,
    warm: Option<&DVector<f64>>,
    newton: &NewtonConfig,
) -> Result<(f64, f64, DVector<f64>), EntropicError> {
    let sol = match warm {
        Some(w) => solve_entropic_dual_from(matrix, b, c, eta, direction, w, newton)?,
        None => solve_entropic_dual_with(matrix, b, c, eta, direction, newton)?,
    };
    let a = matrix.matrix();
    let p = &sol.primal;
    let jb_phi = &sol.jac_b * phi_b;
    let value = c.dot(p) + c.dot(&jb_phi);

    let mut ap = a.clone();
    for (k, mut col) in ap.column_iter_mut().enumerate() {
        col *= p[k];
    }
    let gram = &ap * a.transpose();
    let chol = gram
        .cholesky()
        .ok_or(EntropicError::IllConditioned(f64::INFINITY))?;
    let g = a.tr_mul(&chol.solve(phi_b));
    let aw = a.tr_mul(&sol.jac_b.tr_mul(c));
    let h = (c - aw).component_mul(&g);
    let grad_c = p + jb_phi + &sol.jac_c * (c + h);
    Ok((value, grad_c.dot(dc), sol.dual))
}

fn random_starts(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn validate_fit(problem: &PolicyProblem, init: &LogisticPolicy, config: &OptimizerConfig) -> Result<(), PolicyError> {
    if init.weights.len() != init.feature_map.dim(problem.covariates()) {
        return Err(PolicyError::InvalidConfig(format!(
            "policy has {} weights, feature map needs {}",
            init.weights.len(),
            init.feature_map.dim(problem.covariates())
        )));
    }
    if init.weights.iter().any(|w| !w.is_finite()) {
        return Err(PolicyError::InvalidConfig("initial weights must be finite".into()));
    }
    if config.max_iter == 0 {
        return Err(PolicyError::InvalidConfig("max_iter must be positive".into()));
    }
    if problem.interior.is_empty() {
        return Err(PolicyError::NoUsableObservations);
    }
    Ok(())
}

/// Gradient descent with Armijo backtracking on the entropic score, from the
/// supplied rule and `config.restarts` standard normal starts.
pub fn fit_policy_entropic(
    problem: &PolicyProblem,
    eta: f64,
    init: &LogisticPolicy,
    config: &OptimizerConfig,
) -> Result<PolicyFitReport, PolicyError> {
    validate_fit(problem, init, config)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(PolicyError::InvalidConfig(format!("eta must be positive (got {eta})")));
    }
    let scorer = EntropicScorer {
        problem,
        eta,
        goal: config.goal,
        newton: config.newton,
        feature_map: init.feature_map,
    };
    let dim = init.weights.len();

    let audit_max_rel_error = if config.audit_points > 0 {
        Some(gradient_audit(&scorer, dim, config)?)
    } else {
        None
    };

    let mut starts = vec![init.weights.clone()];
    starts.extend(random_starts(dim, config.restarts, config.seed));
    let runs: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|w0| descend(&scorer, w0.clone(), config))
        .collect::<Result<_, _>>()?;
    finish_report(problem, runs, init.feature_map, config.goal, Engine::Entropic { eta }, audit_max_rel_error)
}

fn finish_report(
    _problem: &PolicyProblem,
    runs: Vec<(Vec<f64>, Vec<f64>)>,
    feature_map: FeatureMap,
    goal: PolicyGoal,
    engine: Engine,
    audit_max_rel_error: Option<f64>,
) -> Result<PolicyFitReport, PolicyError> {
    let restart_objectives: Vec<f64> = runs
        .iter()
        .map(|(_, path)| *path.last().expect("paths start with the initial value"))
        .collect();
    let best_restart = restart_objectives
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v < restart_objectives[best] { k } else { best });
    let (weights, objective_path) = runs.into_iter().nth(best_restart).expect("best run exists");
    let final_objective = restart_objectives[best_restart];
    Ok(PolicyFitReport {
        policy: LogisticPolicy::new(weights, feature_map),
        objective_path,
        n_restarts: restart_objectives.len(),
        restart_objectives,
        best_restart,
        final_objective,
        bound: goal.sign() * final_objective,
        goal,
        engine,
        audit_max_rel_error,
    })
}

/// Returns the final weights and the accepted objective values.
fn descend(
    scorer: &EntropicScorer<'_>,
    mut w: Vec<f64>,
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let mut current = scorer.eval(&w, None)?;
    let mut path = vec![current.value];
    let mut step = 1.0;
    for _ in 0..config.max_iter {
        let g2: f64 = current.grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&current.grad).map(|(wi, gi)| wi - step * gi).collect();
            match scorer.eval(&trial, Some(&current.duals)) {
                Ok(next) if next.value <= current.value - 1e-4 * step * g2 => {
                    accepted = Some((trial, next));
                    break;
                }
                // A failed solve far from the current rule is treated like a
                // rejected step.
                Ok(_) | Err(PolicyError::Solver { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, next)) = accepted else { break };
        let gain = current.value - next.value;
        w = trial;
        current = next;
        path.push(current.value);
        step = (step * 2.0).min(1e6);
        if gain < config.tol * (1.0 + current.value.abs()) {
            break;
        }
    }
    Ok((w, path))
}

/// Central finite differences of the score at random weights; returns the worst
/// relative error or fails above `audit_rel_tol`.
fn gradient_audit(scorer: &EntropicScorer<'_>, dim: usize, config: &OptimizerConfig) -> Result<f64, PolicyError> {
    let points = random_starts(dim, config.audit_points, config.seed ^ 0xA0D1_7000);
    let h = config.audit_step;
    let mut worst: f64 = 0.0;
    for w in points {
        let analytic = scorer.eval(&w, None)?.grad;
        let mut numeric = vec![0.0; dim];
        for j in 0..dim {
            let mut up = w.clone();
            let mut down = w.clone();
            up[j] += h;
            down[j] -= h;
            numeric[j] = (scorer.eval(&up, None)?.value - scorer.eval(&down, None)?.value) / (2.0 * h);
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(1e-8, f64::max);
        let rel = diff / scale;
        if rel > config.audit_rel_tol {
            return Err(PolicyError::GradientCheckFailed {
                rel_error: rel,
                weights: w,
            });
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// The vertex-engine score (minimised sign) of a rule.
pub fn bfs_score(problem: &PolicyProblem, policy: &LogisticPolicy, goal: PolicyGoal) -> Result<f64, PolicyError> {
    let direction = goal.direction();
    let mut config = EstimatorConfig::new(Engine::Bfs, 0.05);
    config.probe = None;
    let inputs = problem.inputs(policy);
    let terms: Vec<Option<f64>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, inp)| {
            observation_contribution(&problem.matrix, inp, direction, &config, Some(problem.setting))
                .map(|c| c.map(|c| c.value))
                .map_err(|source| PolicyError::Solver { index: i, source })
        })
        .collect::<Result<_, _>>()?;
    let used: Vec<f64> = terms.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(PolicyError::NoUsableObservations);
    }
    let value = goal.sign() * used.iter().sum::<f64>() / used.len() as f64;
    if !value.is_finite() {
        return Err(PolicyError::NonFiniteObjective(policy.weights.clone()));
    }
    Ok(value)
}

/// Nelder-Mead on the vertex-engine score from the supplied rule and
/// `config.restarts` standard normal starts.
pub fn fit_policy_bfs(
    problem: &PolicyProblem,
    init: &LogisticPolicy,
    config: &OptimizerConfig,
) -> Result<PolicyFitReport, PolicyError> {
    validate_fit(problem, init, config)?;
    let dim = init.weights.len();
    let mut starts = vec![init.weights.clone()];
    starts.extend(random_starts(dim, config.restarts, config.seed));
    let score = |w: &[f64]| bfs_score(problem, &LogisticPolicy::new(w.to_vec(), init.feature_map), config.goal);
    let runs: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|w0| nelder_mead(&score, w0, config.max_iter, config.tol))
        .collect::<Result<_, _>>()?;
    finish_report(problem, runs, init.feature_map, config.goal, Engine::Bfs, None)
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction and shrink 1/2)
/// with a unit initial simplex. The path holds the best value per iteration.
pub fn nelder_mead(
    f: &(dyn Fn(&[f64]) -> Result<f64, PolicyError> + Sync),
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)?));
    for j in 0..n {
        let mut x = x0.to_vec();
        x[j] += 1.0;
        let v = f(&x)?;
        simplex.push((x, v));
    }
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    sort(&mut simplex);
    let mut path = vec![simplex[0].1];
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    for _ in 0..max_iter {
        let spread = simplex[n].1 - simplex[0].1;
        if spread <= tol * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected = lerp(&centroid, &worst.0, -1.0);
        let fr = f(&reflected)?;
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst.0, -2.0);
            let fe = f(&expanded)?;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (target, ft) = if fr < worst.1 { (&reflected, fr) } else { (&worst.0, worst.1) };
            let contracted = lerp(&centroid, target, 0.5);
            let fc = f(&contracted)?;
            if fc < ft {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x = lerp(&best, &vertex.0, 0.5);
                    let v = f(&x)?;
                    *vertex = (x, v);
                }
            }
        }
        sort(&mut simplex);
        path.push(simplex[0].1);
    }
    let (x, _) = simplex.swap_remove(0);
    Ok((x, path))
}

/// Bounds for a frozen rule through the estimators.
pub fn evaluate_policy(
    problem: &PolicyProblem,
    policy: &LogisticPolicy,
    config: &EstimatorConfig,
) -> Result<BoundsReport, PolicyError> {
    if policy.weights.len() != policy.feature_map.dim(problem.covariates()) {
        return Err(PolicyError::InvalidConfig("weight and feature dimensions differ".into()));
    }
    let inputs = problem.inputs(policy);
    Ok(estimate_from_inputs(&problem.matrix, &inputs, config, Some(problem.setting))?)
}

/// Synthetic designs with a single covariate `X ~ U(-2, 2)`, three ordered outcome
/// levels from an ordered probit, and treatment randomised with probability 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyDgp {
    /// Treatment lowers the outcome index by one latent unit at every `x`.
    HarmfulEffect,
    /// The latent treatment effect is `1.5 x`.
    MonotoneBenefit,
    /// `Y(1)` and `Y(0)` have the same distribution at every `x`.
    NoEffect,
}

pub const POLICY_DGP_LEVELS: usize = 3;
const PROBIT_CUTS: [f64; 2] = [-0.5, 0.5];

impl PolicyDgp {
    fn latent_means(self, x: f64) -> (f64, f64) {
        let base = 0.3 * x;
        match self {
            PolicyDgp::HarmfulEffect => (base, base - 1.0),
            PolicyDgp::MonotoneBenefit => (base, base + 1.5 * x),
            PolicyDgp::NoEffect => (base, base),
        }
    }

    fn level_probs(mean: f64) -> Vec<f64> {
        let normal = Normal::standard();
        let lo = normal.cdf(PROBIT_CUTS[0] - mean);
        let hi = normal.cdf(PROBIT_CUTS[1] - mean);
        vec![lo, hi - lo, 1.0 - hi]
    }

    pub fn true_nuisances(self, x: f64) -> NuisanceValues {
        let (m0, m1) = self.latent_means(x);
        NuisanceValues {
            outcome: vec![Self::level_probs(m0), Self::level_probs(m1)],
            propensity: vec![0.5, 0.5],
            treatment_given_instrument: None,
        }
    }

    /// Observations with the true nuisances.
    pub fn generate(self, n: usize, seed: u64) -> (Vec<Observation>, Vec<NuisanceValues>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
        let cut = |latent: f64| PROBIT_CUTS.iter().filter(|&&c| latent > c).count();
        let mut obs = Vec::with_capacity(n);
        let mut nus = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.random_range(-2.0..2.0);
            let d = usize::from(rng.random::<f64>() < 0.5);
            let (m0, m1) = self.latent_means(x);
            let mean = if d == 1 { m1 } else { m0 };
            let y = cut(mean + normal.sample(&mut rng));
            obs.push(Observation {
                x: vec![x],
                d,
                y,
                z: None,
            });
            nus.push(self.true_nuisances(x));
        }
        (obs, nus)
    }
}
