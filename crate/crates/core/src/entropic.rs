//! Entropy-regularised conditional LPs.
//!
//! The regularised upper problem maximises `<c, p> - (1/eta) sum p_k (log p_k - 1)`
//! over `{p : A p = b}` and the lower problem minimises
//! `<c, p> + (1/eta) sum p_k (log p_k - 1)`. Both have solutions of the form
//!
//! ```text
//! p = exp(A' mu + s * eta * c),   s = +1 (upper), -1 (lower)
//! ```
//!
//! where `mu` minimises the smooth convex dual `sum_k p_k(mu) - <mu, b>`. The
//! reported dual vector follows the usual sign convention: `lambda_U = mu` so that
//! `p_U = exp(A' lambda_U + eta c)`, and `lambda_L = -mu` so that
//! `p_L = exp(-A' lambda_L - eta c)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, ConstraintMatrix, LpError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropicError {
    #[error("b is not strictly inside the feasibility cone")]
    NotStrictlyFeasible,
    #[error("Newton iteration stalled after {iterations} iterations (gradient norm {grad_norm:e})")]
    NewtonStalled { iterations: usize, grad_norm: f64 },
    #[error("A diag(p) A' is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("eta must be positive and finite (got {0})")]
    InvalidEta(f64),
    #[error("margins are not valid probability vectors with equal totals: {0}")]
    MarginMismatch(String),
    #[error("sample size must be at least 2 (got {0})")]
    SampleTooSmall(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Lower,
    Upper,
}

impl Direction {
    /// +1 for the upper bound, -1 for the lower bound.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Lower => -1.0,
            Direction::Upper => 1.0,
        }
    }

    pub fn sense(self) -> lp::Sense {
        match self {
            Direction::Lower => lp::Sense::Minimize,
            Direction::Upper => lp::Sense::Maximize,
        }
    }

    pub const BOTH: [Direction; 2] = [Direction::Lower, Direction::Upper];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Relative gradient tolerance; the absolute threshold is `tol * (1 + |b|_inf)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest accepted condition number of `A diag(p) A'`.
    pub condition_cap: f64,
    /// Run the strict-interior LP before solving.
    pub check_interior: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            condition_cap: 1e14,
            check_interior: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EntropicSolution {
    pub eta: f64,
    pub direction: Direction,
    pub dual: DVector<f64>,
    pub primal: DVector<f64>,
    /// `<c, p>` (the unregularised objective at the regularised solution).
    pub value: f64,
    /// K x J.
    pub jac_b: DMatrix<f64>,
    /// K x K.
    pub jac_c: DMatrix<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub condition_number: f64,
}

/// Solves the regularised problem with the default Newton settings.
pub fn solve_entropic_dual(
    matrix: &Arc<ConstraintMatrix>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    eta: f64,
    direction: Direction,
) -> Result<EntropicSolution, EntropicError> {
    solve_entropic_dual_with(matrix, b, c, eta, direction, &NewtonConfig::default())
}

pub fn solve_entropic_dual_with(
    matrix: &Arc<ConstraintMatrix>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    eta: f64,
    direction: Direction,
    config: &NewtonConfig,
) -> Result<EntropicSolution, EntropicError> {
    check_inputs(matrix, b, c, eta)?;
    if config.check_interior {
        let margin = lp::interior_margin(matrix, b)?;
        let tol = 1e-12 * (1.0 + b.amax());
        if margin.is_none_or(|t| t <= tol) {
            return Err(EntropicError::NotStrictlyFeasible);
        }
    }
    let a = matrix.matrix();
    let s = direction.sign();
    let scaled_c = c * (s * eta);
    let mut mu = DVector::zeros(a.nrows());
    if let Some(r) = matrix.sum_row() {
        mu[r] = b[r].ln() - log_sum_exp(scaled_c.iter().copied());
    }
    let (mu, iterations, grad_norm) = newton(a, b, &scaled_c, mu, config)?;
    finish(matrix, c, eta, direction, mu, iterations, grad_norm, config)
}

/// Starts Newton from a previously reported dual vector (same direction) and
/// skips the interior check; for repeated solves with a fixed `b`.
pub fn solve_entropic_dual_from(
    matrix: &Arc<ConstraintMatrix>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    eta: f64,
    direction: Direction,
    warm_dual: &DVector<f64>,
    config: &NewtonConfig,
) -> Result<EntropicSolution, EntropicError> {
    check_inputs(matrix, b, c, eta)?;
    if warm_dual.len() != matrix.rows() || warm_dual.iter().any(|v| !v.is_finite()) {
        return solve_entropic_dual_with(
            matrix,
            b,
            c,
            eta,
            direction,
            &NewtonConfig {
                check_interior: false,
                ..*config
            },
        );
    }
    let a = matrix.matrix();
    let s = direction.sign();
    let mu = warm_dual * s;
    let (mu, iterations, grad_norm) = newton(a, b, &(c * (s * eta)), mu, config)?;
    finish(matrix, c, eta, direction, mu, iterations, grad_norm, config)
}

fn check_inputs(
    matrix: &ConstraintMatrix,
    b: &DVector<f64>,
    c: &DVector<f64>,
    eta: f64,
) -> Result<(), EntropicError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(EntropicError::InvalidEta(eta));
    }
    if b.len() != matrix.rows() || c.len() != matrix.cols() {
        return Err(LpError::Dimension(format!(
            "b has length {}, c has length {}; expected {} and {}",
            b.len(),
            c.len(),
            matrix.rows(),
            matrix.cols()
        ))
        .into());
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite("b").into());
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite("c").into());
    }
    Ok(())
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn primal_of(a: &DMatrix<f64>, scaled_c: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    let mut z = a.tr_mul(mu);
    z += scaled_c;
    z.map(f64::exp)
}

fn dual_objective(p: &DVector<f64>, mu: &DVector<f64>, b: &DVector<f64>) -> f64 {
    p.sum() - mu.dot(b)
}

/// Damped Newton on the dual with Armijo backtracking.
fn newton(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    scaled_c: &DVector<f64>,
    mut mu: DVector<f64>,
    config: &NewtonConfig,
) -> Result<(DVector<f64>, usize, f64), EntropicError> {
    let tol = config.tol * (1.0 + b.amax());
    let mut p = primal_of(a, scaled_c, &mu);
    let mut f = dual_objective(&p, &mu, b);
    if !f.is_finite() {
        return Err(EntropicError::NewtonStalled {
            iterations: 0,
            grad_norm: f64::INFINITY,
        });
    }
    let mut iterations = 0;
    loop {
        let grad = a * &p - b;
        let gnorm = grad.amax();
        if gnorm <= tol {
            // Polish: near the optimum Newton converges quadratically, so a few
            // full steps reach round-off cheaply.
            let mut gnorm = gnorm;
            for _ in 0..3 {
                let grad = a * &p - b;
                let Some(step) = damped_step(&weighted_gram(a, &p), &grad, 0.0) else {
                    break;
                };
                let trial = &mu + &step;
                let p_trial = primal_of(a, scaled_c, &trial);
                let g_trial = (a * &p_trial - b).amax();
                if !(g_trial < gnorm) {
                    break;
                }
                mu = trial;
                p = p_trial;
                gnorm = g_trial;
            }
            return Ok((mu, iterations, gnorm));
        }
        if iterations >= config.max_iter {
            return Err(EntropicError::NewtonStalled {
                iterations,
                grad_norm: gnorm,
            });
        }
        iterations += 1;

        let hess = weighted_gram(a, &p);
        let Some(step) = damped_step(&hess, &grad, 0.0) else {
            return Err(EntropicError::NewtonStalled {
                iterations,
                grad_norm: gnorm,
            });
        };
        let slope = grad.dot(&step);
        if -slope <= 1e-12 * (1.0 + f.abs()) {
            // The predicted decrease is below round-off in the objective, so
            // judge the full Newton step by the gradient instead.
            let trial = &mu + &step;
            let p_trial = primal_of(a, scaled_c, &trial);
            let g_trial = (a * &p_trial - b).amax();
            if !(g_trial.is_finite() && g_trial < gnorm) {
                return Err(EntropicError::NewtonStalled {
                    iterations,
                    grad_norm: gnorm,
                });
            }
            f = dual_objective(&p_trial, &trial, b);
            mu = trial;
            p = p_trial;
            continue;
        }
        // Pure Newton first; when its line search fails on a badly conditioned
        // Hessian, blend towards steepest descent with a growing diagonal shift.
        let scale = hess.diagonal().amax().max(gnorm);
        let mut accepted = false;
        for level in 0..12 {
            let tau = if level == 0 { 0.0 } else { scale * 1e-10 * 100f64.powi(level - 1) };
            let Some(step) = damped_step(&hess, &grad, tau) else {
                continue;
            };
            let slope = grad.dot(&step);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let trial = &mu + &step * t;
                let p_trial = primal_of(a, scaled_c, &trial);
                let f_trial = dual_objective(&p_trial, &trial, b);
                if f_trial.is_finite() && f_trial <= f + 1e-4 * t * slope {
                    mu = trial;
                    p = p_trial;
                    f = f_trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            return Err(EntropicError::NewtonStalled {
                iterations,
                grad_norm: gnorm,
            });
        }
    }
}

/// `-(H + tau I)^{-1} g`, regularising a numerically semidefinite `H`.
fn damped_step(hess: &DMatrix<f64>, grad: &DVector<f64>, tau: f64) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let shifted = hess + DMatrix::identity(n, n) * tau;
    if let Some(ch) = shifted.clone().cholesky() {
        return Some(-ch.solve(grad));
    }
    let shift = 1e-12 * hess.diagonal().amax().max(1e-300);
    (shifted + DMatrix::identity(n, n) * shift)
        .cholesky()
        .map(|ch| -ch.solve(grad))
}

/// `A diag(p) A'`.
fn weighted_gram(a: &DMatrix<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    let mut ap = a.clone();
    for (k, mut col) in ap.column_iter_mut().enumerate() {
        col *= p[k];
    }
    ap * a.transpose()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    matrix: &ConstraintMatrix,
    c: &DVector<f64>,
    eta: f64,
    direction: Direction,
    mu: DVector<f64>,
    iterations: usize,
    grad_norm: f64,
    config: &NewtonConfig,
) -> Result<EntropicSolution, EntropicError> {
    let a = matrix.matrix();
    let primal = primal_of(a, &(c * (direction.sign() * eta)), &mu);
    let (jac_b, jac_c, condition_number) =
        jacobians_with_cap(a, &primal, eta, direction, config.condition_cap)?;
    let dual = match direction {
        Direction::Upper => mu,
        Direction::Lower => -mu,
    };
    Ok(EntropicSolution {
        eta,
        direction,
        dual,
        value: c.dot(&primal),
        primal,
        jac_b,
        jac_c,
        iterations,
        grad_norm,
        condition_number,
    })
}

/// Sensitivities of `p = exp(A' mu + s eta c)` under `A p = b`:
///
/// ```text
/// d p / d b = P A' Q,                 Q = (A P A')^{-1}
/// d p / d c = s eta (P - P A' Q A P)
/// ```
///
/// with `P = diag(p)` and `s` the direction sign.
pub fn jacobians(
    a: &DMatrix<f64>,
    primal: &DVector<f64>,
    eta: f64,
    direction: Direction,
) -> Result<(DMatrix<f64>, DMatrix<f64>), EntropicError> {
    let (jb, jc, _) = jacobians_with_cap(a, primal, eta, direction, NewtonConfig::default().condition_cap)?;
    Ok((jb, jc))
}

fn jacobians_with_cap(
    a: &DMatrix<f64>,
    primal: &DVector<f64>,
    eta: f64,
    direction: Direction,
    cap: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64), EntropicError> {
    let gram = weighted_gram(a, primal);
    let eig = gram.clone().symmetric_eigen();
    let hi = eig.eigenvalues.amax();
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= cap) {
        return Err(EntropicError::IllConditioned(cond));
    }
    let q = gram
        .cholesky()
        .ok_or(EntropicError::IllConditioned(cond))?
        .inverse();
    Ok(assemble_jacobians(a, primal, &q, eta, direction, cond))
}

fn assemble_jacobians(
    a: &DMatrix<f64>,
    primal: &DVector<f64>,
    q: &DMatrix<f64>,
    eta: f64,
    direction: Direction,
    cond: f64,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let k = a.ncols();
    // P A' (K x J)
    let mut pa_t = a.transpose();
    for (row, mut r) in pa_t.row_iter_mut().enumerate() {
        r *= primal[row];
    }
    let jac_b = &pa_t * q;
    let mut jac_c = -(&jac_b * pa_t.transpose());
    for i in 0..k {
        jac_c[(i, i)] += primal[i];
    }
    jac_c *= direction.sign() * eta;
    (jac_b, jac_c, cond)
}

/// Regularisation schedule for `eta` as a function of sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EtaSchedule {
    /// `kappa * ln n`
    Log { kappa: f64 },
    /// `kappa * sqrt n`
    Sqrt { kappa: f64 },
    Fixed(f64),
}

impl EtaSchedule {
    pub const DEFAULT_KAPPA: f64 = 2.0;

    pub fn log() -> Self {
        EtaSchedule::Log {
            kappa: Self::DEFAULT_KAPPA,
        }
    }

    pub fn sqrt() -> Self {
        EtaSchedule::Sqrt {
            kappa: Self::DEFAULT_KAPPA,
        }
    }
}

pub fn eta_schedule(n: f64, schedule: EtaSchedule) -> Result<f64, EntropicError> {
    if !(n >= 2.0) {
        return Err(EntropicError::SampleTooSmall(n.max(0.0) as usize));
    }
    Ok(match schedule {
        EtaSchedule::Log { kappa } => kappa * n.ln(),
        EtaSchedule::Sqrt { kappa } => kappa * n.sqrt(),
        EtaSchedule::Fixed(v) => v,
    })
}

/// Soft-max over the vertex values of an LP.
#[derive(Debug, Clone)]
pub struct LogSumExpBound {
    pub value: f64,
    /// Vertices entering the soft-max, each with its weight and value.
    pub vertices: Vec<lp::Vertex>,
    pub weights: Vec<f64>,
    pub vertex_values: Vec<f64>,
}

impl LogSumExpBound {
    /// Derivative of the bound with respect to `b`, through every vertex `A_B^{-1} b`.
    pub fn grad_b(&self, a: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>, EntropicError> {
        let mut g = DVector::zeros(a.nrows());
        for (v, &w) in self.vertices.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let a_b = a.select_columns(v.basis.iter());
            let c_b = DVector::from_iterator(v.basis.len(), v.basis.iter().map(|&i| c[i]));
            let y = a_b
                .transpose()
                .lu()
                .solve(&c_b)
                .ok_or(LpError::SingularBasis)?;
            g += y * w;
        }
        Ok(g)
    }

    /// Derivative of the bound with respect to `c`: the weighted average vertex.
    pub fn grad_c(&self, k: usize) -> DVector<f64> {
        let mut g = DVector::zeros(k);
        for (v, &w) in self.vertices.iter().zip(&self.weights) {
            g += &v.primal * w;
        }
        g
    }
}

/// `(1 / (s xi)) log sum_B exp(s xi <c, A_B^{-1} b>)` over every feasible basis,
/// with `s = +1` for the upper bound and `-1` for the lower bound.
pub fn logsumexp_bound(
    matrix: &ConstraintMatrix,
    b: &DVector<f64>,
    c: &DVector<f64>,
    xi: f64,
    direction: Direction,
) -> Result<LogSumExpBound, EntropicError> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(EntropicError::InvalidEta(xi));
    }
    let vertices = lp::enumerate_feasible_bases(matrix, b)?;
    if vertices.is_empty() {
        return Err(EntropicError::NotStrictlyFeasible);
    }
    let s = direction.sign() * xi;
    let values: Vec<f64> = vertices.iter().map(|v| c.dot(&v.primal)).collect();
    let lse = log_sum_exp(values.iter().map(|v| s * v));
    let weights: Vec<f64> = values.iter().map(|v| (s * v - lse).exp()).collect();
    Ok(LogSumExpBound {
        value: lse / s,
        vertices,
        weights,
        vertex_values: values,
    })
}

/// Constraint matrix for a two-margin table with `rows x cols` cells, cell index
/// `i * cols + j`: row-margin rows for levels `1..rows`, column-margin rows for
/// levels `1..cols`, then an all-ones row.
pub fn two_margin_matrix(rows: usize, cols: usize) -> Result<ConstraintMatrix, LpError> {
    let j = (rows - 1) + (cols - 1) + 1;
    let k = rows * cols;
    let mut a = DMatrix::zeros(j, k);
    for i in 0..rows {
        for jj in 0..cols {
            let cell = i * cols + jj;
            if i >= 1 {
                a[(i - 1, cell)] = 1.0;
            }
            if jj >= 1 {
                a[(rows - 1 + jj - 1, cell)] = 1.0;
            }
            a[(j - 1, cell)] = 1.0;
        }
    }
    ConstraintMatrix::new(a)
}

/// Right-hand side of [`two_margin_matrix`] for the given margins.
pub fn two_margin_rhs(margins_row: &[f64], margins_col: &[f64]) -> DVector<f64> {
    let total: f64 = margins_row.iter().sum();
    let mut b = Vec::with_capacity(margins_row.len() + margins_col.len() - 1);
    b.extend_from_slice(&margins_row[1..]);
    b.extend_from_slice(&margins_col[1..]);
    b.push(total);
    DVector::from_vec(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// Matrix scaling for the two-margin case.
///
/// `cost` is `rows x cols`; the returned primal, dual and Jacobians are expressed
/// in the standard form of [`two_margin_matrix`]. After the scaling iterations
/// converge, the dual is polished by Newton on that standard form. Zero margins
/// force the corresponding cells to zero; in that case the polish is skipped, the
/// dual entries of empty levels are `-inf`, and the Jacobians use the
/// pseudo-inverse of `A diag(p) A'`.
pub fn solve_sinkhorn(
    margins_row: &[f64],
    margins_col: &[f64],
    cost: &DMatrix<f64>,
    eta: f64,
    direction: Direction,
) -> Result<EntropicSolution, EntropicError> {
    solve_sinkhorn_with(
        margins_row,
        margins_col,
        cost,
        eta,
        direction,
        &SinkhornConfig::default(),
    )
}

pub fn solve_sinkhorn_with(
    margins_row: &[f64],
    margins_col: &[f64],
    cost: &DMatrix<f64>,
    eta: f64,
    direction: Direction,
    config: &SinkhornConfig,
) -> Result<EntropicSolution, EntropicError> {
    validate_margins(margins_row, margins_col, cost)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(EntropicError::InvalidEta(eta));
    }
    let (nr, nc) = cost.shape();
    let s = direction.sign() * eta;
    let shift = cost.iter().map(|&v| s * v).fold(f64::NEG_INFINITY, f64::max);
    let kernel = cost.map(|v| (s * v - shift).exp());

    let mut u = DVector::from_element(nr, 1.0);
    let mut v = DVector::from_element(nc, 1.0);
    let r = DVector::from_column_slice(margins_row);
    let col = DVector::from_column_slice(margins_col);
    let mut iterations = 0;
    loop {
        let ku = kernel.tr_mul(&u);
        for j in 0..nc {
            v[j] = if col[j] > 0.0 { col[j] / ku[j] } else { 0.0 };
        }
        let kv = &kernel * &v;
        for i in 0..nr {
            u[i] = if r[i] > 0.0 { r[i] / kv[i] } else { 0.0 };
        }
        iterations += 1;
        // Row margins hold exactly after the u-update; check the columns.
        let col_now = kernel.tr_mul(&u).component_mul(&v);
        let viol = (col_now - &col).amax();
        if viol <= config.tol || iterations >= config.max_iter {
            break;
        }
    }

    let a_matrix = Arc::new(two_margin_matrix(nr, nc)?);
    let b = two_margin_rhs(margins_row, margins_col);
    let c = DVector::from_iterator(nr * nc, (0..nr).flat_map(|i| (0..nc).map(move |j| (i, j))).map(|(i, j)| cost[(i, j)]));
    let log_u: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let log_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();

    let all_positive = log_u.iter().chain(&log_v).all(|x| x.is_finite());
    if all_positive {
        // p_ij = exp(log u_i + log v_j + s*eta*C_ij - shift) written as A' mu + s eta c.
        let mut mu = DVector::zeros(a_matrix.rows());
        for i in 1..nr {
            mu[i - 1] = log_u[i] - log_u[0];
        }
        for j in 1..nc {
            mu[nr - 1 + j - 1] = log_v[j] - log_v[0];
        }
        let last = a_matrix.rows() - 1;
        mu[last] = log_u[0] + log_v[0] - shift;
        let scaled_c = &c * s;
        let newton_cfg = NewtonConfig::default();
        let (mu, newton_iters, grad_norm) =
            newton(a_matrix.matrix(), &b, &scaled_c, mu, &newton_cfg)?;
        return finish(
            &a_matrix,
            &c,
            eta,
            direction,
            mu,
            iterations + newton_iters,
            grad_norm,
            &newton_cfg,
        );
    }

    // Forced zeros: keep the scaling solution and use a pseudo-inverse.
    let mut primal = DVector::zeros(nr * nc);
    for i in 0..nr {
        for j in 0..nc {
            primal[i * nc + j] = u[i] * kernel[(i, j)] * v[j];
        }
    }
    let a = a_matrix.matrix();
    let grad_norm = (a * &primal - &b).amax();
    let gram = weighted_gram(a, &primal);
    let q = gram
        .clone()
        .pseudo_inverse(1e-12 * gram.amax().max(1e-300))
        .map_err(|_| EntropicError::IllConditioned(f64::INFINITY))?;
    let (jac_b, jac_c, _) = assemble_jacobians(a, &primal, &q, eta, direction, f64::INFINITY);
    let mut mu = DVector::zeros(a_matrix.rows());
    for i in 1..nr {
        mu[i - 1] = log_u[i] - log_u[0];
    }
    for j in 1..nc {
        mu[nr - 1 + j - 1] = log_v[j] - log_v[0];
    }
    let last = a_matrix.rows() - 1;
    mu[last] = log_u[0] + log_v[0] - shift;
    let dual = match direction {
        Direction::Upper => mu,
        Direction::Lower => -mu,
    };
    Ok(EntropicSolution {
        eta,
        direction,
        dual,
        value: c.dot(&primal),
        primal,
        jac_b,
        jac_c,
        iterations,
        grad_norm,
        condition_number: f64::INFINITY,
    })
}

fn validate_margins(
    margins_row: &[f64],
    margins_col: &[f64],
    cost: &DMatrix<f64>,
) -> Result<(), EntropicError> {
    let mismatch = |msg: String| Err(EntropicError::MarginMismatch(msg));
    if margins_row.len() < 2 || margins_col.len() < 2 {
        return mismatch("each margin needs at least two levels".into());
    }
    if cost.shape() != (margins_row.len(), margins_col.len()) {
        return mismatch(format!(
            "cost is {:?}, margins have lengths {} and {}",
            cost.shape(),
            margins_row.len(),
            margins_col.len()
        ));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite("cost").into());
    }
    if margins_row
        .iter()
        .chain(margins_col)
        .any(|&m| !(m.is_finite() && m >= 0.0))
    {
        return mismatch("negative or non-finite margin entry".into());
    }
    let tr: f64 = margins_row.iter().sum();
    let tc: f64 = margins_col.iter().sum();
    if !(tr > 0.0) || (tr - tc).abs() > 1e-9 * (1.0 + tr) {
        return mismatch(format!("totals {tr} and {tc} differ"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex(k: usize) -> Arc<ConstraintMatrix> {
        Arc::new(ConstraintMatrix::new(DMatrix::from_element(1, k, 1.0)).unwrap())
    }

    #[test]
    fn zero_cost_on_simplex_is_uniform() {
        let m = simplex(4);
        for eta in [0.1, 1.0, 30.0] {
            for dir in Direction::BOTH {
                let sol = solve_entropic_dual(
                    &m,
                    &DVector::from_element(1, 1.0),
                    &DVector::zeros(4),
                    eta,
                    dir,
                )
                .unwrap();
                for &p in sol.primal.iter() {
                    assert!((p - 0.25).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_cost_two_margins_is_product() {
        let m = Arc::new(two_margin_matrix(2, 2).unwrap());
        let b = DVector::from_column_slice(&[0.4, 0.7, 1.0]);
        let sol =
            solve_entropic_dual(&m, &b, &DVector::zeros(4), 3.0, Direction::Upper).unwrap();
        let expected = [0.6 * 0.3, 0.6 * 0.7, 0.4 * 0.3, 0.4 * 0.7];
        for (p, e) in sol.primal.iter().zip(expected) {
            assert!((p - e).abs() < 1e-9);
        }
    }

    #[test]
    fn primal_has_exponential_form() {
        let m = Arc::new(two_margin_matrix(2, 3).unwrap());
        let b = two_margin_rhs(&[0.3, 0.7], &[0.2, 0.5, 0.3]);
        let c = DVector::from_column_slice(&[0.1, -0.4, 0.9, 0.3, 0.2, -0.7]);
        let eta = 4.0;
        for dir in Direction::BOTH {
            let sol = solve_entropic_dual(&m, &b, &c, eta, dir).unwrap();
            let at_lambda = m.matrix().tr_mul(&sol.dual);
            for k in 0..6 {
                let expected = match dir {
                    Direction::Upper => (at_lambda[k] + eta * c[k]).exp(),
                    Direction::Lower => (-at_lambda[k] - eta * c[k]).exp(),
                };
                assert!((sol.primal[k] - expected).abs() < 1e-12 * (1.0 + expected));
            }
            assert!((m.matrix() * &sol.primal - &b).amax() < 1e-10);
        }
    }

    #[test]
    fn jacobians_of_square_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let p = DVector::from_column_slice(&[0.3, 0.5]);
        let (jb, jc) = jacobians(&a, &p, 2.0, Direction::Upper).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        assert!((jb - inv).amax() < 1e-12);
        assert!(jc.amax() < 1e-12);
    }

    #[test]
    fn boundary_rhs_is_rejected() {
        let m = Arc::new(two_margin_matrix(2, 2).unwrap());
        let b = DVector::from_column_slice(&[0.0, 0.7, 1.0]);
        let err = solve_entropic_dual(&m, &b, &DVector::zeros(4), 1.0, Direction::Lower)
            .unwrap_err();
        assert_eq!(err, EntropicError::NotStrictlyFeasible);
    }

    #[test]
    fn eta_schedule_values() {
        let n = 10f64.exp();
        assert!((eta_schedule(n, EtaSchedule::log()).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(eta_schedule(10.0, EtaSchedule::Fixed(100.0)).unwrap(), 100.0);
        assert!((eta_schedule(10000.0, EtaSchedule::sqrt()).unwrap() - 200.0).abs() < 1e-12);
        assert!(eta_schedule(1.0, EtaSchedule::log()).is_err());
    }

    #[test]
    fn logsumexp_single_basis_is_exact() {
        let a = ConstraintMatrix::new(DMatrix::<f64>::identity(2, 2)).unwrap();
        let b = DVector::from_column_slice(&[0.3, 0.7]);
        let c = DVector::from_column_slice(&[1.0, 2.0]);
        for xi in [0.1, 5.0] {
            let v = logsumexp_bound(&a, &b, &c, xi, Direction::Upper).unwrap();
            assert!((v.value - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_large_xi_matches_simplex() {
        let a = ConstraintMatrix::new(DMatrix::from_element(1, 3, 1.0)).unwrap();
        let b = DVector::from_element(1, 1.0);
        let c = DVector::from_column_slice(&[0.3, 0.1, 0.5]);
        let lo = logsumexp_bound(&a, &b, &c, 1e6, Direction::Lower).unwrap();
        assert!((lo.value - 0.1).abs() < 1e-6);
        let hi = logsumexp_bound(&a, &b, &c, 1e6, Direction::Upper).unwrap();
        assert!((hi.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn sinkhorn_zero_cost_and_point_mass() {
        let cost = DMatrix::zeros(2, 2);
        let sol = solve_sinkhorn(&[0.6, 0.4], &[0.3, 0.7], &cost, 1.0, Direction::Upper).unwrap();
        let expected = [0.18, 0.42, 0.12, 0.28];
        for (p, e) in sol.primal.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        let sol = solve_sinkhorn(&[1.0, 0.0], &[1.0, 0.0], &cost, 1.0, Direction::Lower).unwrap();
        assert!((sol.primal[0] - 1.0).abs() < 1e-14);
        assert!(sol.primal.iter().skip(1).all(|&p| p == 0.0));
    }

    #[test]
    fn sinkhorn_rejects_mismatched_totals() {
        let cost = DMatrix::zeros(2, 2);
        let err = solve_sinkhorn(&[0.6, 0.4], &[0.3, 0.8], &cost, 1.0, Direction::Upper);
        assert!(matches!(err, Err(EntropicError::MarginMismatch(_))));
    }
}
