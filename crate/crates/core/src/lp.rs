//! Dense standard-form linear programs.
//!
//! Every conditional LP in this crate has the shape
//!
//! ```text
//! min / max  <c, p>   subject to   A p = b,  p >= 0
//! ```
//!
//! with a shared constraint matrix `A` (J x K, full row rank) and per-observation
//! vectors `b` and `c`. The solver is a two-phase tableau simplex that reports the
//! optimal basis alongside the primal solution, since the de-biased vertex
//! estimator needs `A_B^{-1}` applied to arbitrary right-hand sides.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when deciding whether a basic variable sits at zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Largest problem for which exact vertex enumeration is allowed.
pub const ENUMERATION_MAX_K: usize = 16;
pub const ENUMERATION_MAX_J: usize = 8;

const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("constraint matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("simplex exceeded {0} pivots")]
    MaxPivotsExceeded(usize),
    #[error("basis matrix is singular")]
    SingularBasis,
    #[error("vertex enumeration limited to K <= {ENUMERATION_MAX_K}, J <= {ENUMERATION_MAX_J} (got K = {k}, J = {j})")]
    TooLargeForEnumeration { k: usize, j: usize },
    #[error("solution is not optimal ({0:?})")]
    NotOptimal(LpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// +1 for maximisation, -1 for minimisation.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Minimize => -1.0,
            Sense::Maximize => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

/// A constraint matrix that has been checked for finiteness and full row rank.
///
/// Construct once and share it (it is cheap to clone behind an `Arc`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    a: DMatrix<f64>,
    /// Index of a row of all ones, if the system has one.
    sum_row: Option<usize>,
}

impl ConstraintMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self, LpError> {
        let (j, k) = a.shape();
        if j == 0 || k == 0 {
            return Err(LpError::Dimension("empty constraint matrix".into()));
        }
        if j > k {
            return Err(LpError::Dimension(format!(
                "more constraints ({j}) than variables ({k})"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("A"));
        }
        let rank = numerical_rank(&a);
        if rank < j {
            return Err(LpError::RankDeficient { rank, rows: j });
        }
        let sum_row = (0..j).find(|&r| a.row(r).iter().all(|&v| v == 1.0));
        Ok(Self { a, sum_row })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn sum_row(&self) -> Option<usize> {
        self.sum_row
    }
}

/// Rank from a column-pivoted QR of `A'`.
fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let qr = a.transpose().col_piv_qr();
    let r = qr.r();
    let n = r.nrows().min(r.ncols());
    let scale = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let tol = scale * 1e-10 * (a.nrows().max(a.ncols()) as f64);
    (0..n).filter(|&i| r[(i, i)].abs() > tol).count()
}

/// One conditional LP instance.
#[derive(Debug, Clone)]
pub struct StandardFormLp {
    matrix: Arc<ConstraintMatrix>,
    b: DVector<f64>,
    c: DVector<f64>,
    sense: Sense,
}

impl StandardFormLp {
    /// Validates `a` (rank check included) and builds the instance.
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        sense: Sense,
    ) -> Result<Self, LpError> {
        Self::with_matrix(Arc::new(ConstraintMatrix::new(a)?), b, c, sense)
    }

    /// Builds an instance over an already-validated matrix.
    pub fn with_matrix(
        matrix: Arc<ConstraintMatrix>,
        b: DVector<f64>,
        c: DVector<f64>,
        sense: Sense,
    ) -> Result<Self, LpError> {
        if b.len() != matrix.rows() {
            return Err(LpError::Dimension(format!(
                "b has length {}, expected {}",
                b.len(),
                matrix.rows()
            )));
        }
        if c.len() != matrix.cols() {
            return Err(LpError::Dimension(format!(
                "c has length {}, expected {}",
                c.len(),
                matrix.cols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("b"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("c"));
        }
        Ok(Self { matrix, b, c, sense })
    }

    pub fn matrix(&self) -> &Arc<ConstraintMatrix> {
        &self.matrix
    }
    pub fn a(&self) -> &DMatrix<f64> {
        self.matrix.matrix()
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn tol_feas(&self) -> f64 {
        1e-9 * (1.0 + self.b.amax())
    }

    pub fn tol_opt(&self) -> f64 {
        1e-9 * (1.0 + self.c.amax())
    }
}

/// Result of [`solve_simplex`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSolution {
    pub status: LpStatus,
    pub value: f64,
    /// Empty unless `status == Optimal`.
    pub primal: Vec<f64>,
    /// Sorted column indices of the final basis (size J when optimal).
    pub basis: Vec<usize>,
    pub is_degenerate: bool,
    /// Simplex multipliers `y` solving `A_B' y = c_B`.
    pub duals: Vec<f64>,
    /// `c - A' y`; zero on the basis.
    pub reduced_costs: Vec<f64>,
    pub pivots: usize,
}

impl BasisSolution {
    fn without_solution(status: LpStatus, pivots: usize) -> Self {
        Self {
            status,
            value: f64::NAN,
            primal: Vec::new(),
            basis: Vec::new(),
            is_degenerate: false,
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            pivots,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PivotRule {
    Dantzig,
    Bland,
}

struct Tableau {
    /// rows x (ncols + 1); the last column is the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.ncols)]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.ncols + 1;
        let p = self.t[(row, col)];
        for j in 0..width {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..width {
                    let v = self.t[(row, j)];
                    if v != 0.0 {
                        self.t[(i, j)] -= f * v;
                    }
                }
                self.t[(i, col)] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &bi) in self.basis.iter().enumerate() {
            let cb = cost[bi];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.t[(i, j)];
                }
            }
        }
        d
    }

    /// Runs simplex iterations minimising `cost` over columns `0..allowed`.
    fn optimise(
        &mut self,
        cost: &[f64],
        allowed: usize,
        tol_opt: f64,
        max_pivots: usize,
        pivots: &mut usize,
    ) -> Result<LpStatus, LpError> {
        let k = allowed;
        let mut rule = PivotRule::Dantzig;
        let mut degenerate_run = 0usize;
        loop {
            let d = self.reduced_costs(cost);
            let mut in_basis = vec![false; self.ncols];
            for &b in &self.basis {
                in_basis[b] = true;
            }
            let entering = match rule {
                PivotRule::Dantzig => {
                    let mut best: Option<(usize, f64)> = None;
                    for (j, &dj) in d.iter().enumerate().take(k) {
                        if in_basis[j] || dj >= -tol_opt {
                            continue;
                        }
                        if best.is_none_or(|(_, bv)| dj < bv) {
                            best = Some((j, dj));
                        }
                    }
                    best.map(|(j, _)| j)
                }
                PivotRule::Bland => (0..k).find(|&j| !in_basis[j] && d[j] < -tol_opt),
            };
            let Some(e) = entering else {
                return Ok(LpStatus::Optimal);
            };

            // Ratio test, ties broken by smallest basic index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.basis.len() {
                let a = self.t[(i, e)];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-14
                                || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Ok(LpStatus::Unbounded);
            };

            if ratio <= DEGENERACY_TOL {
                degenerate_run += 1;
                if degenerate_run > 3 * k {
                    rule = PivotRule::Bland;
                }
            } else {
                degenerate_run = 0;
            }

            self.pivot(row, e);
            *pivots += 1;
            if *pivots > max_pivots {
                return Err(LpError::MaxPivotsExceeded(max_pivots));
            }
        }
    }
}

/// Two-phase simplex. Dantzig pricing with lowest-index tie-breaking, switching to
/// Bland's rule after `3K` consecutive degenerate pivots.
pub fn solve_simplex(lp: &StandardFormLp) -> Result<BasisSolution, LpError> {
    let a = lp.a();
    let (j, k) = a.shape();
    let tol_feas = lp.tol_feas();
    let tol_opt = lp.tol_opt();
    let max_pivots = 50 * (j + k) + 1000;

    // Tableau over [A | I] with artificial columns k..k+j.
    let ncols = k + j;
    let mut t = DMatrix::<f64>::zeros(j, ncols + 1);
    for i in 0..j {
        let flip = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for col in 0..k {
            t[(i, col)] = flip * a[(i, col)];
        }
        t[(i, k + i)] = 1.0;
        t[(i, ncols)] = flip * lp.b[i];
    }
    let mut tab = Tableau {
        t,
        basis: (k..k + j).collect(),
        ncols,
    };
    let mut pivots = 0usize;

    // Phase one: minimise the sum of artificials.
    let mut phase_one_cost = vec![0.0; ncols];
    for c in phase_one_cost.iter_mut().skip(k) {
        *c = 1.0;
    }
    tab.optimise(&phase_one_cost, k, 1e-11, max_pivots, &mut pivots)?;
    let infeasibility: f64 = (0..j)
        .filter(|&i| tab.basis[i] >= k)
        .map(|i| tab.rhs(i).abs())
        .sum();
    if infeasibility > tol_feas {
        return Ok(BasisSolution::without_solution(LpStatus::Infeasible, pivots));
    }

    // Drive remaining (zero-level) artificials out of the basis.
    for i in 0..j {
        if tab.basis[i] < k {
            continue;
        }
        let in_basis: Vec<usize> = tab.basis.clone();
        let mut best: Option<(usize, f64)> = None;
        for col in 0..k {
            if in_basis.contains(&col) {
                continue;
            }
            let v = tab.t[(i, col)].abs();
            if v > 1e-9 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((col, v));
            }
        }
        match best {
            Some((col, _)) => {
                tab.pivot(i, col);
                pivots += 1;
            }
            None => {
                return Err(LpError::RankDeficient {
                    rank: j - 1,
                    rows: j,
                })
            }
        }
    }

    // Phase two on the original objective (as a minimisation).
    let sign = -lp.sense.sign();
    let mut cost = vec![0.0; ncols];
    for col in 0..k {
        cost[col] = sign * lp.c[col];
    }
    let status = tab.optimise(&cost, k, tol_opt, max_pivots, &mut pivots)?;
    if status == LpStatus::Unbounded {
        return Ok(BasisSolution::without_solution(LpStatus::Unbounded, pivots));
    }

    let mut basis = tab.basis.clone();
    basis.sort_unstable();
    finish_from_basis(lp, basis, pivots)
}

/// Recomputes primal, duals and reduced costs from a basis by direct solves,
/// which removes the round-off accumulated in the tableau.
fn finish_from_basis(
    lp: &StandardFormLp,
    basis: Vec<usize>,
    pivots: usize,
) -> Result<BasisSolution, LpError> {
    let a = lp.a();
    let k = a.ncols();
    let a_b = a.select_columns(basis.iter());
    let lu = a_b.clone().lu();
    let p_b = lu.solve(&lp.b).ok_or(LpError::SingularBasis)?;
    let c_b = DVector::from_iterator(basis.len(), basis.iter().map(|&i| lp.c[i]));
    let y = a_b
        .transpose()
        .lu()
        .solve(&c_b)
        .ok_or(LpError::SingularBasis)?;

    let mut primal = vec![0.0; k];
    let zero_tol = DEGENERACY_TOL * (1.0 + lp.b.amax());
    let mut is_degenerate = false;
    for (slot, &col) in basis.iter().enumerate() {
        let v = p_b[slot];
        if v.abs() <= zero_tol {
            is_degenerate = true;
        }
        primal[col] = if v < 0.0 && v > -lp.tol_feas() { 0.0 } else { v };
    }
    let reduced = lp.c.clone() - a.transpose() * &y;
    let mut reduced_costs: Vec<f64> = reduced.iter().copied().collect();
    for &col in &basis {
        reduced_costs[col] = 0.0;
    }
    let value = primal.iter().zip(lp.c.iter()).map(|(p, c)| p * c).sum();
    Ok(BasisSolution {
        status: LpStatus::Optimal,
        value,
        primal,
        basis,
        is_degenerate,
        duals: y.iter().copied().collect(),
        reduced_costs,
        pivots,
    })
}

/// `A_B^{-1} v` scattered into a length-K vector (zero off the basis).
pub fn basis_apply(
    basis: &[usize],
    a: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>, LpError> {
    let (j, k) = a.shape();
    if basis.len() != j || v.len() != j {
        return Err(LpError::Dimension(format!(
            "basis of size {} and vector of length {} for {j} rows",
            basis.len(),
            v.len()
        )));
    }
    if basis.iter().any(|&i| i >= k) {
        return Err(LpError::Dimension("basis index out of range".into()));
    }
    let a_b = a.select_columns(basis.iter());
    let x = a_b.lu().solve(v).ok_or(LpError::SingularBasis)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LpError::SingularBasis);
    }
    let mut out = DVector::zeros(k);
    for (slot, &col) in basis.iter().enumerate() {
        out[col] = x[slot];
    }
    Ok(out)
}

/// Phase-one verdict for `{p >= 0 : A p = b}`.
pub fn check_feasibility(
    matrix: &Arc<ConstraintMatrix>,
    b: &DVector<f64>,
) -> Result<Feasibility, LpError> {
    let c = DVector::zeros(matrix.cols());
    let lp = StandardFormLp::with_matrix(matrix.clone(), b.clone(), c, Sense::Minimize)?;
    Ok(match solve_simplex(&lp)?.status {
        LpStatus::Optimal => Feasibility::Feasible,
        _ => Feasibility::Infeasible,
    })
}

/// Largest `t` in `[0, 1]` such that some `p >= t` (elementwise) satisfies `A p = b`.
///
/// Returns `None` when `b` is infeasible. A strictly positive margin means `b` lies
/// in the interior of the cone generated by the columns of `A`.
pub fn interior_margin(
    matrix: &Arc<ConstraintMatrix>,
    b: &DVector<f64>,
) -> Result<Option<f64>, LpError> {
    // Variables (q, t, s): A q + t A 1 = b, t + s = 1, all >= 0.
    let a = matrix.matrix();
    let (j, k) = a.shape();
    let mut aug = DMatrix::zeros(j + 1, k + 2);
    aug.view_mut((0, 0), (j, k)).copy_from(a);
    for i in 0..j {
        aug[(i, k)] = a.row(i).sum();
    }
    aug[(j, k)] = 1.0;
    aug[(j, k + 1)] = 1.0;
    let mut rhs = DVector::zeros(j + 1);
    rhs.rows_mut(0, j).copy_from(b);
    rhs[j] = 1.0;
    let mut cost = DVector::zeros(k + 2);
    cost[k] = 1.0;
    let lp = StandardFormLp::new(aug, rhs, cost, Sense::Maximize)?;
    let sol = solve_simplex(&lp)?;
    Ok(match sol.status {
        LpStatus::Optimal => Some(sol.value.max(0.0)),
        _ => None,
    })
}

/// `R_1(x) = max { sum(p) : p in P(x) }`.
pub fn max_l1_norm(matrix: &Arc<ConstraintMatrix>, b: &DVector<f64>) -> Result<f64, LpError> {
    let c = DVector::from_element(matrix.cols(), 1.0);
    let lp = StandardFormLp::with_matrix(matrix.clone(), b.clone(), c, Sense::Maximize)?;
    let sol = solve_simplex(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.value),
        other => Err(LpError::NotOptimal(other)),
    }
}

/// A basic feasible solution found by enumeration.
#[derive(Debug, Clone)]
pub struct Vertex {
    pub basis: Vec<usize>,
    pub primal: DVector<f64>,
}

/// Every basis `B` (as a sorted J-subset) with `A_B` invertible and `A_B^{-1} b >= 0`.
///
/// Degenerate vertices appear once per basis that produces them.
pub fn enumerate_feasible_bases(
    matrix: &ConstraintMatrix,
    b: &DVector<f64>,
) -> Result<Vec<Vertex>, LpError> {
    let a = matrix.matrix();
    let (j, k) = a.shape();
    if k > ENUMERATION_MAX_K || j > ENUMERATION_MAX_J {
        return Err(LpError::TooLargeForEnumeration { k, j });
    }
    let tol = 1e-9 * (1.0 + b.amax());
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..j).collect();
    loop {
        let a_b = a.select_columns(subset.iter());
        let lu = a_b.lu();
        if let Some(x) = lu.solve(b) {
            let invertible = lu_is_well_posed(&lu, j);
            if invertible && x.iter().all(|v| v.is_finite() && *v >= -tol) {
                let mut primal = DVector::zeros(k);
                for (slot, &col) in subset.iter().enumerate() {
                    primal[col] = x[slot].max(0.0);
                }
                out.push(Vertex {
                    basis: subset.clone(),
                    primal,
                });
            }
        }
        if !next_combination(&mut subset, k) {
            break;
        }
    }
    Ok(out)
}

fn lu_is_well_posed(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, j: usize) -> bool {
    let u = lu.u();
    let scale = (0..j).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
    scale > 0.0 && (0..j).all(|i| u[(i, i)].abs() > 1e-10 * scale)
}

/// Advances `subset` to the next sorted combination of `0..n`; false when exhausted.
pub(crate) fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let r = subset.len();
    let mut i = r;
    while i > 0 {
        i -= 1;
        if subset[i] < n - r + i {
            subset[i] += 1;
            for t in i + 1..r {
                subset[t] = subset[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeMethod {
    ReducedCostBound,
    VertexEnumeration,
}

/// Lower bound on the sub-optimality gap between the optimal value and the best
/// non-optimal vertex.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubOptimalityProbe {
    pub gap_lower_bound: f64,
    pub second_best_value: Option<f64>,
    pub method: ProbeMethod,
}

pub fn probe_suboptimality(
    lp: &StandardFormLp,
    sol: &BasisSolution,
    method: ProbeMethod,
) -> Result<SubOptimalityProbe, LpError> {
    if !sol.is_optimal() {
        return Err(LpError::NotOptimal(sol.status));
    }
    match method {
        ProbeMethod::VertexEnumeration => probe_by_enumeration(lp, sol),
        ProbeMethod::ReducedCostBound => probe_by_reduced_costs(lp, sol),
    }
}

fn probe_by_enumeration(
    lp: &StandardFormLp,
    sol: &BasisSolution,
) -> Result<SubOptimalityProbe, LpError> {
    let vertices = enumerate_feasible_bases(lp.matrix(), lp.b())?;
    let tol = 1e-9 * (1.0 + lp.c().amax()) * (1.0 + lp.b().amax());
    let sign = lp.sense().sign();
    // Work in "maximise" orientation: gap = opt - value.
    let mut best_other: Option<f64> = None;
    for v in &vertices {
        let value = lp.c().dot(&v.primal);
        let shortfall = sign * (sol.value - value);
        if shortfall > tol {
            best_other = Some(match best_other {
                None => value,
                Some(cur) => {
                    if sign * value > sign * cur {
                        value
                    } else {
                        cur
                    }
                }
            });
        }
    }
    Ok(match best_other {
        None => SubOptimalityProbe {
            gap_lower_bound: 0.0,
            second_best_value: None,
            method: ProbeMethod::VertexEnumeration,
        },
        Some(second) => SubOptimalityProbe {
            gap_lower_bound: sign * (sol.value - second),
            second_best_value: Some(second),
            method: ProbeMethod::VertexEnumeration,
        },
    })
}

/// For a non-degenerate optimum with strictly signed reduced costs the second-best
/// vertex is adjacent, so the smallest edge step `|d_j| * theta_j` equals the gap.
/// Anything else (degeneracy, ties) falls back to the trivial bound 0.
fn probe_by_reduced_costs(
    lp: &StandardFormLp,
    sol: &BasisSolution,
) -> Result<SubOptimalityProbe, LpError> {
    let fallback = SubOptimalityProbe {
        gap_lower_bound: 0.0,
        second_best_value: None,
        method: ProbeMethod::ReducedCostBound,
    };
    if sol.is_degenerate {
        return Ok(fallback);
    }
    let a = lp.a();
    let k = a.ncols();
    let a_b = a.select_columns(sol.basis.iter());
    let lu = a_b.lu();
    let p_b = DVector::from_iterator(sol.basis.len(), sol.basis.iter().map(|&i| sol.primal[i]));
    let tol_opt = lp.tol_opt();
    let mut gap = f64::INFINITY;
    for col in 0..k {
        if sol.basis.contains(&col) {
            continue;
        }
        let d = sol.reduced_costs[col].abs();
        if d <= tol_opt {
            return Ok(fallback);
        }
        let dir = lu
            .solve(&a.column(col).into_owned())
            .ok_or(LpError::SingularBasis)?;
        let mut theta = f64::INFINITY;
        for (slot, &w) in dir.iter().enumerate() {
            if w > PIVOT_TOL {
                theta = theta.min(p_b[slot] / w);
            }
        }
        if theta.is_finite() {
            gap = gap.min(d * theta);
        }
    }
    if !gap.is_finite() {
        // Single vertex: every feasible point is optimal.
        return Ok(fallback);
    }
    Ok(SubOptimalityProbe {
        gap_lower_bound: gap.max(0.0),
        second_best_value: None,
        method: ProbeMethod::ReducedCostBound,
    })
}
