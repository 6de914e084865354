//! Constraint systems, objectives and de-biasing terms for the supported settings.
//!
//! Joint potential outcomes: cells are tuples `(y_0, ..., y_{M-1})` of outcome
//! levels, enumerated in mixed radix with `y_0` varying slowest. Margin rows are
//! grouped by arm and then by level `1..L`, and the all-ones row comes last.
//!
//! Binary instrument and binary treatment: cells are `(y_0, y_1, d_0, d_1)` in the
//! same mixed-radix order. Row `(z, d, y)` sums the cells with `d_z = d` and
//! `y_d = y`, i.e. the observable `P(Y = y, D = d | Z = z, X)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{ConstraintMatrix, LpError};

/// Default floor applied to modelled probabilities.
pub const CLIP_FLOOR: f64 = 1e-6;

/// Largest number of cells a builder will create.
pub const MAX_CELLS: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("problem with {cells} cells exceeds the cap of {MAX_CELLS}")]
    SizeCap { cells: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("propensity {value:e} below the floor {floor:e} for {what}")]
    PropensityUnderflow { what: String, value: f64, floor: f64 },
    #[error("power-law parameter {lambda} requires strictly positive utilities (level {level} has utility {utility})")]
    InvalidLambdaUtility { lambda: f64, level: usize, utility: f64 },
    #[error("invalid probability vector for {what}: {detail}")]
    InvalidProbability { what: String, detail: String },
    #[error("observation is inconsistent with the problem: {0}")]
    InvalidObservation(String),
    #[error("objective is not available in this setting: {0}")]
    UnsupportedObjective(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// One unit of data. `y` and `d` are level / arm indices starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub d: usize,
    pub y: usize,
    pub z: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    JointPo { m: usize, l: usize },
    Iv { l: usize },
}

impl Setting {
    pub fn levels(&self) -> usize {
        match *self {
            Setting::JointPo { l, .. } | Setting::Iv { l } => l,
        }
    }

    pub fn n_rows(&self) -> usize {
        match *self {
            Setting::JointPo { m, l } => (l - 1) * m + 1,
            Setting::Iv { l } => 4 * (l - 1) + 1,
        }
    }

    pub fn n_cells(&self) -> usize {
        match *self {
            Setting::JointPo { m, l } => l.pow(m as u32),
            Setting::Iv { l } => 4 * l * l,
        }
    }

    /// Radix of each cell coordinate.
    pub fn radices(&self) -> Vec<usize> {
        match *self {
            Setting::JointPo { m, l } => vec![l; m],
            Setting::Iv { l } => vec![l, l, 2, 2],
        }
    }

    /// Coordinates of cell `k`: `(y_0, ..., y_{M-1})` or `(y_0, y_1, d_0, d_1)`.
    pub fn coords(&self, k: usize) -> Vec<usize> {
        let radices = self.radices();
        let mut out = vec![0; radices.len()];
        let mut rest = k;
        for (slot, &r) in radices.iter().enumerate().rev() {
            out[slot] = rest % r;
            rest /= r;
        }
        out
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        self.radices()
            .iter()
            .zip(coords)
            .fold(0, |acc, (&r, &c)| acc * r + c)
    }

    /// Index of the margin row for arm `d` and level `level >= 1` (joint potential outcomes).
    pub fn joint_po_row(&self, d: usize, level: usize) -> usize {
        let l = self.levels();
        d * (l - 1) + (level - 1)
    }

    /// Index of the row for `(z, d, y)` with `y >= 1` (instrumental variables).
    pub fn iv_row(&self, z: usize, d: usize, y: usize) -> usize {
        let l = self.levels();
        (z * 2 + d) * (l - 1) + (y - 1)
    }

    pub fn sum_row(&self) -> usize {
        self.n_rows() - 1
    }
}

/// Constraint matrix for the joint distribution of `m` potential outcomes with `l` levels.
pub fn build_joint_po(m: usize, l: usize) -> Result<(ConstraintMatrix, Setting), ProblemError> {
    if m < 2 || l < 2 {
        return Err(ProblemError::InvalidDimensions(format!(
            "need M >= 2 and L >= 2 (got M = {m}, L = {l})"
        )));
    }
    let cells = (l as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if cells > MAX_CELLS as u128 {
        return Err(ProblemError::SizeCap {
            cells: cells.min(usize::MAX as u128) as usize,
        });
    }
    let setting = Setting::JointPo { m, l };
    let (j, k) = (setting.n_rows(), setting.n_cells());
    let mut a = DMatrix::zeros(j, k);
    for cell in 0..k {
        let y = setting.coords(cell);
        for (d, &level) in y.iter().enumerate() {
            if level >= 1 {
                a[(setting.joint_po_row(d, level), cell)] = 1.0;
            }
        }
        a[(j - 1, cell)] = 1.0;
    }
    Ok((ConstraintMatrix::new(a)?, setting))
}

/// Constraint matrix for binary instrument, binary treatment and `l` outcome levels.
pub fn build_iv(l: usize) -> Result<(ConstraintMatrix, Setting), ProblemError> {
    if l < 2 {
        return Err(ProblemError::InvalidDimensions(format!(
            "need L >= 2 (got {l})"
        )));
    }
    let cells = 4u128 * (l as u128) * (l as u128);
    if cells > MAX_CELLS as u128 {
        return Err(ProblemError::SizeCap {
            cells: cells as usize,
        });
    }
    let setting = Setting::Iv { l };
    let (j, k) = (setting.n_rows(), setting.n_cells());
    let mut a = DMatrix::zeros(j, k);
    for cell in 0..k {
        let c = setting.coords(cell);
        let (ys, ds) = ([c[0], c[1]], [c[2], c[3]]);
        for z in 0..2 {
            let d = ds[z];
            let y = ys[d];
            if y >= 1 {
                a[(setting.iv_row(z, d, y), cell)] = 1.0;
            }
        }
        a[(j - 1, cell)] = 1.0;
    }
    Ok((ConstraintMatrix::new(a)?, setting))
}

/// Per-observation nuisance predictions.
///
/// Joint potential outcomes: `outcome[d]` is `P(Y = . | D = d, X)` and `propensity`
/// is `P(D = . | X)`.
///
/// Instrumental variables: `outcome[2 z + d]` is `P(Y = . | D = d, Z = z, X)`,
/// `propensity` is `P(Z = . | X)` and `treatment_given_instrument[z]` is
/// `P(D = . | Z = z, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceValues {
    pub outcome: Vec<Vec<f64>>,
    pub propensity: Vec<f64>,
    pub treatment_given_instrument: Option<Vec<Vec<f64>>>,
}

impl NuisanceValues {
    /// Errors if any vector is not a probability vector to within `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), ProblemError> {
        for (d, v) in self.outcome.iter().enumerate() {
            check_probability(v, tol, &format!("outcome model {d}"))?;
        }
        check_probability(&self.propensity, tol, "propensity")?;
        if let Some(t) = &self.treatment_given_instrument {
            for (z, v) in t.iter().enumerate() {
                check_probability(v, tol, &format!("treatment given instrument {z}"))?;
            }
        }
        Ok(())
    }

    /// Floors every entry at `floor` and renormalises.
    pub fn clipped(mut self, floor: f64) -> Self {
        for v in self.outcome.iter_mut() {
            clip_probabilities(v, floor);
        }
        clip_probabilities(&mut self.propensity, floor);
        if let Some(t) = self.treatment_given_instrument.as_mut() {
            for v in t.iter_mut() {
                clip_probabilities(v, floor);
            }
        }
        self
    }

    fn check_shape(&self, setting: &Setting) -> Result<(), ProblemError> {
        let l = setting.levels();
        let (arms, prop, tgi) = match setting {
            Setting::JointPo { m, .. } => (*m, *m, false),
            Setting::Iv { .. } => (4, 2, true),
        };
        let bad = |msg: String| Err(ProblemError::InvalidDimensions(msg));
        if self.outcome.len() != arms || self.outcome.iter().any(|v| v.len() != l) {
            return bad(format!("expected {arms} outcome vectors of length {l}"));
        }
        if self.propensity.len() != prop {
            return bad(format!("expected a propensity vector of length {prop}"));
        }
        match (&self.treatment_given_instrument, tgi) {
            (Some(t), true) if t.len() == 2 && t.iter().all(|v| v.len() == 2) => Ok(()),
            (None, false) => Ok(()),
            (_, true) => bad("expected two treatment-given-instrument vectors of length 2".into()),
            (Some(_), false) => bad("treatment-given-instrument supplied outside the IV setting".into()),
        }
    }
}

fn check_probability(v: &[f64], tol: f64, what: &str) -> Result<(), ProblemError> {
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(ProblemError::InvalidProbability {
            what: what.into(),
            detail: format!("entry {bad} is negative or not finite"),
        });
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(ProblemError::InvalidProbability {
            what: what.into(),
            detail: format!("entries sum to {s}"),
        });
    }
    Ok(())
}

/// Raises entries below `floor` to `floor` and shrinks the others proportionally
/// so the vector still sums to one. Vectors already above the floor are left as is.
pub fn clip_probabilities(v: &mut [f64], floor: f64) {
    let total: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if total > 0.0 {
        for x in v.iter_mut() {
            *x = x.max(0.0) / total;
        }
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
    let mut pinned = vec![false; v.len()];
    for _ in 0..v.len() {
        let mut changed = false;
        for (x, p) in v.iter_mut().zip(pinned.iter_mut()) {
            if !*p && *x < floor {
                *x = floor;
                *p = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let pinned_mass = floor * pinned.iter().filter(|p| **p).count() as f64;
        let free: f64 = v
            .iter()
            .zip(&pinned)
            .filter(|(_, p)| !**p)
            .map(|(x, _)| *x)
            .sum();
        if free > 0.0 {
            let scale = (1.0 - pinned_mass) / free;
            for (x, p) in v.iter_mut().zip(&pinned) {
                if !*p {
                    *x *= scale;
                }
            }
        }
    }
}

/// Utility of each outcome level together with the power-law parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub utilities: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityPreset {
    /// `u(y) = y`
    Identity,
    /// `u(y) = (L - 1) - y`, for outcomes where fewer is better.
    Reverse,
}

impl UtilitySpec {
    pub fn new(utilities: Vec<f64>, lambda: f64) -> Result<Self, ProblemError> {
        if !lambda.is_finite() {
            return Err(ProblemError::InvalidDimensions(format!(
                "lambda must be finite (got {lambda})"
            )));
        }
        for (level, &u) in utilities.iter().enumerate() {
            if !(u.is_finite() && u >= 0.0) {
                return Err(ProblemError::InvalidDimensions(format!(
                    "utility of level {level} must be finite and non-negative (got {u})"
                )));
            }
            if lambda <= 0.0 && u <= 0.0 {
                return Err(ProblemError::InvalidLambdaUtility {
                    lambda,
                    level,
                    utility: u,
                });
            }
        }
        Ok(Self { utilities, lambda })
    }

    pub fn preset(preset: UtilityPreset, l: usize, lambda: f64) -> Result<Self, ProblemError> {
        let u = (0..l)
            .map(|y| match preset {
                UtilityPreset::Identity => y as f64,
                UtilityPreset::Reverse => (l - 1 - y) as f64,
            })
            .collect();
        Self::new(u, lambda)
    }
}

const LAMBDA_ZERO: f64 = 1e-12;

/// `(x^lambda) / lambda`, read as `ln x` at `lambda = 0`.
fn power_term(x: f64, lambda: f64) -> f64 {
    if lambda.abs() < LAMBDA_ZERO {
        x.ln()
    } else {
        x.powf(lambda) / lambda
    }
}

/// Regret of assigning treatment with probability `pi` to a unit whose potential
/// utilities are `u0` and `u1`.
pub fn power_law_regret_cell(u0: f64, u1: f64, lambda: f64, pi: f64) -> f64 {
    let best = u0.max(u1);
    let achieved = u0 + pi * (u1 - u0);
    if best == achieved {
        return 0.0;
    }
    power_term(best, lambda) - power_term(achieved, lambda)
}

/// Derivative of [`power_law_regret_cell`] with respect to `pi`.
pub fn power_law_regret_cell_dpi(u0: f64, u1: f64, lambda: f64, pi: f64) -> f64 {
    let delta = u1 - u0;
    if delta == 0.0 {
        return 0.0;
    }
    let achieved = u0 + pi * delta;
    -achieved.powf(lambda - 1.0) * delta
}

/// Target functional for the joint potential-outcome setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JointPoObjective {
    /// Probability that the realised treatment does not attain the best potential
    /// outcome: `sum_d' P(D = d' | X) 1{y_d' != max_d y_d}`.
    NotOptimallyTreated,
    /// `E[max_d Y(d)]` in level values.
    OracleBest,
    /// `E[Y(treated) - Y(control)]` in level values.
    Ate { treated: usize, control: usize },
    /// Power-law regret of treating with probability `pi` (two arms only).
    PowerLawRegret { utility: UtilitySpec, pi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IvObjective {
    /// `E[Y(1) - Y(0)]` in level values.
    Ate,
    /// Share of compliers, `P(D(0) = 0, D(1) = 1)`.
    Compliers,
    /// Probability that the treatment taken under instrument value `z` does not
    /// attain the best potential outcome.
    NotOptimalUnderZ(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    JointPo(JointPoObjective),
    Iv(IvObjective),
}

/// The per-observation ingredients of a conditional LP.
#[derive(Debug, Clone, PartialEq)]
pub struct LpInputs {
    pub b: DVector<f64>,
    pub phi_b: DVector<f64>,
    pub c: DVector<f64>,
    pub phi_c: DVector<f64>,
}

/// Shared matrix plus the rules that turn an observation and its nuisances into
/// `b`, `c` and their de-biasing terms.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub matrix: Arc<ConstraintMatrix>,
    pub setting: Setting,
    pub objective: Objective,
    /// Numeric value of each outcome level (used by ATE-type objectives).
    pub level_values: Vec<f64>,
    pub clip_floor: f64,
}

impl ProblemSpec {
    pub fn joint_po(m: usize, l: usize, objective: JointPoObjective) -> Result<Self, ProblemError> {
        let (a, setting) = build_joint_po(m, l)?;
        if let JointPoObjective::PowerLawRegret { utility, pi } = &objective {
            check_regret_objective(m, l, utility, *pi)?;
        }
        if let JointPoObjective::Ate { treated, control } = objective {
            if treated >= m || control >= m {
                return Err(ProblemError::InvalidDimensions(format!(
                    "ATE arms ({treated}, {control}) out of range for M = {m}"
                )));
            }
        }
        Ok(Self {
            matrix: Arc::new(a),
            setting,
            objective: Objective::JointPo(objective),
            level_values: (0..l).map(|v| v as f64).collect(),
            clip_floor: CLIP_FLOOR,
        })
    }

    pub fn iv(l: usize, objective: IvObjective) -> Result<Self, ProblemError> {
        let (a, setting) = build_iv(l)?;
        if let IvObjective::NotOptimalUnderZ(z) = objective {
            if z > 1 {
                return Err(ProblemError::InvalidDimensions(format!(
                    "instrument value {z} out of range"
                )));
            }
        }
        Ok(Self {
            matrix: Arc::new(a),
            setting,
            objective: Objective::Iv(objective),
            level_values: (0..l).map(|v| v as f64).collect(),
            clip_floor: CLIP_FLOOR,
        })
    }

    pub fn with_level_values(mut self, values: Vec<f64>) -> Result<Self, ProblemError> {
        if values.len() != self.setting.levels() || values.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidDimensions(format!(
                "expected {} finite level values",
                self.setting.levels()
            )));
        }
        self.level_values = values;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        self.matrix.matrix()
    }

    fn check_observation(&self, obs: &Observation) -> Result<(), ProblemError> {
        let l = self.setting.levels();
        let arms = match self.setting {
            Setting::JointPo { m, .. } => m,
            Setting::Iv { .. } => 2,
        };
        if obs.y >= l {
            return Err(ProblemError::InvalidObservation(format!(
                "outcome level {} out of range 0..{l}",
                obs.y
            )));
        }
        if obs.d >= arms {
            return Err(ProblemError::InvalidObservation(format!(
                "treatment {} out of range 0..{arms}",
                obs.d
            )));
        }
        match (self.setting, obs.z) {
            (Setting::Iv { .. }, Some(z)) if z < 2 => Ok(()),
            (Setting::Iv { .. }, _) => Err(ProblemError::InvalidObservation(
                "instrument missing or not binary".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn b_and_phi(
        &self,
        obs: &Observation,
        nuisance: &NuisanceValues,
    ) -> Result<(DVector<f64>, DVector<f64>), ProblemError> {
        self.check_observation(obs)?;
        nuisance.check_shape(&self.setting)?;
        match self.setting {
            Setting::JointPo { .. } => joint_po_b_and_phi(&self.setting, nuisance, obs, self.clip_floor),
            Setting::Iv { .. } => iv_b_and_phi(&self.setting, nuisance, obs, self.clip_floor),
        }
    }

    pub fn c_and_phi(
        &self,
        obs: &Observation,
        nuisance: &NuisanceValues,
    ) -> Result<(DVector<f64>, DVector<f64>), ProblemError> {
        self.check_observation(obs)?;
        nuisance.check_shape(&self.setting)?;
        match &self.objective {
            Objective::JointPo(kind) => joint_po_c_and_phi(
                &self.setting,
                kind,
                nuisance,
                obs,
                &self.level_values,
                self.clip_floor,
            ),
            Objective::Iv(kind) => iv_c_and_phi(
                &self.setting,
                *kind,
                nuisance,
                obs,
                &self.level_values,
                self.clip_floor,
            ),
        }
    }

    pub fn inputs(
        &self,
        obs: &Observation,
        nuisance: &NuisanceValues,
    ) -> Result<LpInputs, ProblemError> {
        let (b, phi_b) = self.b_and_phi(obs, nuisance)?;
        let (c, phi_c) = self.c_and_phi(obs, nuisance)?;
        Ok(LpInputs { b, phi_b, c, phi_c })
    }
}

fn check_regret_objective(m: usize, l: usize, utility: &UtilitySpec, pi: f64) -> Result<(), ProblemError> {
    if m != 2 {
        return Err(ProblemError::UnsupportedObjective(
            "power-law regret needs exactly two arms".into(),
        ));
    }
    if utility.utilities.len() != l {
        return Err(ProblemError::InvalidDimensions(format!(
            "expected {l} utilities, got {}",
            utility.utilities.len()
        )));
    }
    // Re-run the constructor checks in case the struct was built by hand.
    UtilitySpec::new(utility.utilities.clone(), utility.lambda)?;
    if !(0.0..=1.0).contains(&pi) {
        return Err(ProblemError::InvalidDimensions(format!(
            "policy value {pi} outside [0, 1]"
        )));
    }
    Ok(())
}

fn require_propensity(value: f64, floor: f64, what: impl FnOnce() -> String) -> Result<f64, ProblemError> {
    if !(value >= floor) {
        return Err(ProblemError::PropensityUnderflow {
            what: what(),
            value,
            floor,
        });
    }
    Ok(value)
}

/// Margins `b_j = P(Y = y_j | D = d_j, X)` and their inverse-propensity weighted residuals.
pub fn joint_po_b_and_phi(
    setting: &Setting,
    nuisance: &NuisanceValues,
    obs: &Observation,
    clip_floor: f64,
) -> Result<(DVector<f64>, DVector<f64>), ProblemError> {
    let Setting::JointPo { m, l } = *setting else {
        return Err(ProblemError::UnsupportedObjective("expected the joint potential-outcome setting".into()));
    };
    let j = setting.n_rows();
    let mut b = DVector::zeros(j);
    let mut phi = DVector::zeros(j);
    for d in 0..m {
        let weight = if obs.d == d {
            let e = require_propensity(nuisance.propensity[d], clip_floor, || format!("arm {d}"))?;
            Some(1.0 / e)
        } else {
            None
        };
        for level in 1..l {
            let row = setting.joint_po_row(d, level);
            b[row] = nuisance.outcome[d][level];
            if let Some(w) = weight {
                let hit = if obs.y == level { 1.0 } else { 0.0 };
                phi[row] = w * (hit - b[row]);
            }
        }
    }
    b[j - 1] = 1.0;
    Ok((b, phi))
}

/// Observable margins `b_j = P(Y = y_j, D = d_j | Z = z_j, X)` and their
/// inverse-instrument-probability weighted residuals.
pub fn iv_b_and_phi(
    setting: &Setting,
    nuisance: &NuisanceValues,
    obs: &Observation,
    clip_floor: f64,
) -> Result<(DVector<f64>, DVector<f64>), ProblemError> {
    let Setting::Iv { l } = *setting else {
        return Err(ProblemError::UnsupportedObjective("expected the IV setting".into()));
    };
    let tgi = nuisance
        .treatment_given_instrument
        .as_ref()
        .ok_or_else(|| ProblemError::InvalidDimensions("missing treatment-given-instrument".into()))?;
    let obs_z = obs.z.ok_or_else(|| ProblemError::InvalidObservation("missing instrument".into()))?;
    let j = setting.n_rows();
    let mut b = DVector::zeros(j);
    let mut phi = DVector::zeros(j);
    let weight = 1.0 / require_propensity(nuisance.propensity[obs_z], clip_floor, || format!("instrument {obs_z}"))?;
    for z in 0..2 {
        for d in 0..2 {
            for y in 1..l {
                let row = setting.iv_row(z, d, y);
                b[row] = tgi[z][d] * nuisance.outcome[2 * z + d][y];
                if obs_z == z {
                    let hit = if obs.y == y && obs.d == d { 1.0 } else { 0.0 };
                    phi[row] = weight * (hit - b[row]);
                }
            }
        }
    }
    b[j - 1] = 1.0;
    Ok((b, phi))
}

fn argmax_levels(ys: &[usize], level_values: &[f64]) -> f64 {
    ys.iter().map(|&y| level_values[y]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn joint_po_c_and_phi(
    setting: &Setting,
    kind: &JointPoObjective,
    nuisance: &NuisanceValues,
    obs: &Observation,
    level_values: &[f64],
    clip_floor: f64,
) -> Result<(DVector<f64>, DVector<f64>), ProblemError> {
    let Setting::JointPo { m, l } = *setting else {
        return Err(ProblemError::UnsupportedObjective("expected the joint potential-outcome setting".into()));
    };
    let k = setting.n_cells();
    let mut c = DVector::zeros(k);
    let mut phi = DVector::zeros(k);
    match kind {
        JointPoObjective::NotOptimallyTreated => {
            for (d, &e) in nuisance.propensity.iter().enumerate() {
                require_propensity(e, clip_floor, || format!("arm {d}"))?;
            }
            for cell in 0..k {
                let ys = setting.coords(cell);
                let best = argmax_levels(&ys, level_values);
                for d in 0..m {
                    if level_values[ys[d]] != best {
                        let e = nuisance.propensity[d];
                        let observed = if obs.d == d { 1.0 } else { 0.0 };
                        c[cell] += e;
                        phi[cell] += observed - e;
                    }
                }
            }
        }
        JointPoObjective::OracleBest => {
            for cell in 0..k {
                c[cell] = argmax_levels(&setting.coords(cell), level_values);
            }
        }
        JointPoObjective::Ate { treated, control } => {
            for cell in 0..k {
                let ys = setting.coords(cell);
                c[cell] = level_values[ys[*treated]] - level_values[ys[*control]];
            }
        }
        JointPoObjective::PowerLawRegret { utility, pi } => {
            check_regret_objective(m, l, utility, *pi)?;
            c = power_law_regret_vector(setting, utility, *pi);
        }
    }
    Ok((c, phi))
}

/// Objective vector of the power-law regret for treatment probability `pi`.
pub fn power_law_regret_vector(setting: &Setting, utility: &UtilitySpec, pi: f64) -> DVector<f64> {
    let k = setting.n_cells();
    DVector::from_iterator(
        k,
        (0..k).map(|cell| {
            let ys = setting.coords(cell);
            let (u0, u1) = (utility.utilities[ys[0]], utility.utilities[ys[1]]);
            power_law_regret_cell(u0, u1, utility.lambda, pi)
        }),
    )
}

/// Derivative of [`power_law_regret_vector`] with respect to `pi`.
pub fn power_law_regret_vector_dpi(setting: &Setting, utility: &UtilitySpec, pi: f64) -> DVector<f64> {
    let k = setting.n_cells();
    DVector::from_iterator(
        k,
        (0..k).map(|cell| {
            let ys = setting.coords(cell);
            let (u0, u1) = (utility.utilities[ys[0]], utility.utilities[ys[1]]);
            power_law_regret_cell_dpi(u0, u1, utility.lambda, pi)
        }),
    )
}

pub fn iv_c_and_phi(
    setting: &Setting,
    kind: IvObjective,
    nuisance: &NuisanceValues,
    obs: &Observation,
    level_values: &[f64],
    clip_floor: f64,
) -> Result<(DVector<f64>, DVector<f64>), ProblemError> {
    if !matches!(setting, Setting::Iv { .. }) {
        return Err(ProblemError::UnsupportedObjective("expected the IV setting".into()));
    }
    let k = setting.n_cells();
    let mut c = DVector::zeros(k);
    let mut phi = DVector::zeros(k);
    match kind {
        IvObjective::Ate => {
            for cell in 0..k {
                let co = setting.coords(cell);
                c[cell] = level_values[co[1]] - level_values[co[0]];
            }
        }
        IvObjective::Compliers => {
            for cell in 0..k {
                let co = setting.coords(cell);
                if co[2] == 0 && co[3] == 1 {
                    c[cell] = 1.0;
                }
            }
        }
        IvObjective::NotOptimalUnderZ(z) => {
            let tgi = nuisance
                .treatment_given_instrument
                .as_ref()
                .ok_or_else(|| ProblemError::InvalidDimensions("missing treatment-given-instrument".into()))?;
            let obs_z = obs.z.ok_or_else(|| ProblemError::InvalidObservation("missing instrument".into()))?;
            let ez = require_propensity(nuisance.propensity[z], clip_floor, || format!("instrument {z}"))?;
            let weight = if obs_z == z { 1.0 / ez } else { 0.0 };
            for cell in 0..k {
                let co = setting.coords(cell);
                let ys = [co[0], co[1]];
                let best = argmax_levels(&ys, level_values);
                for d in 0..2 {
                    if level_values[ys[d]] != best {
                        let observed = if obs.d == d { 1.0 } else { 0.0 };
                        c[cell] += tgi[z][d];
                        phi[cell] += weight * (observed - tgi[z][d]);
                    }
                }
            }
        }
    }
    Ok((c, phi))
}
