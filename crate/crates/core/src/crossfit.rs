//! Fold assignment, cross-fitted nuisance predictions and a multinomial logistic
//! baseline learner.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problems::{NuisanceValues, Observation, ProblemError, Setting, CLIP_FLOOR};

pub const DEFAULT_FOLDS: usize = 3;

/// Assignment of observations to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Balanced random assignment: a seeded shuffle dealt round-robin.
    pub fn new(n: usize, n_folds: usize, seed: u64) -> Result<Self, ProblemError> {
        if n_folds < 2 || n < n_folds {
            return Err(ProblemError::InvalidDimensions(format!(
                "need at least 2 folds and one observation per fold (n = {n}, folds = {n_folds})"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            assignment[i] = rank % n_folds;
        }
        Ok(Self {
            n_folds,
            assignment,
            seed,
        })
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }
}

pub trait NuisanceModel: Send + Sync {
    fn predict(&self, obs: &Observation) -> Result<NuisanceValues, ProblemError>;
}

pub trait NuisanceLearner: Sync {
    fn fit(&self, train: &[&Observation]) -> Result<Box<dyn NuisanceModel>, ProblemError>;
}

/// Out-of-fold nuisance predictions: observation `i` gets predictions from a model
/// trained on every fold except its own. Predictions are clipped at `clip_floor`.
pub fn cross_fit(
    learner: &dyn NuisanceLearner,
    data: &[Observation],
    plan: &FoldPlan,
    clip_floor: f64,
) -> Result<Vec<NuisanceValues>, ProblemError> {
    if plan.assignment.len() != data.len() {
        return Err(ProblemError::InvalidDimensions(format!(
            "fold plan covers {} observations, data has {}",
            plan.assignment.len(),
            data.len()
        )));
    }
    let mut out: Vec<Option<NuisanceValues>> = vec![None; data.len()];
    for fold in 0..plan.n_folds {
        let train: Vec<&Observation> = data
            .iter()
            .zip(&plan.assignment)
            .filter(|(_, &f)| f != fold)
            .map(|(o, _)| o)
            .collect();
        let model = learner.fit(&train)?;
        for i in plan.members(fold) {
            out[i] = Some(model.predict(&data[i])?.clipped(clip_floor));
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every index belongs to a fold")).collect())
}

/// Multinomial logistic regression on `(1, x)`, fitted by Newton's method with a
/// small ridge penalty on the slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialLogit {
    /// (classes - 1) x features; the last class is the reference.
    weights: DMatrix<f64>,
    classes: usize,
}

impl MultinomialLogit {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, ridge: f64) -> Self {
        let p = features.first().map_or(1, |f| f.len() + 1);
        let free = classes.saturating_sub(1);
        let mut w = DMatrix::zeros(free, p);
        if free == 0 || features.is_empty() {
            return Self { weights: w, classes };
        }
        let design: Vec<DVector<f64>> = features
            .iter()
            .map(|f| DVector::from_iterator(p, std::iter::once(1.0).chain(f.iter().copied())))
            .collect();
        let dim = free * p;
        let objective = |w: &DMatrix<f64>| -> f64 {
            let mut ll = 0.0;
            for (x, &y) in design.iter().zip(labels) {
                let probs = softmax_with_reference(w, x);
                ll += probs[y].max(1e-300).ln();
            }
            let penalty: f64 = (0..free)
                .map(|c| (1..p).map(|j| w[(c, j)] * w[(c, j)]).sum::<f64>())
                .sum();
            -ll + 0.5 * ridge * penalty + 0.5 * 1e-8 * w.column(0).norm_squared()
        };
        let mut current = objective(&w);
        for _ in 0..100 {
            let mut grad = DVector::<f64>::zeros(dim);
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            for (x, &y) in design.iter().zip(labels) {
                let probs = softmax_with_reference(&w, x);
                for a in 0..free {
                    let resid = probs[a] - if y == a { 1.0 } else { 0.0 };
                    for j in 0..p {
                        grad[a * p + j] += resid * x[j];
                    }
                    for b in 0..free {
                        let h = probs[a] * ((a == b) as u8 as f64 - probs[b]);
                        if h == 0.0 {
                            continue;
                        }
                        for j in 0..p {
                            for k in 0..p {
                                hess[(a * p + j, b * p + k)] += h * x[j] * x[k];
                            }
                        }
                    }
                }
            }
            for a in 0..free {
                grad[a * p] += 1e-8 * w[(a, 0)];
                hess[(a * p, a * p)] += 1e-8;
                for j in 1..p {
                    grad[a * p + j] += ridge * w[(a, j)];
                    hess[(a * p + j, a * p + j)] += ridge;
                }
            }
            if grad.amax() < 1e-9 {
                break;
            }
            let Some(ch) = hess.cholesky() else { break };
            let step = ch.solve(&grad);
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let mut trial = w.clone();
                for a in 0..free {
                    for j in 0..p {
                        trial[(a, j)] -= t * step[a * p + j];
                    }
                }
                let val = objective(&trial);
                if val.is_finite() && val <= current {
                    w = trial;
                    improved = current - val > 1e-12 * (1.0 + current.abs());
                    current = val;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Self { weights: w, classes }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let p = self.weights.ncols();
        // A model fitted on no data has only an intercept.
        let v = DVector::from_iterator(p, std::iter::once(1.0).chain(x.iter().copied()).take(p));
        softmax_with_reference(&self.weights, &v)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

fn softmax_with_reference(w: &DMatrix<f64>, x: &DVector<f64>) -> Vec<f64> {
    let free = w.nrows();
    let mut scores: Vec<f64> = (0..free).map(|a| w.row(a).transpose().dot(x)).collect();
    scores.push(0.0);
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    probs
}

/// Fits one multinomial logit per conditional distribution the setting needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialLogitLearner {
    pub setting: Setting,
    pub ridge: f64,
}

impl MultinomialLogitLearner {
    pub fn new(setting: Setting) -> Self {
        Self {
            setting,
            ridge: 1e-3,
        }
    }
}

struct LogitNuisances {
    setting: Setting,
    outcome: Vec<MultinomialLogit>,
    propensity: MultinomialLogit,
    treatment_given_instrument: Vec<MultinomialLogit>,
}

impl NuisanceModel for LogitNuisances {
    fn predict(&self, obs: &Observation) -> Result<NuisanceValues, ProblemError> {
        let x = &obs.x;
        let values = NuisanceValues {
            outcome: self.outcome.iter().map(|m| m.predict(x)).collect(),
            propensity: self.propensity.predict(x),
            treatment_given_instrument: match self.setting {
                Setting::Iv { .. } => Some(
                    self.treatment_given_instrument
                        .iter()
                        .map(|m| m.predict(x))
                        .collect(),
                ),
                Setting::JointPo { .. } => None,
            },
        };
        Ok(values.clipped(CLIP_FLOOR))
    }
}

impl NuisanceLearner for MultinomialLogitLearner {
    fn fit(&self, train: &[&Observation]) -> Result<Box<dyn NuisanceModel>, ProblemError> {
        let l = self.setting.levels();
        let fit_subset = |keep: &dyn Fn(&Observation) -> bool,
                          label: &dyn Fn(&Observation) -> usize,
                          classes: usize| {
            let rows: Vec<&&Observation> = train.iter().filter(|o| keep(o)).collect();
            let features: Vec<Vec<f64>> = rows.iter().map(|o| o.x.clone()).collect();
            let labels: Vec<usize> = rows.iter().map(|o| label(o)).collect();
            MultinomialLogit::fit(&features, &labels, classes, self.ridge)
        };
        let model = match self.setting {
            Setting::JointPo { m, .. } => LogitNuisances {
                setting: self.setting,
                outcome: (0..m)
                    .map(|d| fit_subset(&|o| o.d == d, &|o| o.y, l))
                    .collect(),
                propensity: fit_subset(&|_| true, &|o| o.d, m),
                treatment_given_instrument: Vec::new(),
            },
            Setting::Iv { .. } => {
                if train.iter().any(|o| o.z.is_none()) {
                    return Err(ProblemError::InvalidObservation(
                        "instrument missing in training data".into(),
                    ));
                }
                let z_of = |o: &Observation| o.z.unwrap_or(0);
                LogitNuisances {
                    setting: self.setting,
                    outcome: (0..4)
                        .map(|arm| {
                            let (z, d) = (arm / 2, arm % 2);
                            fit_subset(&|o| z_of(o) == z && o.d == d, &|o| o.y, l)
                        })
                        .collect(),
                    propensity: fit_subset(&|_| true, &z_of, 2),
                    treatment_given_instrument: (0..2)
                        .map(|z| fit_subset(&|o| z_of(o) == z, &|o| o.d, 2))
                        .collect(),
                }
            }
        };
        Ok(Box::new(model))
    }
}
