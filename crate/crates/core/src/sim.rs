//! Monte Carlo harness for the ordinal-outcome binary-treatment design.
//!
//! Data: `X ~ N(0, 1)`, `Y(0) = e0`, `Y(1) = X^2 / 2.4 + 1.2 X + e1` with
//! `(e0, e1)` standard bivariate normal with correlation `rho`. Both latent
//! outcomes are cut into `L` levels at the standard normal quantiles
//! `Phi^{-1}(l / L)`. Treatment is `Bernoulli(e(X))` with `e(x) = 1 / (1 + exp(x))`.
//! The target is the probability that the realised outcome falls short of the
//! best potential outcome.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::entropic::{eta_schedule, EtaSchedule};
use crate::estimators::{estimate_from_inputs, mean_and_variance, Engine, EstimatorConfig};
use crate::lp::{solve_simplex, LpStatus, Sense, StandardFormLp};
use crate::problems::{
    JointPoObjective, LpInputs, NuisanceValues, Observation, ProblemError, ProblemSpec, CLIP_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("oracle LP failed: {0}")]
    Oracle(String),
    #[error("could not write results: {0}")]
    Output(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpKind {
    Standard,
    /// `Y(1)` equals `Y(0)` level by level.
    IdenticalOutcomes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EngineSpec {
    Bfs,
    Entropic(EtaSchedule),
    LogSumExp(EtaSchedule),
}

impl EngineSpec {
    pub fn label(&self) -> &'static str {
        match self {
            EngineSpec::Bfs => "bfs",
            EngineSpec::Entropic(_) => "entropic",
            EngineSpec::LogSumExp(_) => "lse",
        }
    }

    pub fn resolve(&self, n: usize) -> Result<Engine, SimError> {
        let hyper = |s: &EtaSchedule| {
            eta_schedule(n as f64, *s).map_err(|e| SimError::InvalidConfig(e.to_string()))
        };
        Ok(match self {
            EngineSpec::Bfs => Engine::Bfs,
            EngineSpec::Entropic(s) => Engine::Entropic { eta: hyper(s)? },
            EngineSpec::LogSumExp(s) => Engine::LogSumExp { xi: hyper(s)? },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub levels: usize,
    pub r: f64,
    pub rho: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub engines: Vec<EngineSpec>,
    pub alpha: f64,
    /// Cut `Y(1)` after standardising it to mean 0 and variance 1.
    pub standardize_y1: bool,
    /// Skip the nuisance perturbation.
    pub exact_nuisances: bool,
    pub oracle_draws: usize,
    pub normalize_objective: bool,
    pub dgp: DgpKind,
}

impl SimConfig {
    pub fn new(n: usize, levels: usize, r: f64, n_reps: usize, seed: u64) -> Self {
        Self {
            n,
            levels,
            r,
            rho: 0.9,
            n_reps,
            seed,
            engines: vec![EngineSpec::Bfs, EngineSpec::Entropic(EtaSchedule::log())],
            alpha: 0.05,
            standardize_y1: false,
            exact_nuisances: false,
            oracle_draws: 1_000_000,
            normalize_objective: false,
            dgp: DgpKind::Standard,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n < 50 {
            return bad(format!("n must be at least 50 (got {})", self.n));
        }
        if !(2..=10).contains(&self.levels) {
            return bad(format!("L must lie in 2..=10 (got {})", self.levels));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return bad(format!("r must lie in [0, 1] (got {})", self.r));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (-1, 1) (got {})", self.rho));
        }
        if self.n_reps == 0 {
            return bad("n_reps must be positive".into());
        }
        if self.engines.is_empty() {
            return bad("no engines requested".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1) (got {})", self.alpha));
        }
        if self.oracle_draws < 2 {
            return bad("oracle needs at least two draws".into());
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemSpec, SimError> {
        let l = self.levels;
        Ok(ProblemSpec::joint_po(2, l, JointPoObjective::NotOptimallyTreated)?
            .with_level_values((0..l).map(|v| v as f64 / (l - 1) as f64).collect())?)
    }
}

/// Independent stream seed for `(seed, a, b)` via SplitMix64 mixing.
pub fn substream(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_DATA: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ORACLE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUnit {
    pub x: f64,
    pub d: usize,
    pub y: usize,
    pub y0: usize,
    pub y1: usize,
}

impl SimUnit {
    pub fn observation(&self) -> Observation {
        Observation {
            x: vec![self.x],
            d: self.d,
            y: self.y,
            z: None,
        }
    }
}

/// Outcome-model description shared by the data generator and the true nuisances.
#[derive(Debug, Clone)]
pub struct Dgp {
    pub levels: usize,
    pub rho: f64,
    pub standardize_y1: bool,
    pub kind: DgpKind,
    breaks: Vec<f64>,
}

/// Mean and variance of `X^2 / 2.4 + 1.2 X + e1` over `X ~ N(0, 1)`.
const Y1_MEAN: f64 = 1.0 / 2.4;
const Y1_VAR: f64 = 2.0 / (2.4 * 2.4) + 1.44 + 1.0;

impl Dgp {
    pub fn new(levels: usize, rho: f64, standardize_y1: bool, kind: DgpKind) -> Self {
        let normal = Normal::standard();
        let breaks = (1..levels)
            .map(|l| normal.inverse_cdf(l as f64 / levels as f64))
            .collect();
        Self {
            levels,
            rho,
            standardize_y1,
            kind,
            breaks,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.levels, cfg.rho, cfg.standardize_y1, cfg.dgp)
    }

    pub fn mean_y1(x: f64) -> f64 {
        x * x / 2.4 + 1.2 * x
    }

    pub fn propensity(x: f64) -> f64 {
        1.0 / (1.0 + x.exp())
    }

    fn cut(&self, latent: f64) -> usize {
        self.breaks.iter().filter(|&&b| latent > b).count()
    }

    fn y1_latent(&self, x: f64, e1: f64) -> f64 {
        let raw = Self::mean_y1(x) + e1;
        if self.standardize_y1 {
            (raw - Y1_MEAN) / Y1_VAR.sqrt()
        } else {
            raw
        }
    }

    /// `P(Y(d) = . | X = x)`.
    pub fn outcome_probs(&self, d: usize, x: f64) -> Vec<f64> {
        let normal = Normal::standard();
        let (shift, scale) = if d == 0 || self.kind == DgpKind::IdenticalOutcomes {
            (0.0, 1.0)
        } else if self.standardize_y1 {
            let s = Y1_VAR.sqrt();
            (Self::mean_y1(x) - Y1_MEAN, s)
        } else {
            (Self::mean_y1(x), 1.0)
        };
        // Latent given x is N(shift / scale, 1 / scale^2) in cut units.
        let cdf = |b: f64| normal.cdf(b * scale - shift);
        let mut out = Vec::with_capacity(self.levels);
        let mut prev = 0.0;
        for &b in &self.breaks {
            let c = cdf(b);
            out.push((c - prev).max(0.0));
            prev = c;
        }
        out.push((1.0 - prev).max(0.0));
        out
    }

    pub fn true_nuisances(&self, x: f64) -> NuisanceValues {
        let e = Self::propensity(x);
        NuisanceValues {
            outcome: vec![self.outcome_probs(0, x), self.outcome_probs(1, x)],
            propensity: vec![1.0 - e, e],
            treatment_given_instrument: None,
        }
    }

    /// One draw of the latent errors `(e0, e1)`.
    pub fn draw_errors(&self, rng: &mut impl Rng) -> (f64, f64) {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        (z1, self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * z2)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> SimUnit {
        let x: f64 = StandardNormal.sample(rng);
        let (e0, e1) = self.draw_errors(rng);
        let y0 = self.cut(e0);
        let y1 = match self.kind {
            DgpKind::IdenticalOutcomes => y0,
            DgpKind::Standard => self.cut(self.y1_latent(x, e1)),
        };
        let d = usize::from(rng.random::<f64>() < Self::propensity(x));
        SimUnit {
            x,
            d,
            y: if d == 1 { y1 } else { y0 },
            y0,
            y1,
        }
    }
}

pub fn generate_dataset(config: &SimConfig, rep_seed: u64) -> Vec<SimUnit> {
    let dgp = Dgp::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    (0..config.n).map(|_| dgp.draw(&mut rng)).collect()
}

/// Multiplicative log-normal noise on the outcome models (renormalised by softmax)
/// and additive noise on the propensity logit, both with mean and standard
/// deviation `2.25 n^{-r}`. Treatment-given-instrument models, when present, get
/// the same logit noise.
pub fn perturb_nuisances(
    truth: &[NuisanceValues],
    n: usize,
    r: f64,
    rep_seed: u64,
) -> Vec<NuisanceValues> {
    let scale = 2.25 * (n as f64).powf(-r);
    let noise = rand_distr::Normal::new(scale, scale).expect("finite noise scale");
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    truth
        .iter()
        .map(|t| {
            let outcome = t
                .outcome
                .iter()
                .map(|m| {
                    let logs: Vec<f64> = m
                        .iter()
                        .map(|&p| p.max(1e-300).ln() + noise.sample(&mut rng))
                        .collect();
                    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
                    let total: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / total).collect()
                })
                .collect();
            let mut perturb_binary = |treated: f64| {
                let logit = (treated / (1.0 - treated)).ln() - noise.sample(&mut rng);
                let e = 1.0 / (1.0 + (-logit).exp());
                vec![1.0 - e, e]
            };
            let propensity = perturb_binary(*t.propensity.last().expect("binary propensity"));
            let treatment_given_instrument = t
                .treatment_given_instrument
                .as_ref()
                .map(|tgi| tgi.iter().map(|q| perturb_binary(q[1])).collect());
            NuisanceValues {
                outcome,
                propensity,
                treatment_given_instrument,
            }
        })
        .collect()
}

/// Binary instrument design: `X ~ N(0, 1)`, `Z ~ Bernoulli(0.48)` independent of
/// `X`, `D = 1{U < g_Z(X)}` with `g_0(x) = sigmoid(-1 + x / 2)` and
/// `g_1(x) = sigmoid(1 + x / 2)` (no defiers), and `Y(d)` an ordered probit with
/// latent `0.8 d + 0.3 x + e`, `e` independent of `U`.
#[derive(Debug, Clone)]
pub struct IvDgp {
    pub levels: usize,
    breaks: Vec<f64>,
}

pub const IV_INSTRUMENT_PROB: f64 = 0.48;

impl IvDgp {
    pub fn new(levels: usize) -> Self {
        let normal = Normal::standard();
        let breaks = (1..levels)
            .map(|l| normal.inverse_cdf(l as f64 / levels as f64))
            .collect();
        Self { levels, breaks }
    }

    pub fn treatment_prob(z: usize, x: f64) -> f64 {
        let shift = if z == 1 { 1.0 } else { -1.0 };
        1.0 / (1.0 + (-(shift + 0.5 * x)).exp())
    }

    fn latent_mean(d: usize, x: f64) -> f64 {
        0.8 * d as f64 + 0.3 * x
    }

    pub fn outcome_probs(&self, d: usize, x: f64) -> Vec<f64> {
        let normal = Normal::standard();
        let mu = Self::latent_mean(d, x);
        let mut out = Vec::with_capacity(self.levels);
        let mut prev = 0.0;
        for &b in &self.breaks {
            let c = normal.cdf(b - mu);
            out.push((c - prev).max(0.0));
            prev = c;
        }
        out.push((1.0 - prev).max(0.0));
        out
    }

    pub fn true_nuisances(&self, x: f64) -> NuisanceValues {
        let outcome = (0..4).map(|arm| self.outcome_probs(arm % 2, x)).collect();
        let tgi = (0..2)
            .map(|z| {
                let q = Self::treatment_prob(z, x);
                vec![1.0 - q, q]
            })
            .collect();
        NuisanceValues {
            outcome,
            propensity: vec![1.0 - IV_INSTRUMENT_PROB, IV_INSTRUMENT_PROB],
            treatment_given_instrument: Some(tgi),
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Observation {
        let x: f64 = StandardNormal.sample(rng);
        let z = usize::from(rng.random::<f64>() < IV_INSTRUMENT_PROB);
        let u: f64 = rng.random();
        let d = usize::from(u < Self::treatment_prob(z, x));
        let e: f64 = StandardNormal.sample(rng);
        let latent = Self::latent_mean(d, x) + e;
        let y = self.breaks.iter().filter(|&&b| latent > b).count();
        Observation {
            x: vec![x],
            d,
            y,
            z: Some(z),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, STREAM_DATA, 0));
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBounds {
    pub theta_l: f64,
    pub theta_u: f64,
    pub se_l: f64,
    pub se_u: f64,
    pub draws: usize,
}

/// Population bounds by Monte Carlo over `X` with exact conditional LPs.
pub fn true_bound_oracle(config: &SimConfig) -> Result<OracleBounds, SimError> {
    true_bound_oracle_seeded(config, substream(config.seed, STREAM_ORACLE, 0))
}

pub fn true_bound_oracle_seeded(config: &SimConfig, seed: u64) -> Result<OracleBounds, SimError> {
    config.validate()?;
    let spec = config.problem()?;
    let dgp = Dgp::from_config(config);
    const CHUNK: usize = 4096;
    let n_chunks = config.oracle_draws.div_ceil(CHUNK);
    let chunks: Vec<Result<Vec<(f64, f64)>, SimError>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, chunk as u64, 0));
            let count = CHUNK.min(config.oracle_draws - chunk * CHUNK);
            (0..count)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    conditional_bounds_at(&spec, &dgp, x)
                })
                .collect()
        })
        .collect();
    let mut lower = Vec::with_capacity(config.oracle_draws);
    let mut upper = Vec::with_capacity(config.oracle_draws);
    for chunk in chunks {
        for (l, u) in chunk? {
            lower.push(l);
            upper.push(u);
        }
    }
    let (theta_l, var_l) = mean_and_variance(&lower);
    let (theta_u, var_u) = mean_and_variance(&upper);
    let n = lower.len() as f64;
    Ok(OracleBounds {
        theta_l,
        theta_u,
        se_l: (var_l / n).sqrt(),
        se_u: (var_u / n).sqrt(),
        draws: lower.len(),
    })
}

/// Exact `(theta_L(x), theta_U(x))` from the true nuisances.
pub fn conditional_bounds_at(spec: &ProblemSpec, dgp: &Dgp, x: f64) -> Result<(f64, f64), SimError> {
    let nu = dgp.true_nuisances(x);
    let obs = Observation {
        x: vec![x],
        d: 0,
        y: 0,
        z: None,
    };
    let (b, _) = spec.b_and_phi(&obs, &nu)?;
    let (c, _) = spec.c_and_phi(&obs, &nu)?;
    let solve = |sense| -> Result<f64, SimError> {
        let lp = StandardFormLp::with_matrix(spec.matrix.clone(), b.clone(), c.clone(), sense)
            .map_err(|e| SimError::Oracle(e.to_string()))?;
        let sol = solve_simplex(&lp).map_err(|e| SimError::Oracle(e.to_string()))?;
        if sol.status != LpStatus::Optimal {
            return Err(SimError::Oracle(format!("status {:?} at x = {x}", sol.status)));
        }
        Ok(sol.value)
    };
    Ok((solve(Sense::Minimize)?, solve(Sense::Maximize)?))
}

/// Data and nuisance predictions for one replication.
pub struct Replication {
    pub units: Vec<SimUnit>,
    pub observations: Vec<Observation>,
    pub nuisances: Vec<NuisanceValues>,
}

pub fn replication(config: &SimConfig, rep: usize) -> Replication {
    let units = generate_dataset(config, substream(config.seed, STREAM_DATA, rep as u64));
    let dgp = Dgp::from_config(config);
    let truth: Vec<NuisanceValues> = units.iter().map(|u| dgp.true_nuisances(u.x)).collect();
    let nuisances = if config.exact_nuisances {
        truth
    } else {
        perturb_nuisances(
            &truth,
            config.n,
            config.r,
            substream(config.seed, STREAM_NOISE, rep as u64),
        )
    };
    let nuisances = nuisances
        .into_iter()
        .map(|v| v.clipped(CLIP_FLOOR))
        .collect();
    let observations = units.iter().map(SimUnit::observation).collect();
    Replication {
        units,
        observations,
        nuisances,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub engine: String,
    pub hyper: Option<f64>,
    pub n: usize,
    pub levels: usize,
    pub r: f64,
    pub bias_l: f64,
    pub sd_l: f64,
    pub rmse_l: f64,
    pub bias_u: f64,
    pub sd_u: f64,
    pub rmse_u: f64,
    pub coverage_l: f64,
    pub coverage_u: f64,
    pub mean_ci_width: f64,
    pub mean_excluded: f64,
    pub n_completed: usize,
    pub n_failed: usize,
    /// Not serialised, so repeated runs give identical files.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub oracle: OracleBounds,
    pub cells: Vec<CellRecord>,
}

impl SimResult {
    /// One row per cell.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        for cell in &self.cells {
            w.serialize(cell).map_err(|e| SimError::Output(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Output(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String, SimError> {
        serde_json::to_string_pretty(self).map_err(|e| SimError::Output(e.to_string()))
    }
}

/// Per-replication estimate for one engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepEstimate {
    pub theta_l: f64,
    pub theta_u: f64,
    pub ci: (f64, f64),
    pub excluded: usize,
}

/// Summary statistics of estimates around a target. `sd` uses 1/R normalisation so
/// that `rmse^2 = bias^2 + sd^2` holds exactly.
pub fn bias_sd_rmse(estimates: &[f64], target: f64) -> (f64, f64, f64) {
    if estimates.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let (mean, var) = mean_and_variance(estimates);
    let bias = mean - target;
    let sd = var.sqrt();
    (bias, sd, (bias * bias + sd * sd).sqrt())
}

/// Runs every replication for every engine and aggregates against the oracle.
pub fn run_sweep(config: &SimConfig) -> Result<SimResult, SimError> {
    config.validate()?;
    let oracle = true_bound_oracle(config)?;
    run_sweep_with_oracle(config, oracle)
}

pub fn run_sweep_with_oracle(config: &SimConfig, oracle: OracleBounds) -> Result<SimResult, SimError> {
    config.validate()?;
    let spec = config.problem()?;
    let engines: Vec<Engine> = config
        .engines
        .iter()
        .map(|e| e.resolve(config.n))
        .collect::<Result<_, _>>()?;
    let matrix = spec.matrix.clone();

    type RepOut = Vec<(Option<RepEstimate>, f64)>;
    let per_rep: Vec<Result<RepOut, SimError>> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| {
            let data = replication(config, rep);
            let inputs: Vec<LpInputs> = data
                .observations
                .iter()
                .zip(&data.nuisances)
                .map(|(o, nu)| spec.inputs(o, nu))
                .collect::<Result<_, _>>()?;
            Ok(engines
                .iter()
                .map(|&engine| {
                    let start = Instant::now();
                    let est = estimate_one(&matrix, &inputs, engine, config);
                    (est, start.elapsed().as_secs_f64())
                })
                .collect())
        })
        .collect();
    let per_rep: Vec<RepOut> = per_rep.into_iter().collect::<Result<_, _>>()?;

    let cells = config
        .engines
        .iter()
        .zip(&engines)
        .enumerate()
        .map(|(k, (spec_e, engine))| {
            let ests: Vec<RepEstimate> = per_rep.iter().filter_map(|r| r[k].0).collect();
            let wall: f64 = per_rep.iter().map(|r| r[k].1).sum();
            aggregate(spec_e, engine, config, &oracle, &ests, wall)
        })
        .collect();
    Ok(SimResult {
        config: config.clone(),
        oracle,
        cells,
    })
}

fn estimate_one(
    matrix: &Arc<crate::lp::ConstraintMatrix>,
    inputs: &[LpInputs],
    engine: Engine,
    config: &SimConfig,
) -> Option<RepEstimate> {
    let mut est_cfg = EstimatorConfig::new(engine, config.alpha);
    est_cfg.normalize_objective = config.normalize_objective;
    est_cfg.probe = None;
    let setting = crate::problems::Setting::JointPo {
        m: 2,
        l: config.levels,
    };
    estimate_from_inputs(matrix, inputs, &est_cfg, Some(setting))
        .ok()
        .map(|r| RepEstimate {
            theta_l: r.theta_l,
            theta_u: r.theta_u,
            ci: r.ci,
            excluded: r.n_excluded_infeasible,
        })
}

fn aggregate(
    spec: &EngineSpec,
    engine: &Engine,
    config: &SimConfig,
    oracle: &OracleBounds,
    ests: &[RepEstimate],
    wall: f64,
) -> CellRecord {
    let lows: Vec<f64> = ests.iter().map(|e| e.theta_l).collect();
    let ups: Vec<f64> = ests.iter().map(|e| e.theta_u).collect();
    let (bias_l, sd_l, rmse_l) = bias_sd_rmse(&lows, oracle.theta_l);
    let (bias_u, sd_u, rmse_u) = bias_sd_rmse(&ups, oracle.theta_u);
    let m = ests.len() as f64;
    let frac = |f: &dyn Fn(&RepEstimate) -> bool| ests.iter().filter(|e| f(e)).count() as f64 / m;
    CellRecord {
        engine: spec.label().into(),
        hyper: match engine {
            Engine::Bfs => None,
            Engine::Entropic { eta } => Some(*eta),
            Engine::LogSumExp { xi } => Some(*xi),
        },
        n: config.n,
        levels: config.levels,
        r: config.r,
        bias_l,
        sd_l,
        rmse_l,
        bias_u,
        sd_u,
        rmse_u,
        coverage_l: frac(&|e| e.ci.0 <= oracle.theta_l),
        coverage_u: frac(&|e| e.ci.1 >= oracle.theta_u),
        mean_ci_width: ests.iter().map(|e| e.ci.1 - e.ci.0).sum::<f64>() / m,
        mean_excluded: ests.iter().map(|e| e.excluded as f64).sum::<f64>() / m,
        n_completed: ests.len(),
        n_failed: config.n_reps - ests.len(),
        wall_time_secs: wall,
    }
}

/// Reference vector `b(x)` of the true model, handy for diagnostics and tests.
pub fn true_constraint_vector(spec: &ProblemSpec, dgp: &Dgp, x: f64) -> Result<DVector<f64>, SimError> {
    let obs = Observation {
        x: vec![x],
        d: 0,
        y: 0,
        z: None,
    };
    Ok(spec.b_and_phi(&obs, &dgp.true_nuisances(x))?.0)
}
