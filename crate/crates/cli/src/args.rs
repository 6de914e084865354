use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "clp-bounds", version, about = "De-biased bounds for partially identified causal parameters")]
pub struct Cli {
    /// Worker threads for the parallel stages (default: all logical cores).
    #[arg(long, global = true, env = "CLP_BOUNDS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate lower and upper bounds with confidence intervals.
    Estimate(EstimateArgs),
    /// Fit logistic treatment rules that minimise the regret upper bound.
    Policy(PolicyArgs),
    /// Run the Monte Carlo study of the estimators.
    Simulate(SimulateArgs),
    /// Per-observation feasibility, gap and conditioning report.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic dataset in the input CSV format.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    JointPo,
    Iv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NuisanceSource {
    /// Plug-in columns when present, otherwise multinomial logit.
    Auto,
    /// Columns `m_*`, `e_*` (and `pzd_*`) of the input file.
    PluginCsv,
    /// Cross-fitted multinomial logistic regressions on the covariates.
    MultinomialLogit,
    /// True models of the built-in simulation designs (single covariate `x_1`).
    SimulatedTruth,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV (columns `x_*`, `d`, `y`, optional nuisances; IV adds `z`).
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, value_enum, default_value = "joint-po")]
    pub setting: SettingArg,

    /// Number of outcome levels (default: inferred from the data).
    #[arg(long)]
    pub levels: Option<usize>,

    /// Number of treatment arms in the joint potential-outcome setting.
    #[arg(long, default_value_t = 2)]
    pub arms: usize,

    #[arg(long, value_enum, default_value = "auto")]
    pub nuisances: NuisanceSource,

    /// Cross-fitting folds for the logistic nuisances.
    #[arg(long, default_value_t = 3)]
    pub folds: usize,

    /// Error correlation of the simulation design, for `--nuisances simulated-truth`.
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub rho: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Bfs,
    Entropic,
    Lse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Log,
    Sqrt,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Default `bfs`, except `entropic` for `policy`.
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,

    /// Fixed entropic regularisation.
    #[arg(long, conflicts_with = "eta_schedule", allow_negative_numbers = true)]
    pub eta: Option<f64>,

    /// Grow the hyperparameter with n (default `log` when no value is fixed).
    #[arg(long, value_enum)]
    pub eta_schedule: Option<ScheduleArg>,

    /// Multiplier of the schedule.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub kappa: f64,

    /// Fixed log-sum-exp temperature.
    #[arg(long, conflicts_with = "eta_schedule", allow_negative_numbers = true)]
    pub xi: Option<f64>,

    /// Rescale each `c(x)` to unit sup-norm before regularising.
    #[arg(long)]
    pub normalize_objective: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Probability the realised treatment misses the best potential outcome.
    NotOptimal,
    /// Expected best potential outcome.
    OracleBest,
    /// Average treatment effect (`--treated`, `--control`).
    Ate,
    /// Share of compliers (IV).
    Compliers,
    /// Not-optimal probability under instrument value `--z` (IV).
    NotOptimalUnderZ,
    /// Power-law regret of treating with probability `--pi` (`--lambda`).
    Regret,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UtilityArg {
    /// `u(y) = y`
    Identity,
    /// `u(y) = L - 1 - y`
    Reverse,
}

#[derive(Debug, Clone, Args)]
pub struct UtilityArgs {
    #[arg(long, value_enum, default_value = "identity")]
    pub utility: UtilityArg,

    /// Explicit utilities per level, comma separated; overrides `--utility`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub utilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct ObjectiveArgs {
    #[arg(long, value_enum, default_value = "not-optimal")]
    pub objective: ObjectiveArg,

    #[arg(long, default_value_t = 1)]
    pub treated: usize,

    #[arg(long, default_value_t = 0)]
    pub control: usize,

    #[arg(long, default_value_t = 1)]
    pub z: usize,

    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub lambda: f64,

    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub pi: f64,

    #[command(flatten)]
    pub utility: UtilityArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub engine: EngineArgs,

    #[command(flatten)]
    pub objective: ObjectiveArgs,

    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub alpha: f64,

    /// Fail on the first infeasible observation instead of excluding it.
    #[arg(long)]
    pub strict: bool,

    /// Output directory for `bounds.json` and `bounds.csv`.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Intercept,
    Linear,
    Polynomial,
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub engine: EngineArgs,

    /// Power-law parameters, comma separated; one output set per value.
    #[arg(long, value_delimiter = ',', default_value = "1", allow_negative_numbers = true)]
    pub lambda: Vec<f64>,

    #[command(flatten)]
    pub utility: UtilityArgs,

    #[arg(long, value_enum, default_value = "linear")]
    pub features: FeatureArg,

    /// Degree of the polynomial feature map.
    #[arg(long, default_value_t = 2)]
    pub degree: usize,

    /// Random starts besides the all-zero rule.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,

    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,

    /// Points of the covariate grid in the emitted policy curve.
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,

    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub alpha: f64,

    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    #[arg(long, default_value_t = 3)]
    pub levels: usize,

    /// Nuisance error-rate exponent.
    #[arg(long, default_value_t = 0.3)]
    pub r: f64,

    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub rho: f64,

    #[arg(long, default_value_t = 100)]
    pub reps: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Engine cells, comma separated: `bfs`, `entropic:log`, `entropic:sqrt`,
    /// `entropic:<eta>`, `lse:log`, `lse:sqrt`, `lse:<xi>`.
    #[arg(long, value_delimiter = ',', default_value = "bfs,entropic:log")]
    pub engines: Vec<String>,

    /// Multiplier of the log and sqrt schedules.
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,

    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub alpha: f64,

    #[arg(long, default_value_t = 1_000_000)]
    pub oracle_draws: usize,

    /// Cut `Y(1)` after standardising it.
    #[arg(long)]
    pub standardize_y1: bool,

    /// Use the true nuisances instead of perturbed ones.
    #[arg(long)]
    pub exact_nuisances: bool,

    #[arg(long)]
    pub normalize_objective: bool,

    /// Make `Y(1)` equal to `Y(0)`.
    #[arg(long)]
    pub identical_outcomes: bool,

    /// Output directory for `simulation.json` and `simulation.csv`.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub objective: ObjectiveArgs,

    /// Regularisation used for the condition numbers (default `2 ln n`).
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,

    /// Output directory for `diagnose.json` and `diagnose.csv`.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    /// Ordered-probit potential outcomes with a logistic propensity.
    Sim,
    /// Binary instrument that raises the treatment probability, no defiers.
    Iv,
    /// Treatment lowers the outcome everywhere.
    Harmful,
    /// Treatment helps for large `x` and hurts for small `x`.
    Monotone,
    /// Treatment has no effect.
    NoEffect,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub design: DesignArg,

    #[arg(long, default_value_t = 200)]
    pub n: usize,

    /// Outcome levels (the policy designs always have 3).
    #[arg(long, default_value_t = 3)]
    pub levels: usize,

    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub rho: f64,

    /// Perturb the written nuisances with noise of scale `2.25 n^-r`.
    #[arg(long)]
    pub perturb_r: Option<f64>,

    /// Leave out the nuisance columns.
    #[arg(long)]
    pub no_nuisances: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub output: PathBuf,
}
