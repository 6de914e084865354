pub mod diagnose;
pub mod estimate;
pub mod generate;
pub mod policy;
pub mod simulate;

use std::path::Path;

use clp_bounds::crossfit::{cross_fit, FoldPlan, MultinomialLogitLearner};
use clp_bounds::entropic::{eta_schedule, EtaSchedule};
use clp_bounds::estimators::Engine;
use clp_bounds::problems::{
    IvObjective, JointPoObjective, NuisanceValues, ProblemSpec, Setting, UtilityPreset, UtilitySpec,
    CLIP_FLOOR,
};
use clp_bounds::sim::{substream, Dgp, DgpKind, IvDgp};
use serde::Serialize;

use crate::args::{DataArgs, EngineArg, EngineArgs, NuisanceSource, ObjectiveArg, ObjectiveArgs, ScheduleArg, SettingArg, UtilityArg, UtilityArgs};
use crate::data::{read_dataset, Dataset, Layout};
use crate::error::CliError;

/// Named substreams of `--seed`.
pub const STREAM_DATA: u64 = 1;
pub const STREAM_FOLDS: u64 = 10;
pub const STREAM_RESTARTS: u64 = 11;
pub const STREAM_PERTURBATION: u64 = 12;

pub fn layout(args: &DataArgs) -> Layout {
    match args.setting {
        SettingArg::JointPo => Layout::JointPo { arms: args.arms },
        SettingArg::Iv => Layout::Iv,
    }
}

/// Where the nuisances of a run come from, after `auto` has been resolved.
#[derive(Debug, Clone)]
pub enum NuisancePlan {
    Plugin,
    Logit(FoldPlan),
    Truth { rho: f64 },
}

impl NuisancePlan {
    pub fn label(&self) -> &'static str {
        match self {
            NuisancePlan::Plugin => "plugin-csv",
            NuisancePlan::Logit(_) => "multinomial-logit",
            NuisancePlan::Truth { .. } => "simulated-truth",
        }
    }

    pub fn folds(&self) -> Option<usize> {
        match self {
            NuisancePlan::Logit(plan) => Some(plan.n_folds),
            _ => None,
        }
    }
}

/// Reads the input and settles the nuisance source without fitting anything.
pub fn load(args: &DataArgs) -> Result<(Dataset, NuisancePlan), CliError> {
    let ds = read_dataset(&args.input, layout(args), args.levels)?;
    if ds.n() < 2 {
        return Err(CliError::Validation(format!("need at least two rows, got {}", ds.n())));
    }
    let logit = || -> Result<NuisancePlan, CliError> {
        Ok(NuisancePlan::Logit(FoldPlan::new(
            ds.n(),
            args.folds,
            substream(args.seed, STREAM_FOLDS, 0),
        )?))
    };
    let plan = match args.nuisances {
        NuisanceSource::Auto if ds.nuisances.is_some() => NuisancePlan::Plugin,
        NuisanceSource::Auto | NuisanceSource::MultinomialLogit => logit()?,
        NuisanceSource::PluginCsv => {
            if ds.nuisances.is_none() {
                return Err(CliError::Validation(
                    "--nuisances plugin-csv needs the m_*, e_* (and pzd_*) columns".into(),
                ));
            }
            NuisancePlan::Plugin
        }
        NuisanceSource::SimulatedTruth => {
            if ds.covariates != ["x_1"] {
                return Err(CliError::Validation(
                    "--nuisances simulated-truth needs exactly one covariate named x_1".into(),
                ));
            }
            if !(args.rho > -1.0 && args.rho < 1.0) {
                return Err(CliError::Validation(format!("--rho must lie in (-1, 1), got {}", args.rho)));
            }
            if matches!(ds.setting, Setting::JointPo { m, .. } if m != 2) {
                return Err(CliError::Validation("the simulation design has two arms".into()));
            }
            NuisancePlan::Truth { rho: args.rho }
        }
    };
    Ok((ds, plan))
}

pub fn nuisances(ds: &Dataset, plan: &NuisancePlan) -> Result<Vec<NuisanceValues>, CliError> {
    match plan {
        NuisancePlan::Plugin => Ok(ds.nuisances.clone().expect("checked when planning")),
        NuisancePlan::Logit(folds) => {
            let learner = MultinomialLogitLearner::new(ds.setting);
            Ok(cross_fit(&learner, &ds.observations, folds, CLIP_FLOOR)?)
        }
        NuisancePlan::Truth { rho } => {
            let l = ds.setting.levels();
            let values = match ds.setting {
                Setting::JointPo { .. } => {
                    let dgp = Dgp::new(l, *rho, false, DgpKind::Standard);
                    ds.observations.iter().map(|o| dgp.true_nuisances(o.x[0])).collect::<Vec<_>>()
                }
                Setting::Iv { .. } => {
                    let dgp = IvDgp::new(l);
                    ds.observations.iter().map(|o| dgp.true_nuisances(o.x[0])).collect()
                }
            };
            Ok(values.into_iter().map(|v| v.clipped(CLIP_FLOOR)).collect())
        }
    }
}

/// Engine with its hyperparameter resolved against the sample size.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedEngine {
    pub engine: Engine,
    pub schedule: Option<&'static str>,
}

impl ResolvedEngine {
    pub fn name(&self) -> &'static str {
        match self.engine {
            Engine::Bfs => "bfs",
            Engine::Entropic { .. } => "entropic",
            Engine::LogSumExp { .. } => "lse",
        }
    }

    pub fn hyperparameter(&self) -> Option<f64> {
        match self.engine {
            Engine::Bfs => None,
            Engine::Entropic { eta } => Some(eta),
            Engine::LogSumExp { xi } => Some(xi),
        }
    }
}

pub fn resolve_engine(args: &EngineArgs, default: EngineArg, n: usize) -> Result<ResolvedEngine, CliError> {
    let invalid = |m: String| Err(CliError::Validation(m));
    let kind = args.engine.unwrap_or(default);
    if !(args.kappa > 0.0 && args.kappa.is_finite()) {
        return invalid(format!("--kappa must be positive, got {}", args.kappa));
    }
    let (fixed, other) = match kind {
        EngineArg::Bfs => {
            if args.eta.is_some() || args.xi.is_some() || args.eta_schedule.is_some() {
                return invalid("the bfs engine takes no --eta, --xi or --eta-schedule".into());
            }
            return Ok(ResolvedEngine {
                engine: Engine::Bfs,
                schedule: None,
            });
        }
        EngineArg::Entropic => (args.eta, args.xi.map(|_| ("--xi", "entropic"))),
        EngineArg::Lse => (args.xi, args.eta.map(|_| ("--eta", "lse"))),
    };
    if let Some((flag, name)) = other {
        return invalid(format!("{flag} does not apply to the {name} engine"));
    }
    let (value, schedule) = match fixed {
        Some(v) => {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("the hyperparameter must be positive, got {v}"));
            }
            (v, "fixed")
        }
        None => {
            let (schedule, label) = match args.eta_schedule.unwrap_or(ScheduleArg::Log) {
                ScheduleArg::Log => (EtaSchedule::Log { kappa: args.kappa }, "log"),
                ScheduleArg::Sqrt => (EtaSchedule::Sqrt { kappa: args.kappa }, "sqrt"),
            };
            let v = eta_schedule(n as f64, schedule).map_err(|e| CliError::Validation(e.to_string()))?;
            (v, label)
        }
    };
    let engine = match kind {
        EngineArg::Entropic => Engine::Entropic { eta: value },
        _ => Engine::LogSumExp { xi: value },
    };
    Ok(ResolvedEngine {
        engine,
        schedule: Some(schedule),
    })
}

pub fn utility(args: &UtilityArgs, levels: usize, lambda: f64) -> Result<UtilitySpec, CliError> {
    match &args.utilities {
        Some(u) => {
            if u.len() != levels {
                return Err(CliError::Validation(format!(
                    "--utilities has {} entries but the outcome has {levels} levels",
                    u.len()
                )));
            }
            Ok(UtilitySpec::new(u.clone(), lambda)?)
        }
        None => {
            let preset = match args.utility {
                UtilityArg::Identity => UtilityPreset::Identity,
                UtilityArg::Reverse => UtilityPreset::Reverse,
            };
            Ok(UtilitySpec::preset(preset, levels, lambda)?)
        }
    }
}

pub fn objective_name(args: &ObjectiveArgs) -> &'static str {
    match args.objective {
        ObjectiveArg::NotOptimal => "not-optimal",
        ObjectiveArg::OracleBest => "oracle-best",
        ObjectiveArg::Ate => "ate",
        ObjectiveArg::Compliers => "compliers",
        ObjectiveArg::NotOptimalUnderZ => "not-optimal-under-z",
        ObjectiveArg::Regret => "regret",
    }
}

pub fn problem_spec(setting: Setting, args: &ObjectiveArgs) -> Result<ProblemSpec, CliError> {
    let unsupported = || {
        Err(CliError::Validation(format!(
            "objective {} is not available in the {} setting",
            objective_name(args),
            setting_name(setting)
        )))
    };
    match setting {
        Setting::JointPo { m, l } => {
            let objective = match args.objective {
                ObjectiveArg::NotOptimal => JointPoObjective::NotOptimallyTreated,
                ObjectiveArg::OracleBest => JointPoObjective::OracleBest,
                ObjectiveArg::Ate => JointPoObjective::Ate {
                    treated: args.treated,
                    control: args.control,
                },
                ObjectiveArg::Regret => JointPoObjective::PowerLawRegret {
                    utility: utility(&args.utility, l, args.lambda)?,
                    pi: args.pi,
                },
                ObjectiveArg::Compliers | ObjectiveArg::NotOptimalUnderZ => return unsupported(),
            };
            Ok(ProblemSpec::joint_po(m, l, objective)?)
        }
        Setting::Iv { l } => {
            let objective = match args.objective {
                ObjectiveArg::Ate => IvObjective::Ate,
                ObjectiveArg::Compliers => IvObjective::Compliers,
                ObjectiveArg::NotOptimalUnderZ => IvObjective::NotOptimalUnderZ(args.z),
                _ => return unsupported(),
            };
            Ok(ProblemSpec::iv(l, objective)?)
        }
    }
}

pub fn setting_name(setting: Setting) -> &'static str {
    match setting {
        Setting::JointPo { .. } => "joint-po",
        Setting::Iv { .. } => "iv",
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
