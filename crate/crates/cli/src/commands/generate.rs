use clp_bounds::policy::{PolicyDgp, POLICY_DGP_LEVELS};
use clp_bounds::problems::{NuisanceValues, Observation, Setting, CLIP_FLOOR};
use clp_bounds::sim::{perturb_nuisances, substream, Dgp, DgpKind, IvDgp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{STREAM_DATA, STREAM_PERTURBATION};
use crate::args::{DesignArg, GenerateArgs};
use crate::data::write_dataset;
use crate::error::CliError;

pub fn validate(args: &GenerateArgs) -> Result<(), CliError> {
    let invalid = |m: String| Err(CliError::Validation(m));
    if args.n < 2 {
        return invalid(format!("--n must be at least 2, got {}", args.n));
    }
    if !(2..=10).contains(&args.levels) {
        return invalid(format!("--levels must lie in 2..=10, got {}", args.levels));
    }
    if !(args.rho > -1.0 && args.rho < 1.0) {
        return invalid(format!("--rho must lie in (-1, 1), got {}", args.rho));
    }
    let policy_design = matches!(args.design, DesignArg::Harmful | DesignArg::Monotone | DesignArg::NoEffect);
    if policy_design && args.levels != POLICY_DGP_LEVELS {
        return invalid(format!("the policy designs have {POLICY_DGP_LEVELS} outcome levels"));
    }
    if let Some(r) = args.perturb_r {
        if !(0.0..=1.0).contains(&r) {
            return invalid(format!("--perturb-r must lie in [0, 1], got {r}"));
        }
        if args.no_nuisances {
            return invalid("--perturb-r has no effect with --no-nuisances".into());
        }
    }
    Ok(())
}

pub fn execute(args: &GenerateArgs) -> Result<(), CliError> {
    let data_seed = substream(args.seed, STREAM_DATA, 0);
    let (setting, observations, truth): (Setting, Vec<Observation>, Vec<NuisanceValues>) = match args.design {
        DesignArg::Sim => {
            let dgp = Dgp::new(args.levels, args.rho, false, DgpKind::Standard);
            let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
            let units: Vec<_> = (0..args.n).map(|_| dgp.draw(&mut rng)).collect();
            (
                Setting::JointPo { m: 2, l: args.levels },
                units.iter().map(|u| u.observation()).collect(),
                units.iter().map(|u| dgp.true_nuisances(u.x)).collect(),
            )
        }
        DesignArg::Iv => {
            let dgp = IvDgp::new(args.levels);
            let obs = dgp.generate(args.n, args.seed);
            let truth = obs.iter().map(|o| dgp.true_nuisances(o.x[0])).collect();
            (Setting::Iv { l: args.levels }, obs, truth)
        }
        DesignArg::Harmful | DesignArg::Monotone | DesignArg::NoEffect => {
            let dgp = match args.design {
                DesignArg::Harmful => PolicyDgp::HarmfulEffect,
                DesignArg::Monotone => PolicyDgp::MonotoneBenefit,
                _ => PolicyDgp::NoEffect,
            };
            let (obs, truth) = dgp.generate(args.n, data_seed);
            (Setting::JointPo { m: 2, l: POLICY_DGP_LEVELS }, obs, truth)
        }
    };
    let nuisances: Option<Vec<NuisanceValues>> = (!args.no_nuisances).then(|| {
        let values = match args.perturb_r {
            Some(r) => perturb_nuisances(&truth, args.n, r, substream(args.seed, STREAM_PERTURBATION, 0)),
            None => truth,
        };
        values.into_iter().map(|v| v.clipped(CLIP_FLOOR)).collect()
    });
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    write_dataset(&args.output, setting, &observations, nuisances.as_deref())?;
    println!("wrote {} rows to {}", observations.len(), args.output.display());
    Ok(())
}
