use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use clp_bounds_cli::args::Cli;
use clp_bounds_cli::commands::diagnose::DiagnoseOutput;
use clp_bounds_cli::commands::estimate::EstimateOutput;
use clp_bounds_cli::commands::policy::PolicyOutput;
use clp_bounds_cli::data::{read_dataset, Layout};
use clp_bounds_cli::error::CliError;
use clp_bounds_cli::{plan, run};
use tempfile::TempDir;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("clp-bounds").chain(args.iter().copied())).expect("flags parse")
}

fn out(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn binary(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_clp-bounds"))
        .args(args)
        .env_remove("CLP_BOUNDS_THREADS")
        .output()
        .expect("binary runs")
}

fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_file(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// The bundled joint-po file with one outcome probability on row `row` replaced.
fn corrupt_row_sum(dir: &TempDir, row: usize) -> String {
    let text = std::fs::read_to_string(data("synthetic_joint_po.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[row].split(',').map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let k = header.iter().position(|h| *h == "m_1_0").unwrap();
    let v: f64 = fields[k].parse().unwrap();
    fields[k] = (v + 0.2).to_string();
    lines[row] = fields.join(",");
    write_file(dir, "corrupt.csv", &(lines.join("\n") + "\n"))
}

#[test]
fn estimate_on_bundled_data_orders_the_bounds() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "est");
    run(&cli(&["estimate", "--input", &data("synthetic_joint_po.csv"), "--output", &o])).unwrap();
    let res: EstimateOutput = read_json(Path::new(&o).join("bounds.json"));
    let r = &res.report;
    assert_eq!(res.nuisance_source, "plugin-csv");
    assert_eq!(r.n, 200);
    assert!(r.theta_l <= r.theta_u);
    assert!(r.ci.0 <= r.theta_l && r.theta_u <= r.ci.1);
    let csv = std::fs::read_to_string(Path::new(&o).join("bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn estimate_json_round_trips_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "est");
    run(&cli(&[
        "estimate", "--input", &data("synthetic_joint_po.csv"), "--output", &o, "--engine", "entropic",
    ]))
    .unwrap();
    let text = std::fs::read_to_string(Path::new(&o).join("bounds.json")).unwrap();
    let parsed: EstimateOutput = serde_json::from_str(&text).unwrap();
    let again = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    assert_eq!(again, text);
    let r = &parsed.report;
    let reparsed: EstimateOutput = serde_json::from_str(&again).unwrap();
    assert_eq!(reparsed, parsed);
    assert!(r.per_obs_l.iter().zip(&reparsed.report.per_obs_l).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(r.theta_l.to_bits(), reparsed.report.theta_l.to_bits());
    assert_eq!(r.v_u.to_bits(), reparsed.report.v_u.to_bits());
}

#[test]
fn resolved_eta_is_echoed() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "est");
    let input = data("synthetic_joint_po.csv");
    run(&cli(&[
        "estimate", "--input", &input, "--output", &o, "--engine", "entropic", "--eta-schedule", "log",
    ]))
    .unwrap();
    let res: EstimateOutput = read_json(Path::new(&o).join("bounds.json"));
    assert_eq!(res.engine, "entropic");
    assert_eq!(res.schedule.as_deref(), Some("log"));
    assert_eq!(res.hyperparameter, Some(2.0 * 200f64.ln()));
    assert_eq!(res.report.engine, clp_bounds::estimators::Engine::Entropic { eta: 2.0 * 200f64.ln() });

    let o2 = out(&dir, "est2");
    run(&cli(&[
        "estimate", "--input", &input, "--output", &o2, "--engine", "lse", "--eta-schedule", "sqrt", "--kappa", "0.5",
    ]))
    .unwrap();
    let res: EstimateOutput = read_json(Path::new(&o2).join("bounds.json"));
    assert_eq!(res.hyperparameter, Some(0.5 * 200f64.sqrt()));
}

#[test]
fn identical_flags_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let input = data("synthetic_joint_po.csv");
    let mut texts = Vec::new();
    for k in 0..2 {
        let o = out(&dir, &format!("run{k}"));
        run(&cli(&[
            "estimate", "--input", &input, "--output", &o, "--nuisances", "multinomial-logit", "--seed", "5",
        ]))
        .unwrap();
        texts.push(std::fs::read(Path::new(&o).join("bounds.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);

    let mut sims = Vec::new();
    for k in 0..2 {
        let o = out(&dir, &format!("sim{k}"));
        run(&cli(&[
            "simulate", "--n", "200", "--reps", "4", "--oracle-draws", "5000", "--seed", "3", "--output", &o,
        ]))
        .unwrap();
        sims.push((
            std::fs::read(Path::new(&o).join("simulation.json")).unwrap(),
            std::fs::read(Path::new(&o).join("simulation.csv")).unwrap(),
        ));
    }
    assert_eq!(sims[0], sims[1]);
}

#[test]
fn default_simulation_satisfies_the_rmse_identity() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "sim");
    run(&cli(&["simulate", "--output", &o])).unwrap();
    let result: clp_bounds::sim::SimResult = read_json(Path::new(&o).join("simulation.json"));
    assert_eq!(result.config.n, 1000);
    assert_eq!(result.config.levels, 3);
    assert_eq!(result.config.r, 0.3);
    assert_eq!(result.config.n_reps, 100);
    assert_eq!(result.cells.len(), 2);
    for c in &result.cells {
        assert_eq!(c.n_completed, 100);
        for (bias, sd, rmse) in [(c.bias_l, c.sd_l, c.rmse_l), (c.bias_u, c.sd_u, c.rmse_u)] {
            assert!((rmse * rmse - (bias * bias + sd * sd)).abs() <= 1e-12, "{rmse} {bias} {sd}");
        }
        assert!((0.0..=1.0).contains(&c.coverage_l) && (0.0..=1.0).contains(&c.coverage_u));
    }
    let csv = std::fs::read_to_string(Path::new(&o).join("simulation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn harmful_treatment_policy_treats_nobody() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "pol");
    run(&cli(&["policy", "--input", &data("harmful_effect.csv"), "--output", &o, "--lambda", "1"])).unwrap();
    let curve = std::fs::read_to_string(Path::new(&o).join("policy_lambda_1.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("x_1,pi"));
    let pis: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(pis.len(), 101);
    assert!(pis.iter().all(|&p| p <= 0.05), "max pi {}", pis.iter().copied().fold(0.0, f64::max));
    let report: PolicyOutput = read_json(Path::new(&o).join("policy_lambda_1.json"));
    assert_eq!(report.lambda, 1.0);
    assert_eq!(report.engine, "entropic");
    assert_eq!(report.hyperparameter, Some(2.0 * 500f64.ln()));
    assert!((report.evaluation.theta_u - report.fit.bound).abs() <= 1e-10);
}

#[test]
fn lambda_sweep_writes_one_report_per_value() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "sweep");
    run(&cli(&[
        "policy", "--input", &data("harmful_effect.csv"), "--output", &o, "--lambda", "1,0.5,0,-1", "--utilities",
        "1,2,3", "--restarts", "2", "--engine", "bfs",
    ]))
    .unwrap();
    let mut names: Vec<String> = std::fs::read_dir(&o)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut expected: Vec<String> = ["-1", "0", "0.5", "1"]
        .iter()
        .flat_map(|l| [format!("policy_lambda_{l}.csv"), format!("policy_lambda_{l}.json")])
        .collect();
    expected.sort();
    assert_eq!(names, expected);
    for l in ["-1", "0", "0.5", "1"] {
        let report: PolicyOutput = read_json(Path::new(&o).join(format!("policy_lambda_{l}.json")));
        assert_eq!(report.lambda, l.parse::<f64>().unwrap());
        assert_eq!(report.fit.n_restarts, 3);
    }
}

#[test]
fn diagnose_reports_feasibility() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "truth");
    run(&cli(&[
        "diagnose", "--input", &data("synthetic_joint_po.csv"), "--nuisances", "simulated-truth", "--output", &o,
    ]))
    .unwrap();
    let res: DiagnoseOutput = read_json(Path::new(&o).join("diagnose.json"));
    assert_eq!(res.summary.n, 200);
    assert_eq!(res.summary.fraction_infeasible, 0.0);
    assert!(res.observations.iter().all(|d| d.feasible && d.r1.is_some()));
    assert!(res.observations.iter().all(|d| d.theta_l.unwrap() <= d.theta_u.unwrap() + 1e-12));

    let o = out(&dir, "iv");
    run(&cli(&[
        "diagnose", "--setting", "iv", "--input", &data("iv_perturbed.csv"), "--objective", "compliers", "--output", &o,
    ]))
    .unwrap();
    let res: DiagnoseOutput = read_json(Path::new(&o).join("diagnose.json"));
    assert!(res.summary.fraction_infeasible > 0.0);
    let infeasible = res.observations.iter().filter(|d| !d.feasible).count();
    assert_eq!(infeasible, res.summary.n_infeasible);
    assert!(res.observations.iter().filter(|d| !d.feasible).all(|d| d.theta_l.is_none()));
    let csv = std::fs::read_to_string(Path::new(&o).join("diagnose.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn point_identified_objective_has_zero_gaps() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "ate");
    run(&cli(&[
        "diagnose", "--input", &data("synthetic_joint_po.csv"), "--objective", "ate", "--output", &o,
    ]))
    .unwrap();
    let res: DiagnoseOutput = read_json(Path::new(&o).join("diagnose.json"));
    assert_eq!(res.summary.n_point_identified, 200);
    for d in &res.observations {
        assert!(d.point_identified);
        assert_eq!((d.gap_l, d.gap_u), (Some(0.0), Some(0.0)));
    }
    let o = out(&dir, "not");
    run(&cli(&["diagnose", "--input", &data("synthetic_joint_po.csv"), "--output", &o])).unwrap();
    let res: DiagnoseOutput = read_json(Path::new(&o).join("diagnose.json"));
    assert!(res.observations.iter().all(|d| !d.point_identified));
    assert!(res.observations.iter().any(|d| d.gap_l.unwrap() > 0.0));
}

#[test]
fn malformed_probabilities_exit_with_the_row_index() {
    let dir = TempDir::new().unwrap();
    let input = corrupt_row_sum(&dir, 17);
    let o = out(&dir, "est");
    let result = binary(&["estimate", "--input", &input, "--output", &o]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("row 17"), "{stderr}");
    assert!(!Path::new(&o).exists());
}

#[test]
fn bad_simulation_and_policy_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "sim");
    let result = binary(&["simulate", "--reps", "0", "--output", &o]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!Path::new(&o).exists());

    let o = out(&dir, "pol");
    let result = binary(&["policy", "--input", &data("harmful_effect.csv"), "--lambda", "0", "--output", &o]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("strictly positive utilities"), "{stderr}");
    assert!(!Path::new(&o).exists());
}

#[test]
fn io_failures_exit_4() {
    let dir = TempDir::new().unwrap();
    let result = binary(&["estimate", "--input", &out(&dir, "missing.csv"), "--output", &out(&dir, "o")]);
    assert_eq!(result.status.code(), Some(4));

    let blocker = write_file(&dir, "blocker", "not a directory");
    let o = Path::new(&blocker).join("inside").display().to_string();
    let result = binary(&["estimate", "--input", &data("synthetic_joint_po.csv"), "--output", &o]);
    assert_eq!(result.status.code(), Some(4));
}

#[test]
fn success_exits_0_and_the_thread_variable_is_read() {
    let dir = TempDir::new().unwrap();
    let args = ["estimate", "--input", &data("synthetic_joint_po.csv"), "--output", &out(&dir, "o")];
    let ok = binary(&args);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let two = Process::new(env!("CARGO_BIN_EXE_clp-bounds"))
        .args(args)
        .env("CLP_BOUNDS_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(two.status.code(), Some(0));
    let zero = Process::new(env!("CARGO_BIN_EXE_clp-bounds"))
        .args(args)
        .env("CLP_BOUNDS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(zero.status.code(), Some(2));
}

/// Each invalid invocation must be rejected by the planning step, before any
/// solver runs, and must leave no output behind.
#[test]
fn validation_faults_are_caught_before_execution() {
    let dir = TempDir::new().unwrap();
    let jp = data("synthetic_joint_po.csv");
    let iv = data("iv_perturbed.csv");
    let harm = data("harmful_effect.csv");
    let two_x = write_file(&dir, "two_x.csv", "x_1,x_2,d,y\n0.1,0.2,0,1\n0.3,0.1,1,0\n-0.2,0.5,1,2\n");
    let stray = write_file(&dir, "stray.csv", "x_1,d,y,weight\n0.1,0,1,3\n0.2,1,0,3\n");
    let half = write_file(&dir, "half.csv", "x_1,d,y,m_0_0,m_0_1\n0.1,0,1,0.5,0.5\n0.2,1,0,0.5,0.5\n");
    let big_y = write_file(&dir, "big_y.csv", "x_1,d,y\n0.1,0,1\n0.2,1,3\n0.3,0,2\n");
    let frac_d = write_file(&dir, "frac_d.csv", "x_1,d,y\n0.1,0.5,1\n0.2,1,0\n");
    let text = write_file(&dir, "text.csv", "x_1,d,y\nabc,0,1\n0.2,1,0\n");
    let corrupt = corrupt_row_sum(&dir, 3);
    let o = out(&dir, "never");

    let faults: Vec<Vec<&str>> = vec![
        vec!["estimate", "--input", &jp, "--alpha", "1.5"],
        vec!["estimate", "--input", &jp, "--levels", "4"],
        vec!["estimate", "--input", &corrupt],
        vec!["estimate", "--input", &stray],
        vec!["estimate", "--input", &half],
        vec!["estimate", "--input", &big_y, "--levels", "3"],
        vec!["estimate", "--input", &frac_d],
        vec!["estimate", "--input", &text],
        vec!["estimate", "--input", &jp, "--setting", "iv"],
        vec!["estimate", "--input", &jp, "--objective", "compliers"],
        vec!["estimate", "--input", &iv, "--setting", "iv", "--objective", "oracle-best"],
        vec!["estimate", "--input", &jp, "--engine", "bfs", "--eta", "3"],
        vec!["estimate", "--input", &jp, "--engine", "entropic", "--eta", "-1"],
        vec!["estimate", "--input", &jp, "--engine", "entropic", "--xi", "1"],
        vec!["estimate", "--input", &jp, "--engine", "entropic", "--kappa", "0"],
        vec!["estimate", "--input", &iv, "--setting", "iv", "--objective", "ate", "--engine", "lse"],
        vec!["estimate", "--input", &two_x, "--nuisances", "simulated-truth"],
        vec!["estimate", "--input", &two_x, "--nuisances", "plugin-csv"],
        vec!["estimate", "--input", &two_x, "--nuisances", "multinomial-logit", "--folds", "1"],
        vec!["estimate", "--input", &jp, "--objective", "ate", "--treated", "2"],
        vec!["estimate", "--input", &jp, "--objective", "regret", "--lambda", "-1"],
        vec!["estimate", "--input", &jp, "--objective", "regret", "--utilities", "1,2"],
        vec!["estimate", "--input", &jp, "--objective", "regret", "--pi", "1.5"],
        vec!["policy", "--input", &iv, "--setting", "iv"],
        vec!["policy", "--input", &harm, "--lambda", "1,1"],
        vec!["policy", "--input", &harm, "--engine", "lse"],
        vec!["policy", "--input", &harm, "--lambda", "0"],
        vec!["policy", "--input", &harm, "--grid-points", "1"],
        vec!["policy", "--input", &harm, "--features", "polynomial", "--degree", "0"],
        vec!["simulate", "--reps", "0"],
        vec!["simulate", "--n", "10"],
        vec!["simulate", "--levels", "1"],
        vec!["simulate", "--r", "2"],
        vec!["simulate", "--rho", "1"],
        vec!["simulate", "--engines", "simplex"],
        vec!["simulate", "--oracle-draws", "1"],
        vec!["diagnose", "--input", &jp, "--eta", "0"],
        vec!["generate", "--design", "harmful", "--levels", "4"],
        vec!["generate", "--design", "sim", "--n", "1"],
        vec!["generate", "--design", "sim", "--perturb-r", "0.3", "--no-nuisances"],
    ];
    for fault in faults {
        let mut args = fault.clone();
        args.extend(["--output", &o]);
        let parsed = cli(&args);
        match plan(&parsed.command) {
            Err(CliError::Validation(_)) => {}
            Err(other) => panic!("{fault:?}: expected a validation error, got {other:?}"),
            Ok(_) => panic!("{fault:?}: planning accepted the invocation"),
        }
        let err = run(&parsed).expect_err("run must fail as well");
        assert_eq!(err.exit_code(), 2, "{fault:?}");
        assert!(!Path::new(&o).exists(), "{fault:?} produced output");
    }
}

#[test]
fn generated_data_reads_back() {
    let dir = TempDir::new().unwrap();
    for (design, setting, layout) in [
        ("sim", "joint-po", Layout::JointPo { arms: 2 }),
        ("iv", "iv", Layout::Iv),
        ("monotone", "joint-po", Layout::JointPo { arms: 2 }),
        ("no-effect", "joint-po", Layout::JointPo { arms: 2 }),
    ] {
        let path = out(&dir, &format!("{design}.csv"));
        run(&cli(&["generate", "--design", design, "--n", "50", "--seed", "4", "--perturb-r", "0.2", "--output", &path]))
            .unwrap();
        let ds = read_dataset(&PathBuf::from(&path), layout, None).unwrap();
        assert_eq!(ds.n(), 50);
        assert_eq!(ds.covariates, ["x_1"]);
        let nus = ds.nuisances.as_ref().unwrap();
        for nu in nus {
            nu.validate(1e-9).unwrap();
        }
        let o = out(&dir, &format!("{design}_est"));
        let objective = if setting == "iv" { "ate" } else { "not-optimal" };
        run(&cli(&["estimate", "--setting", setting, "--input", &path, "--objective", objective, "--output", &o]))
            .unwrap();
    }
    let bare = out(&dir, "bare.csv");
    run(&cli(&["generate", "--design", "sim", "--no-nuisances", "--output", &bare])).unwrap();
    let ds = read_dataset(&PathBuf::from(&bare), Layout::JointPo { arms: 2 }, None).unwrap();
    assert!(ds.nuisances.is_none());
    assert_eq!(ds.n(), 200);
}
