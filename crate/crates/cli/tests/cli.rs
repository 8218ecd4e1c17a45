//! End-to-end tests driving the compiled binary through every subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use varisk::dataset::{decode_labels, rows_from_csv, LabelMode};
use varisk::risk::{optimize, Constraint, Objective, OptimizeOptions, RiskReport, RiskSpec, Sense};
use varisk::InventoryParams64;

const BIN: &str = env!("CARGO_BIN_EXE_varisk");

const INV_M1: &str = r#"{
  "p_r": 8.0, "p_s": 1.0, "c1": 5.0, "c2": 3.0, "c_b": 1.0, "c_f": 1.0, "c_h": 0.5,
  "beta1": 0.9, "beta2": 0.5, "alpha": 0.3,
  "f_D": [0.3, 0.5, 0.2],
  "M": 1, "gamma": 0.95
}"#;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("varisk-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn put(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn missing_required_flag_exits_one() {
    let out = run(&["solve"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_instance_exits_two() {
    let dir = scratch("badjson");
    let path = dir.join("broken.json");
    put(&path, "{ not json");
    let out = run(&["solve", "--instance", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_instance_field_exits_two() {
    let dir = scratch("extrafield");
    let path = dir.join("inv.json");
    put(
        &path,
        &INV_M1.replacen("\"p_r\"", "\"c_l\": 1.0, \"p_r\"", 1),
    );
    let out = run(&["solve", "--instance", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn conflicting_flag_groups_exit_one() {
    let dir = scratch("conflicts");
    let inst = dir.join("inv.json");
    put(&inst, INV_M1);
    let spec = dir.join("spec.json");
    put(&spec, r#"{"objective": "mean"}"#);
    let out = run(&[
        "solve",
        "--instance",
        inst.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--alpha",
        "0.5",
    ]);
    assert_eq!(code(&out), 1);

    let cfg = dir.join("gen.json");
    put(&cfg, r#"{"n": 1, "M": 1, "gamma": 0.95, "seed": 0}"#);
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "5",
        "--out",
        dir.join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn solve_report_matches_library_recomputation() {
    let dir = scratch("solvelib");
    let inst = dir.join("inv.json");
    put(&inst, INV_M1);
    let report_path = dir.join("report.json");
    let out = run(&[
        "solve",
        "--instance",
        inst.to_str().unwrap(),
        "--q",
        "0",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let cli_report: RiskReport<f64> =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

    let params: InventoryParams64 = serde_json::from_str(INV_M1).unwrap();
    let mdp = params.build_mdp().unwrap();
    let spec = RiskSpec {
        objective: Objective::VarThreshold { alpha: params.risk_level },
        constraints: vec![Constraint::RatioGt { q: 0.0 }],
        sense: Sense::Maximize,
    };
    let expected = optimize(&mdp, &spec, &OptimizeOptions::default()).unwrap();

    assert_eq!(cli_report.feasible_count, expected.feasible_count);
    let got = cli_report.optimal.unwrap();
    let want = expected.optimal.unwrap();
    assert_eq!(got.policy_index, want.policy_index);
    assert_eq!(got.actions, want.actions);
    assert_eq!(got.risk, want.risk);
    assert_eq!(got.mean, want.mean);
    assert_eq!(got.variance, want.variance);
}

#[test]
fn raw_mdp_document_solves_in_closed_form() {
    let dir = scratch("rawmdp");
    let inst = dir.join("chain.json");
    put(
        &inst,
        r#"{
  "states": ["s"],
  "actions": [["stay"]],
  "transitions": [[0, 0, 0, 1.0]],
  "rewards": [[0, 0, 0, 1.0, 1.0]],
  "initial": [1.0],
  "gamma": 0.5
}"#,
    );
    let out = run(&[
        "solve",
        "--instance",
        inst.to_str().unwrap(),
        "--alpha",
        "0.9",
        "--q",
        "0",
    ]);
    assert_eq!(code(&out), 0);
    let report: RiskReport<f64> = serde_json::from_str(&stdout(&out)).unwrap();
    let best = report.optimal.unwrap();
    assert_eq!(best.mean, 2.0);
    assert_eq!(best.variance, 0.0);
    assert_eq!(best.risk, 2.0);
}

#[test]
fn infeasible_instance_exits_three_with_null_optimal() {
    let dir = scratch("infeasible");
    let inst = dir.join("chain.json");
    put(
        &inst,
        r#"{
  "states": ["s"],
  "actions": [["stay"]],
  "transitions": [[0, 0, 0, 1.0]],
  "rewards": [[0, 0, 0, -1.0, 1.0]],
  "initial": [1.0],
  "gamma": 0.5
}"#,
    );
    let report_path = dir.join("report.json");
    let out = run(&[
        "solve",
        "--instance",
        inst.to_str().unwrap(),
        "--alpha",
        "0.9",
        "--q",
        "0",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(value["optimal"].is_null());
    assert_eq!(value["feasible_count"], 0);
}

#[test]
fn gen_data_is_byte_identical_across_threads_and_reruns() {
    let dir = scratch("gendet");
    let args = |csv: &Path, threads: &str| {
        vec![
            "--threads".to_string(),
            threads.to_string(),
            "gen-data".to_string(),
            "--n".to_string(),
            "12".to_string(),
            "--M".to_string(),
            "1".to_string(),
            "--seed".to_string(),
            "5".to_string(),
            "--out".to_string(),
            csv.to_str().unwrap().to_string(),
            "--report".to_string(),
            csv.with_extension("report.json").to_str().unwrap().to_string(),
        ]
    };
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    let c = dir.join("c.csv");
    for (csv, threads) in [(&a, "1"), (&b, "4"), (&c, "1")] {
        let out = Command::new(BIN).args(args(csv, threads)).output().unwrap();
        assert_eq!(code(&out), 0);
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    assert_eq!(bytes_a, std::fs::read(&c).unwrap());
}

#[test]
fn var_function_curve_is_nondecreasing() {
    let dir = scratch("varfn");
    let inst = dir.join("inv.json");
    put(&inst, INV_M1);
    let out = run(&[
        "var-function",
        "--instance",
        inst.to_str().unwrap(),
        "--tau-min",
        "-50",
        "--tau-max",
        "150",
        "--steps",
        "60",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tau,prob"));
    let probs: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 60);
    for window in probs.windows(2) {
        assert!(window[1] >= window[0]);
    }
    assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn dataset_row_resolved_by_solve_reproduces_labels() {
    let dir = scratch("rowsolve");
    let csv = dir.join("rows.csv");
    let out = run(&[
        "gen-data",
        "--n",
        "3",
        "--M",
        "1",
        "--gamma",
        "0.95",
        "--seed",
        "9",
        "--out",
        csv.to_str().unwrap(),
        "--report",
        dir.join("rep.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let text = std::fs::read_to_string(&csv).unwrap();
    let rows = rows_from_csv(&text, 1, LabelMode::Actions).unwrap();
    let row = &rows[0];
    let (row_rho, row_policy) = decode_labels(&row.full_label(), LabelMode::Actions, 1).unwrap();

    let params = InventoryParams64::from_features(&row.features, 0.95).unwrap();
    let inst = dir.join("row0.json");
    put(&inst, &serde_json::to_string(&params).unwrap());
    let out = run(&[
        "solve",
        "--instance",
        inst.to_str().unwrap(),
        "--q",
        "0",
    ]);
    assert_eq!(code(&out), 0);
    let report: RiskReport<f64> = serde_json::from_str(&stdout(&out)).unwrap();
    let best = report.optimal.unwrap();
    assert_eq!(best.policy_index, row_policy.canonical_index);
    assert_eq!(best.risk, row_rho);
}

#[test]
fn train_is_deterministic_and_predict_runs_the_model() {
    let dir = scratch("trainpredict");
    let csv = dir.join("rows.csv");
    let out = run(&[
        "gen-data",
        "--n",
        "40",
        "--M",
        "1",
        "--seed",
        "11",
        "--out",
        csv.to_str().unwrap(),
        "--report",
        dir.join("rep.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let model_a = dir.join("model_a.json");
    let model_b = dir.join("model_b.json");
    for model in [&model_a, &model_b] {
        let out = run(&[
            "train",
            "--data",
            csv.to_str().unwrap(),
            "--hidden",
            "8,6",
            "--epochs",
            "4",
            "--batch-size",
            "10",
            "--val-fraction",
            "0.2",
            "--seed",
            "3",
            "--model-out",
            model.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(&model_a).unwrap(),
        std::fs::read(&model_b).unwrap()
    );
    let history_a = std::fs::read_to_string(dir.join("model_a.json.history.csv")).unwrap();
    let history_b = std::fs::read_to_string(dir.join("model_b.json.history.csv")).unwrap();
    assert_eq!(history_a, history_b);
    assert!(history_a.starts_with("epoch,train_loss,val_loss,val_hit_rate\n"));
    assert_eq!(history_a.lines().count(), 1 + 4);

    let text = std::fs::read_to_string(&csv).unwrap();
    let rows = rows_from_csv(&text, 1, LabelMode::Actions).unwrap();
    let features: Vec<String> = rows[0].features.iter().map(|v| v.to_string()).collect();
    let out = run(&[
        "predict",
        "--model",
        model_a.to_str().unwrap(),
        "--features",
        &features.join(","),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rho_hat = value["rho_hat"].as_f64().unwrap();
    assert!(rho_hat.is_finite());
    assert_eq!(value["prediction"].as_array().unwrap().len(), 7);
}

#[test]
fn simulate_reports_the_requested_episode_count() {
    let dir = scratch("sim");
    let inst = dir.join("inv.json");
    put(&inst, INV_M1);
    let out = run(&[
        "simulate",
        "--instance",
        inst.to_str().unwrap(),
        "--policy-index",
        "2",
        "--episodes",
        "800",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(value["episodes"], 800);
    assert!(value["variance"].as_f64().unwrap() >= 0.0);
    assert!(value["mean"].as_f64().unwrap().is_finite());
    assert!(value["horizon"].as_u64().unwrap() >= 1);
}
