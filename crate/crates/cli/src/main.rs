//! Command-line front end: solve single instances, trace quantile
//! curves, mass-produce labeled datasets, train and query the network,
//! and cross-check solutions by simulation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 infeasible instance. Every failure prints one line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use varisk::dataset::{
    csv_header, decode_labels, generate_dataset, rows_from_csv, rows_to_csv, GenConfig, LabelMode,
};
use varisk::inventory::{allowable_actions, feature_ranges, states};
use varisk::mlp::{train, AdamParams, TrainConfig};
use varisk::risk::{optimize, var_function, Constraint, MomentMethod, Objective, OptimizeOptions, PolicyRecord, RiskSpec, Sense};
use varisk::sim::{simulate_stats, SimConfig};
use varisk::{InventoryParams64, Mdp64, MlpModel64, RiskSpec64};

#[derive(Parser)]
#[command(
    name = "varisk",
    about = "Risk-sensitive tabular MDP toolkit: exact policy sweeps, quantile curves, dataset generation, network training, simulation",
    version
)]
struct Cli {
    /// Worker threads for parallel sweeps; changes wall time only, never output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance: sweep every deterministic policy and report the best feasible one.
    Solve(SolveArgs),
    /// Emit the lower envelope of per-policy return CDFs on a threshold grid as CSV.
    VarFunction(VarFunctionArgs),
    /// Sample, solve, and label instances into a dataset CSV.
    GenData(GenDataArgs),
    /// Fit the feed-forward regressor to a dataset CSV.
    Train(TrainArgs),
    /// Run a saved model on one feature vector.
    Predict(PredictArgs),
    /// Monte-Carlo estimate of one policy's return moments.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Direct,
    Sat,
}

impl From<MethodArg> for MomentMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Direct => MomentMethod::Direct,
            MethodArg::Sat => MomentMethod::Sat,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LabelModeArg {
    Actions,
    Index,
}

impl From<LabelModeArg> for LabelMode {
    fn from(m: LabelModeArg) -> Self {
        match m {
            LabelModeArg::Actions => LabelMode::Actions,
            LabelModeArg::Index => LabelMode::Index,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON: inventory parameters (has "p_r") or an MDP document (has "states").
    #[arg(long)]
    instance: PathBuf,
    /// Tail level for the quantile objective; defaults to the instance's own alpha field.
    #[arg(long)]
    alpha: Option<f64>,
    /// Mean/variance ratio bound for feasibility.
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    /// Full objective/constraint specification JSON; excludes --alpha and --q.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "direct")]
    method: MethodArg,
    /// Pick the lowest objective value instead of the highest.
    #[arg(long)]
    minimize: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VarFunctionArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long = "tau-min", allow_negative_numbers = true)]
    tau_min: f64,
    #[arg(long = "tau-max", allow_negative_numbers = true)]
    tau_max: f64,
    /// Grid points, evenly spaced over [tau-min, tau-max].
    #[arg(long, default_value_t = 101)]
    steps: usize,
    /// Restrict the envelope to policies passing this ratio bound.
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    #[arg(long, value_enum, default_value = "direct")]
    method: MethodArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Generation config JSON; excludes the individual sampling flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rows to generate.
    #[arg(long)]
    n: Option<usize>,
    /// Warehouse capacity.
    #[arg(long = "M")]
    capacity: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Mean/variance ratio bound used while labeling.
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "label-mode", value_enum)]
    label_mode: Option<LabelModeArg>,
    #[arg(long = "max-resample-attempts")]
    max_resample_attempts: Option<usize>,
    /// Dataset CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Generation report JSON path; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Hidden layer widths, comma separated; empty for a purely linear model.
    #[arg(long, default_value = "12,8")]
    hidden: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 50)]
    batch_size: usize,
    #[arg(long = "val-fraction", default_value_t = 0.2)]
    val_fraction: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    seed: u64,
    /// Model JSON path.
    #[arg(long = "model-out")]
    model_out: PathBuf,
    /// Per-epoch loss CSV path; defaults to the model path with a .history.csv suffix.
    #[arg(long = "history-out")]
    history_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON written by train.
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated feature vector.
    #[arg(long)]
    features: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Canonical index of the policy to roll out.
    #[arg(long = "policy-index")]
    policy_index: u64,
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    /// Truncation tolerance for the simulated returns.
    #[arg(long = "tail-epsilon", default_value_t = 1e-6)]
    tail_epsilon: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Data(String),
    Infeasible,
}

fn usage<S: Into<String>>(msg: S) -> CliError {
    CliError::Usage(msg.into())
}

fn data<E: std::fmt::Display>(context: &str, err: E) -> CliError {
    CliError::Data(format!("{context}: {err}"))
}

/// Versioned on-disk wrapper around a trained network.
#[derive(Serialize, Deserialize)]
struct SavedModel {
    format_version: u32,
    label_mode: LabelMode,
    capacity: usize,
    adam: AdamParams,
    model: MlpModel64,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| data(&format!("reading {}", path.display()), e))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| data(&format!("writing {}", path.display()), e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| data(&format!("writing {}", path.display()), e))
}

/// Loads an instance document, accepting either inventory parameters or
/// a raw MDP. Returns the MDP plus the instance's own tail level when it
/// has one.
fn load_instance(path: &Path) -> Result<(Mdp64, Option<f64>), CliError> {
    let text = read_file(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| data(&format!("parsing {}", path.display()), e))?;
    let object = value
        .as_object()
        .ok_or_else(|| CliError::Data(format!("{}: expected a JSON object", path.display())))?;
    if object.contains_key("p_r") {
        let params: InventoryParams64 = serde_json::from_value(value.clone())
            .map_err(|e| data(&format!("parsing inventory parameters in {}", path.display()), e))?;
        let alpha = params.risk_level;
        let mdp = params
            .build_mdp()
            .map_err(|e| data(&format!("building {}", path.display()), e))?;
        Ok((mdp, Some(alpha)))
    } else if object.contains_key("states") {
        let mdp: Mdp64 = serde_json::from_value(value.clone())
            .map_err(|e| data(&format!("parsing MDP document in {}", path.display()), e))?;
        Ok((mdp, None))
    } else {
        Err(CliError::Data(format!(
            "{}: unrecognized instance document (expected inventory parameters or an MDP)",
            path.display()
        )))
    }
}

fn solve(args: &SolveArgs) -> Result<(), CliError> {
    let (mdp, instance_alpha) = load_instance(&args.instance)?;
    let mut spec: RiskSpec64 = match &args.spec {
        Some(path) => {
            if args.alpha.is_some() || args.q.is_some() {
                return Err(usage("--spec excludes --alpha and --q"));
            }
            serde_json::from_str(&read_file(path)?)
                .map_err(|e| data(&format!("parsing {}", path.display()), e))?
        }
        None => {
            let alpha = args
                .alpha
                .or(instance_alpha)
                .ok_or_else(|| usage("no tail level: pass --alpha or use an instance that carries one"))?;
            RiskSpec {
                objective: Objective::VarThreshold { alpha },
                constraints: vec![Constraint::RatioGt { q: args.q.unwrap_or(0.0) }],
                sense: Sense::Maximize,
            }
        }
    };
    if args.minimize {
        spec.sense = Sense::Minimize;
    }
    let options = OptimizeOptions { method: args.method.into(), parallel: true };
    let report = optimize(&mdp, &spec, &options).map_err(|e| data("solving", e))?;
    let infeasible = report.optimal.is_none();
    let text = serde_json::to_string_pretty(&report).map_err(|e| data("serializing report", e))?;
    emit(&args.out, &text)?;
    if infeasible {
        return Err(CliError::Infeasible);
    }
    Ok(())
}

fn var_function_cmd(args: &VarFunctionArgs) -> Result<(), CliError> {
    if args.steps < 2 {
        return Err(usage("--steps must be at least 2"));
    }
    if !(args.tau_min <= args.tau_max) {
        return Err(usage("--tau-min must not exceed --tau-max"));
    }
    let (mdp, _) = load_instance(&args.instance)?;
    let spec = RiskSpec {
        objective: Objective::Mean,
        constraints: match args.q {
            Some(q) => vec![Constraint::RatioGt { q }],
            None => Vec::new(),
        },
        sense: Sense::Maximize,
    };
    let options = OptimizeOptions { method: args.method.into(), parallel: true };
    let report = optimize(&mdp, &spec, &options).map_err(|e| data("sweeping policies", e))?;
    let records: Vec<PolicyRecord<f64>> = if args.q.is_some() {
        report.records.into_iter().filter(|r| r.feasible).collect()
    } else {
        report.records
    };
    if records.is_empty() {
        return Err(CliError::Infeasible);
    }
    let grid: Vec<f64> = (0..args.steps)
        .map(|k| {
            args.tau_min
                + (args.tau_max - args.tau_min) * k as f64 / (args.steps - 1) as f64
        })
        .collect();
    let moments: Vec<(f64, f64)> = records.iter().map(|r| (r.mean, r.variance)).collect();
    let curve = var_function(&moments, &grid).map_err(|e| data("evaluating curve", e))?;
    let mut text = String::from("tau,prob\n");
    for (tau, p) in curve {
        text.push_str(&format!("{tau:.16e},{p:.16e}\n"));
    }
    emit(&args.out, text.trim_end())?;
    Ok(())
}

fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let cfg: GenConfig = match &args.config {
        Some(path) => {
            if args.n.is_some()
                || args.capacity.is_some()
                || args.gamma.is_some()
                || args.q.is_some()
                || args.seed.is_some()
                || args.label_mode.is_some()
                || args.max_resample_attempts.is_some()
            {
                return Err(usage("--config excludes the individual generation flags"));
            }
            serde_json::from_str(&read_file(path)?)
                .map_err(|e| data(&format!("parsing {}", path.display()), e))?
        }
        None => GenConfig {
            n: args.n.ok_or_else(|| usage("--n is required"))?,
            capacity: args.capacity.ok_or_else(|| usage("--M is required"))?,
            gamma: args.gamma.unwrap_or(0.95),
            q: args.q.unwrap_or(0.0),
            seed: args.seed.ok_or_else(|| usage("--seed is required"))?,
            label_mode: args.label_mode.map_or(LabelMode::Actions, Into::into),
            max_resample_attempts: args.max_resample_attempts.unwrap_or(100),
        },
    };
    let (rows, report) = generate_dataset(&cfg).map_err(|e| data("generating", e))?;
    write_file(&args.out, &rows_to_csv(&rows, cfg.capacity, cfg.label_mode))?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| data("serializing report", e))?;
    emit(&args.report, &text)?;
    Ok(())
}

/// Recovers capacity and label mode from a dataset header: the demand
/// columns fix the capacity and the trailing column names fix the mode.
fn sniff_header(header: &str) -> Result<(usize, LabelMode), CliError> {
    let tokens: Vec<&str> = header.trim_end().split(',').collect();
    let demand_cols = tokens
        .iter()
        .filter(|t| {
            t.strip_prefix('d')
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
        .count();
    if demand_cols == 0 || demand_cols % 2 == 0 {
        return Err(CliError::Data(
            "dataset header has no valid demand columns".into(),
        ));
    }
    let capacity = (demand_cols - 1) / 2;
    let mode = if tokens.last() == Some(&"policy_index") {
        LabelMode::Index
    } else {
        LabelMode::Actions
    };
    if header.trim_end() != csv_header(capacity, mode) {
        return Err(CliError::Data(format!(
            "dataset header does not match the expected layout for M={capacity}"
        )));
    }
    Ok((capacity, mode))
}

fn parse_hidden(spec: &str) -> Result<Vec<usize>, CliError> {
    let trimmed = spec.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|e| usage(format!("bad --hidden entry `{part}`: {e}")))
        })
        .collect()
}

fn train_cmd(args: &TrainArgs) -> Result<(), CliError> {
    let text = read_file(&args.data)?;
    let header = text
        .lines()
        .next()
        .ok_or_else(|| CliError::Data("dataset is empty".into()))?;
    let (capacity, mode) = sniff_header(header)?;
    let rows = rows_from_csv(&text, capacity, mode).map_err(|e| data("parsing dataset", e))?;
    if rows.is_empty() {
        return Err(CliError::Data("dataset has no rows".into()));
    }
    let features: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    let labels: Vec<Vec<f64>> = rows.iter().map(|r| r.full_label()).collect();
    let cfg = TrainConfig {
        hidden_dims: parse_hidden(&args.hidden)?,
        epochs: args.epochs,
        batch_size: args.batch_size,
        val_fraction: args.val_fraction,
        seed: args.seed,
        adam: AdamParams { learning_rate: args.lr, ..AdamParams::default() },
    };
    let hit = move |pred: &[f64], truth: &[f64]| {
        match (
            decode_labels(pred, mode, capacity),
            decode_labels(truth, mode, capacity),
        ) {
            (Ok((_, a)), Ok((_, b))) => a.actions == b.actions,
            _ => false,
        }
    };
    let (model, history) = train(&features, &labels, &feature_ranges(capacity), &cfg, &hit)
        .map_err(|e| data("training", e))?;

    let saved = SavedModel {
        format_version: 1,
        label_mode: mode,
        capacity,
        adam: cfg.adam,
        model,
    };
    let model_text =
        serde_json::to_string_pretty(&saved).map_err(|e| data("serializing model", e))?;
    write_file(&args.model_out, &model_text)?;

    let mut history_text = String::from("epoch,train_loss,val_loss,val_hit_rate\n");
    for e in 0..history.train_loss.len() {
        history_text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            e + 1,
            history.train_loss[e],
            history.val_loss[e],
            history.val_hit_rate[e]
        ));
    }
    let history_path = args.history_out.clone().unwrap_or_else(|| {
        let mut p = args.model_out.as_os_str().to_owned();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_file(&history_path, &history_text)?;
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let saved: SavedModel = serde_json::from_str(&read_file(&args.model)?)
        .map_err(|e| data(&format!("parsing {}", args.model.display()), e))?;
    if saved.format_version != 1 {
        return Err(CliError::Data(format!(
            "unsupported model format version {}",
            saved.format_version
        )));
    }
    let features: Vec<f64> = args
        .features
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Data(format!("bad feature `{part}`: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let raw = saved
        .model
        .predict(&features)
        .map_err(|e| data("running model", e))?;

    let mut output = serde_json::Map::new();
    output.insert("rho_hat".into(), serde_json::json!(raw[0]));
    output.insert("prediction".into(), serde_json::json!(raw));
    match decode_labels(&raw, saved.label_mode, saved.capacity) {
        Ok((_, policy)) => {
            let pairs: Vec<[usize; 2]> = states(saved.capacity)
                .iter()
                .zip(&policy.actions)
                .map(|(s, &a)| {
                    let act = allowable_actions(*s, saved.capacity)[a];
                    [act.immediate, act.advance]
                })
                .collect();
            output.insert("policy_index".into(), serde_json::json!(policy.canonical_index));
            output.insert("policy_actions".into(), serde_json::json!(pairs));
        }
        Err(e) => {
            output.insert("decode_error".into(), serde_json::json!(e.to_string()));
        }
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(output))
        .map_err(|e| data("serializing prediction", e))?;
    emit(&args.out, &text)?;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (mdp, _) = load_instance(&args.instance)?;
    let policy = mdp
        .policy_from_index(args.policy_index)
        .map_err(|e| data("selecting policy", e))?;
    let chain = mdp
        .induce_chain(&policy)
        .map_err(|e| data("inducing chain", e))?;
    let cfg = SimConfig {
        episodes: args.episodes,
        tail_epsilon: args.tail_epsilon,
        seed: args.seed,
    };
    let report = simulate_stats(&chain, &cfg).map_err(|e| data("simulating", e))?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| data("serializing report", e))?;
    emit(&args.out, &text)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(args) => solve(args),
        Command::VarFunction(args) => var_function_cmd(args),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Predict(args) => predict(args),
        Command::Simulate(args) => simulate(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Infeasible) => {
            eprintln!("infeasible: no policy satisfies the constraints");
            ExitCode::from(3)
        }
    }
}
