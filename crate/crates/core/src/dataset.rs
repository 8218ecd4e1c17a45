//! Labeled dataset production for the inventory family.
//!
//! Each row samples a parameter vector, solves the induced MDP for the
//! best quantile bound subject to a mean/variance ratio constraint, and
//! stores the features next to the optimal risk and an encoding of the
//! optimal policy. Rows are generated on independent RNG substreams so
//! the output is a pure function of the config, whatever the thread
//! count.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{allowable_actions, sample_params, states, InventoryError, InventoryParams};
use crate::mdp::DeterministicPolicy;
use crate::risk::{
    optimize, policy_moments, risk_value, Constraint, MomentMethod, Objective, OptimizeOptions,
    RiskError, RiskSpec, Sense,
};

/// How the optimal policy is written into the label vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// One `(immediate, advance)` pair per state, in state order.
    #[default]
    Actions,
    /// The policy's canonical enumeration index as a single number.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Number of rows to emit.
    pub n: usize,
    #[serde(rename = "M")]
    pub capacity: usize,
    pub gamma: f64,
    /// Ratio bound for the mean/variance feasibility constraint.
    #[serde(default)]
    pub q: f64,
    pub seed: u64,
    #[serde(default)]
    pub label_mode: LabelMode,
    #[serde(default = "default_resample_attempts")]
    pub max_resample_attempts: usize,
}

fn default_resample_attempts() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub features: Vec<f64>,
    pub label_rho: f64,
    /// Policy part of the label, without the leading risk value.
    pub label_policy: Vec<f64>,
}

impl DatasetRow {
    /// Complete label vector as a network target: risk first, policy after.
    pub fn full_label(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.label_policy.len());
        out.push(self.label_rho);
        out.extend_from_slice(&self.label_policy);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenReport {
    pub config: GenConfig,
    pub rows: usize,
    pub total_resamples: u64,
    pub max_attempts_used: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Instance(#[from] InventoryError),
    #[error(transparent)]
    Solve(#[from] RiskError),
    #[error("row {row}: no feasible instance within {attempts} sampling attempts")]
    ResampleBudget { row: usize, attempts: usize },
    #[error("label vector cannot be decoded: {0}")]
    Undecodable(String),
    #[error("malformed dataset csv: {0}")]
    Csv(String),
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n == 0 {
            return Err(DatasetError::Config("n must be at least 1".into()));
        }
        if self.capacity == 0 {
            return Err(DatasetError::Config("M must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(DatasetError::Config("gamma must lie in (0, 1)".into()));
        }
        if !self.q.is_finite() {
            return Err(DatasetError::Config("q must be finite".into()));
        }
        if self.max_resample_attempts == 0 {
            return Err(DatasetError::Config(
                "max_resample_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the label vector `[rho, ...policy]` for one solved instance.
pub fn encode_labels(
    policy: &DeterministicPolicy,
    rho: f64,
    mode: LabelMode,
    capacity: usize,
) -> Vec<f64> {
    match mode {
        LabelMode::Actions => {
            let mut out = Vec::with_capacity(1 + 2 * policy.actions.len());
            out.push(rho);
            for (s, &a) in states(capacity).iter().zip(&policy.actions) {
                let act = allowable_actions(*s, capacity)[a];
                out.push(act.immediate as f64);
                out.push(act.advance as f64);
            }
            out
        }
        LabelMode::Index => vec![rho, policy.canonical_index as f64],
    }
}

/// Inverse of `encode_labels`. Action pairs snap to the nearest allowable
/// action of their state (ties keep the earlier action); indices must
/// round into the valid policy range.
pub fn decode_labels(
    label: &[f64],
    mode: LabelMode,
    capacity: usize,
) -> Result<(f64, DeterministicPolicy), DatasetError> {
    if label.iter().any(|x| !x.is_finite()) {
        return Err(DatasetError::Undecodable(
            "label contains a non-finite entry".into(),
        ));
    }
    let all_states = states(capacity);
    let rho = *label
        .first()
        .ok_or_else(|| DatasetError::Undecodable("label is empty".into()))?;
    let actions = match mode {
        LabelMode::Actions => {
            if label.len() != 1 + 2 * all_states.len() {
                return Err(DatasetError::Undecodable(format!(
                    "expected {} entries for capacity {}, got {}",
                    1 + 2 * all_states.len(),
                    capacity,
                    label.len()
                )));
            }
            let mut actions = Vec::with_capacity(all_states.len());
            for (k, s) in all_states.iter().enumerate() {
                let (x, y) = (label[1 + 2 * k], label[2 + 2 * k]);
                let mut best = 0;
                let mut best_d2 = f64::INFINITY;
                for (a, act) in allowable_actions(*s, capacity).iter().enumerate() {
                    let dx = x - act.immediate as f64;
                    let dy = y - act.advance as f64;
                    let d2 = dx * dx + dy * dy;
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = a;
                    }
                }
                actions.push(best);
            }
            actions
        }
        LabelMode::Index => {
            if label.len() != 2 {
                return Err(DatasetError::Undecodable(format!(
                    "expected 2 entries in index mode, got {}",
                    label.len()
                )));
            }
            let count: u64 = all_states
                .iter()
                .map(|s| allowable_actions(*s, capacity).len() as u64)
                .product();
            let raw = label[1].round();
            if raw < 0.0 || raw >= count as f64 {
                return Err(DatasetError::Undecodable(format!(
                    "policy index {} outside [0, {count})",
                    label[1]
                )));
            }
            let mut rest = raw as u64;
            let mut actions = vec![0usize; all_states.len()];
            for (k, s) in all_states.iter().enumerate().rev() {
                let radix = allowable_actions(*s, capacity).len() as u64;
                actions[k] = (rest % radix) as usize;
                rest /= radix;
            }
            actions
        }
    };
    let mut canonical_index = 0u64;
    for (s, &a) in all_states.iter().zip(&actions) {
        canonical_index =
            canonical_index * allowable_actions(*s, capacity).len() as u64 + a as u64;
    }
    Ok((rho, DeterministicPolicy { actions, canonical_index }))
}

fn solve_row(cfg: &GenConfig, row: usize) -> Result<(DatasetRow, u64), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(row as u64);
    let mut resamples = 0u64;
    for _ in 0..cfg.max_resample_attempts {
        let params: InventoryParams<f64> = sample_params(&mut rng, cfg.capacity, cfg.gamma);
        let mdp = params.build_mdp()?;
        let spec = RiskSpec {
            objective: Objective::VarThreshold { alpha: params.risk_level },
            constraints: vec![Constraint::RatioGt { q: cfg.q }],
            sense: Sense::Maximize,
        };
        let report = optimize(
            &mdp,
            &spec,
            &OptimizeOptions { method: MomentMethod::Direct, parallel: false },
        )?;
        match report.optimal {
            Some(best) => {
                let policy = DeterministicPolicy {
                    actions: best.actions,
                    canonical_index: best.policy_index,
                };
                let label = encode_labels(&policy, best.risk, cfg.label_mode, cfg.capacity);
                let row = DatasetRow {
                    features: params.feature_vector(),
                    label_rho: label[0],
                    label_policy: label[1..].to_vec(),
                };
                return Ok((row, resamples));
            }
            None => resamples += 1,
        }
    }
    Err(DatasetError::ResampleBudget {
        row,
        attempts: cfg.max_resample_attempts,
    })
}

/// Samples, solves, and labels `cfg.n` instances. Row `i` is a pure
/// function of `(cfg.seed, i)`; infeasible draws are retried on the same
/// substream until the attempt budget runs out.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(Vec<DatasetRow>, GenReport), DatasetError> {
    cfg.validate()?;
    let start = Instant::now();
    let results: Vec<Result<(DatasetRow, u64), DatasetError>> = (0..cfg.n)
        .into_par_iter()
        .map(|row| solve_row(cfg, row))
        .collect();
    let mut rows = Vec::with_capacity(cfg.n);
    let mut total_resamples = 0u64;
    let mut max_attempts_used = 1usize;
    for item in results {
        let (row, resamples) = item?;
        total_resamples += resamples;
        max_attempts_used = max_attempts_used.max(resamples as usize + 1);
        rows.push(row);
    }
    let report = GenReport {
        config: cfg.clone(),
        rows: rows.len(),
        total_resamples,
        max_attempts_used,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok((rows, report))
}

/// Column names: the scalar parameters, the demand pmf, the optimal risk,
/// then the policy encoding.
pub fn csv_header(capacity: usize, mode: LabelMode) -> String {
    let mut out = String::from("p_r,p_s,c1,c2,c_b,c_f,c_h,beta1,beta2,alpha");
    for d in 0..=2 * capacity {
        let _ = write!(out, ",d{d}");
    }
    out.push_str(",rho_star");
    match mode {
        LabelMode::Actions => {
            for k in 0..states(capacity).len() {
                let _ = write!(out, ",k1_s{k},k2_s{k}");
            }
        }
        LabelMode::Index => out.push_str(",policy_index"),
    }
    out
}

/// Serializes rows with 17 significant digits so every f64 round-trips.
pub fn rows_to_csv(rows: &[DatasetRow], capacity: usize, mode: LabelMode) -> String {
    let mut out = csv_header(capacity, mode);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for value in row
            .features
            .iter()
            .chain(std::iter::once(&row.label_rho))
            .chain(&row.label_policy)
        {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{value:.16e}");
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Parses text produced by `rows_to_csv` (header included).
pub fn rows_from_csv(
    text: &str,
    capacity: usize,
    mode: LabelMode,
) -> Result<Vec<DatasetRow>, DatasetError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DatasetError::Csv("empty file".into()))?;
    let expected = csv_header(capacity, mode);
    if header.trim_end() != expected {
        return Err(DatasetError::Csv(format!(
            "header mismatch: expected `{expected}`"
        )));
    }
    let feature_len = 11 + 2 * capacity;
    let policy_len = match mode {
        LabelMode::Actions => 2 * states(capacity).len(),
        LabelMode::Index => 1,
    };
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| DatasetError::Csv(format!("line {}: {e}", k + 2)))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != feature_len + 1 + policy_len {
            return Err(DatasetError::Csv(format!(
                "line {}: expected {} columns, got {}",
                k + 2,
                feature_len + 1 + policy_len,
                values.len()
            )));
        }
        rows.push(DatasetRow {
            features: values[..feature_len].to_vec(),
            label_rho: values[feature_len],
            label_policy: values[feature_len + 1..].to_vec(),
        });
    }
    Ok(rows)
}

/// Re-solves a row's instance from its feature vector and checks that the
/// stored label matches: the decoded policy's objective value must equal
/// the stored risk within `tol`. Returns the recomputed risk.
pub fn verify_row(row: &DatasetRow, cfg: &GenConfig, tol: f64) -> Result<f64, DatasetError> {
    let params = InventoryParams::<f64>::from_features(&row.features, cfg.gamma)?;
    let mdp = params.build_mdp()?;
    let (_, policy) = decode_labels(&row.full_label(), cfg.label_mode, cfg.capacity)?;
    let moments = policy_moments(&mdp, &policy.actions, MomentMethod::Direct)?;
    let rho = risk_value(
        &moments,
        &Objective::VarThreshold { alpha: params.risk_level },
    )?;
    if (rho - row.label_rho).abs() > tol {
        return Err(DatasetError::Undecodable(format!(
            "stored risk {} does not match recomputed {rho}",
            row.label_rho
        )));
    }
    Ok(rho)
}
