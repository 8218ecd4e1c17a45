//! Return moments of discounted chains, risk functionals over (mean,
//! variance), the lower VaR envelope across policies, and constrained
//! policy optimization by exhaustive enumeration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::mdp::{Edge, MarkovRewardProcess, Mdp, MdpError};
use crate::normal::NormalError;
pub use crate::normal::{normal_cdf, normal_quantile};
use crate::sat::sat_chain;
use crate::scalar::{fl, solve_tol, Scalar};

/// Mean and variance of the discounted return, with the per-state value
/// and second-moment-correction vectors kept for diagnostics. For the
/// augmented route those vectors live on the augmented state space.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair<T> {
    pub mean: T,
    pub variance: T,
    pub v: Vec<T>,
    pub psi: Vec<T>,
}

/// Which state space the moment computation runs on: the chain itself,
/// with reward-law expectations folded into the linear systems, or the
/// reward-erasing augmented chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    Direct,
    Sat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective<T> {
    VarThreshold { alpha: T },
    VarQuantile { tau: T },
    ExpUtility { beta: T },
    MeanSd { k: T },
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint<T> {
    /// Feasible iff V > 0 and E/V > q, or V = 0 and E > 0 (the limit).
    RatioGt { q: T },
    MeanGe { min: T },
    VarianceLe { max: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec<T> {
    pub objective: Objective<T>,
    #[serde(default)]
    pub constraints: Vec<Constraint<T>>,
    #[serde(default)]
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord<T> {
    pub canonical_index: u64,
    pub mean: T,
    pub variance: T,
    pub objective: T,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum<T> {
    pub risk: T,
    pub policy_index: u64,
    pub actions: Vec<usize>,
    pub mean: T,
    pub variance: T,
}

/// Outcome of the exhaustive sweep; `optimal` is `None` exactly when no
/// policy satisfies the constraints, which is an outcome, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport<T> {
    pub records: Vec<PolicyRecord<T>>,
    pub optimal: Option<Optimum<T>>,
    pub feasible_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizeOptions {
    pub method: MomentMethod,
    pub parallel: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            method: MomentMethod::Direct,
            parallel: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum RiskError {
    #[error(transparent)]
    Model(#[from] MdpError),
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error(transparent)]
    Normal(#[from] NormalError),
    #[error("invalid risk spec: {0}")]
    Spec(String),
    #[error("linear solve residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("variance {value:e} is negative beyond the numerical tolerance")]
    NegativeVariance { value: f64 },
    #[error("threshold grid must be sorted ascending")]
    UnsortedGrid,
    #[error("no moment records supplied")]
    EmptyRecords,
}

impl<T: Scalar> RiskSpec<T> {
    pub fn validate(&self) -> Result<(), RiskError> {
        match self.objective {
            Objective::VarThreshold { alpha } => {
                if !(alpha > T::zero() && alpha < T::one()) {
                    return Err(RiskError::Spec(format!(
                        "confidence level {alpha} outside (0, 1)"
                    )));
                }
            }
            Objective::VarQuantile { tau } => {
                if !tau.is_finite() {
                    return Err(RiskError::Spec(format!("threshold {tau} not finite")));
                }
            }
            Objective::ExpUtility { beta } => {
                if !beta.is_finite() {
                    return Err(RiskError::Spec(format!("utility weight {beta} not finite")));
                }
            }
            Objective::MeanSd { k } => {
                if !k.is_finite() {
                    return Err(RiskError::Spec(format!("deviation weight {k} not finite")));
                }
            }
            Objective::Mean => {}
        }
        for c in &self.constraints {
            let value = match *c {
                Constraint::RatioGt { q } => q,
                Constraint::MeanGe { min } => min,
                Constraint::VarianceLe { max } => max,
            };
            if !value.is_finite() {
                return Err(RiskError::Spec(format!(
                    "constraint parameter {value} not finite"
                )));
            }
        }
        Ok(())
    }
}

fn check_residual<T: Scalar>(p: &[T], rhs: &[T], disc: T, x: &[T]) -> Result<(), RiskError> {
    let n = rhs.len();
    let mut worst = T::zero();
    let mut scale = T::one();
    for row in 0..n {
        let mut px = T::zero();
        for col in 0..n {
            px = px + p[row * n + col] * x[col];
        }
        worst = worst.max((x[row] - rhs[row] - disc * px).abs());
        scale = scale.max(T::one() + x[row].abs());
    }
    if worst > solve_tol::<T>() * scale {
        return Err(RiskError::Residual {
            residual: worst.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Solves `x = rhs + disc * P x` for a row-stochastic `P` and |disc| < 1.
fn solve_discounted<T: Scalar>(p: &[T], rhs: &[T], disc: T) -> Result<Vec<T>, RiskError> {
    let a = linalg::identity_minus_scaled(p, rhs.len(), disc);
    let x = linalg::solve_dense(&a, rhs)?;
    check_residual(p, rhs, disc, &x)?;
    Ok(x)
}

/// Expected discounted return per start state: `v = (I - gamma P)^{-1} r`.
pub fn solve_mean<T: Scalar>(p: &[T], r: &[T], gamma: T) -> Result<Vec<T>, RiskError> {
    solve_discounted(p, r, gamma)
}

/// Second-moment correction for a state-based reward: solves
/// `psi = theta + gamma^2 P psi` with
/// `theta_x = sum_y P(x,y) (r_x + gamma v_y)^2 - v_x^2`; the variance of
/// the return from x is `psi_x`, and `v` must come from `solve_mean`.
pub fn solve_variance<T: Scalar>(
    p: &[T],
    r: &[T],
    gamma: T,
    v: &[T],
) -> Result<Vec<T>, RiskError> {
    let n = r.len();
    let mut theta = vec![T::zero(); n];
    for x in 0..n {
        let mut acc = T::zero();
        for y in 0..n {
            let s = r[x] + gamma * v[y];
            acc = acc + p[x * n + y] * s * s;
        }
        theta[x] = acc - v[x] * v[x];
    }
    let psi = solve_discounted(p, &theta, gamma * gamma)?;
    clamp_nonnegative(psi)
}

/// Rounds tiny negative components (solver roundoff) up to zero and
/// rejects anything materially negative.
fn clamp_nonnegative<T: Scalar>(mut values: Vec<T>) -> Result<Vec<T>, RiskError> {
    let tol = solve_tol::<T>();
    for value in &mut values {
        if *value < T::zero() {
            if *value < -tol {
                return Err(RiskError::NegativeVariance {
                    value: value.to_f64().unwrap_or(f64::NAN),
                });
            }
            *value = T::zero();
        }
    }
    Ok(values)
}

/// States reachable from the support of `initial` along positive-mass
/// edges, as a membership mask.
fn reachable_mask<T: Scalar>(rows: &[&[Edge<T>]], initial: &[T]) -> Vec<bool> {
    let mut seen = vec![false; rows.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (x, &w) in initial.iter().enumerate() {
        if w != T::zero() {
            seen[x] = true;
            stack.push(x);
        }
    }
    while let Some(x) = stack.pop() {
        for e in rows[x] {
            if !seen[e.to] {
                seen[e.to] = true;
                stack.push(e.to);
            }
        }
    }
    seen
}

/// Moment computation over borrowed chain rows with transition-based
/// stochastic rewards: the reward law is folded into the expectations
/// feeding both linear systems.
///
/// The systems are solved on the reachable closure of the initial
/// distribution first, so the returned mean and variance are bit-exact
/// functions of that closure alone: two chains that differ only in
/// states the start distribution cannot reach produce identical moments,
/// which lets downstream exact tie-breaking engage instead of being
/// decided by elimination roundoff from irrelevant rows. Value entries
/// for the unreached states are recovered afterwards from the complement
/// system, with the closure values moved to the right-hand side.
fn moments_from_rows<T: Scalar>(
    rows: &[&[Edge<T>]],
    initial: &[T],
    gamma: T,
) -> Result<MomentPair<T>, RiskError> {
    let n = rows.len();
    let seen = reachable_mask(rows, initial);
    let inside: Vec<usize> = (0..n).filter(|&x| seen[x]).collect();

    let solve_block = |members: &[usize], rhs: &[T], disc: T| -> Result<Vec<T>, RiskError> {
        let k = members.len();
        let mut pos = vec![usize::MAX; n];
        for (i, &x) in members.iter().enumerate() {
            pos[x] = i;
        }
        let mut p = vec![T::zero(); k * k];
        for (i, &x) in members.iter().enumerate() {
            for e in rows[x] {
                if pos[e.to] != usize::MAX {
                    p[i * k + pos[e.to]] = p[i * k + pos[e.to]] + e.prob;
                }
            }
        }
        solve_discounted(&p, rhs, disc)
    };
    let mean_rhs = |members: &[usize], v: &[T]| -> Vec<T> {
        members
            .iter()
            .map(|&x| {
                rows[x].iter().fold(T::zero(), |acc, e| {
                    let mut out = acc + e.prob * e.mean_reward();
                    if seen[e.to] {
                        out = out + gamma * e.prob * v[e.to];
                    }
                    out
                })
            })
            .collect()
    };
    let var_rhs = |members: &[usize], v: &[T], psi: &[T]| -> Vec<T> {
        members
            .iter()
            .map(|&x| {
                let mut acc = T::zero();
                for e in rows[x] {
                    for &(j, d) in &e.rewards {
                        let s = j + gamma * v[e.to];
                        acc = acc + e.prob * d * s * s;
                    }
                    if seen[e.to] {
                        acc = acc + gamma * gamma * e.prob * psi[e.to];
                    }
                }
                acc - v[x] * v[x]
            })
            .collect()
    };

    let mut v = vec![T::zero(); n];
    let rhs = mean_rhs(&inside, &v);
    for (&x, value) in inside.iter().zip(solve_block(&inside, &rhs, gamma)?) {
        v[x] = value;
    }
    let mut psi = vec![T::zero(); n];
    let rhs = var_rhs(&inside, &v, &psi);
    let solved = clamp_nonnegative(solve_block(&inside, &rhs, gamma * gamma)?)?;
    for (&x, value) in inside.iter().zip(solved) {
        psi[x] = value;
    }

    if inside.len() < n {
        let outside: Vec<usize> = (0..n).filter(|&x| !seen[x]).collect();
        let rhs = mean_rhs(&outside, &v);
        for (&x, value) in outside.iter().zip(solve_block(&outside, &rhs, gamma)?) {
            v[x] = value;
        }
        let rhs = var_rhs(&outside, &v, &psi);
        let solved = clamp_nonnegative(solve_block(&outside, &rhs, gamma * gamma)?)?;
        for (&x, value) in outside.iter().zip(solved) {
            psi[x] = value;
        }
    }
    mix_moments(initial, v, psi)
}

/// Mixes per-state moments over the initial distribution:
/// `E = sum mu v`, `V = sum mu (psi + v^2) - E^2`.
fn mix_moments<T: Scalar>(initial: &[T], v: Vec<T>, psi: Vec<T>) -> Result<MomentPair<T>, RiskError> {
    let mean = linalg::dot(initial, &v);
    let mut second = T::zero();
    for ((&w, &vx), &px) in initial.iter().zip(&v).zip(&psi) {
        second = second + w * (px + vx * vx);
    }
    let mut variance = second - mean * mean;
    if variance < T::zero() {
        if variance < -solve_tol::<T>() {
            return Err(RiskError::NegativeVariance {
                value: variance.to_f64().unwrap_or(f64::NAN),
            });
        }
        variance = T::zero();
    }
    Ok(MomentPair {
        mean,
        variance,
        v,
        psi,
    })
}

/// Moments of the augmented chain itself, without undoing the one-step
/// reward delay; its mean is gamma times the chain's and its variance
/// gamma squared times.
pub fn augmented_moments<T: Scalar>(
    mrp: &MarkovRewardProcess<T>,
) -> Result<MomentPair<T>, RiskError> {
    let aug = sat_chain(mrp)?;
    let rows: Vec<&[Edge<T>]> = aug.chain.rows.iter().map(|r| r.as_slice()).collect();
    moments_from_rows(&rows, &aug.chain.initial, aug.chain.gamma)
}

/// Mean and variance of the discounted return of a reward chain.
pub fn return_stats<T: Scalar>(
    mrp: &MarkovRewardProcess<T>,
    method: MomentMethod,
) -> Result<MomentPair<T>, RiskError> {
    mrp.ensure_valid()?;
    match method {
        MomentMethod::Direct => {
            let rows: Vec<&[Edge<T>]> = mrp.rows.iter().map(|r| r.as_slice()).collect();
            moments_from_rows(&rows, &mrp.initial, mrp.gamma)
        }
        MomentMethod::Sat => {
            let stats = augmented_moments(mrp)?;
            let g = mrp.gamma;
            Ok(MomentPair {
                mean: stats.mean / g,
                variance: stats.variance / (g * g),
                v: stats.v,
                psi: stats.psi,
            })
        }
    }
}

/// Evaluates a risk functional at a (mean, variance) pair under the
/// normal approximation of the return law.
pub fn risk_value<T: Scalar>(m: &MomentPair<T>, objective: &Objective<T>) -> Result<T, RiskError> {
    if m.variance < T::zero() {
        return Err(RiskError::NegativeVariance {
            value: m.variance.to_f64().unwrap_or(f64::NAN),
        });
    }
    let sigma = m.variance.sqrt();
    match *objective {
        Objective::VarThreshold { alpha } => {
            if !(alpha > T::zero() && alpha < T::one()) {
                return Err(RiskError::Spec(format!(
                    "confidence level {alpha} outside (0, 1)"
                )));
            }
            if sigma == T::zero() {
                Ok(m.mean)
            } else {
                Ok(m.mean + sigma * normal_quantile(T::one() - alpha)?)
            }
        }
        Objective::VarQuantile { tau } => {
            if sigma == T::zero() {
                Ok(if tau < m.mean { T::one() } else { T::zero() })
            } else {
                Ok(T::one() - normal_cdf((tau - m.mean) / sigma))
            }
        }
        Objective::ExpUtility { beta } => Ok(m.mean + beta / fl::<T>(2.0) * m.variance),
        Objective::MeanSd { k } => Ok(m.mean - k * sigma),
        Objective::Mean => Ok(m.mean),
    }
}

/// Lower envelope of the per-policy return CDFs on a threshold grid.
/// Each entry of `moments` is one policy's (mean, variance), modeled as
/// normal or as a point mass when its variance is zero.
pub fn var_function<T: Scalar>(
    moments: &[(T, T)],
    grid: &[T],
) -> Result<Vec<(T, T)>, RiskError> {
    if moments.is_empty() {
        return Err(RiskError::EmptyRecords);
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(RiskError::UnsortedGrid);
    }
    let mut out = Vec::with_capacity(grid.len());
    for &tau in grid {
        let mut best = T::one();
        for &(mean, variance) in moments {
            let sigma = variance.sqrt();
            let cdf = if sigma == T::zero() {
                if tau < mean {
                    T::zero()
                } else {
                    T::one()
                }
            } else {
                normal_cdf((tau - mean) / sigma)
            };
            best = best.min(cdf);
        }
        out.push((tau, best));
    }
    Ok(out)
}

/// True when the moment pair meets every listed constraint.
pub fn satisfies<T: Scalar>(mean: T, variance: T, constraints: &[Constraint<T>]) -> bool {
    constraints.iter().all(|c| match *c {
        Constraint::RatioGt { q } => {
            if variance > T::zero() {
                mean / variance > q
            } else {
                mean > T::zero()
            }
        }
        Constraint::MeanGe { min } => mean >= min,
        Constraint::VarianceLe { max } => variance <= max,
    })
}

/// Moments of the chain a policy induces, without materializing it on
/// the direct path.
pub fn policy_moments<T: Scalar>(
    m: &Mdp<T>,
    actions: &[usize],
    method: MomentMethod,
) -> Result<MomentPair<T>, RiskError> {
    match method {
        MomentMethod::Direct => {
            let rows = m.policy_rows(actions)?;
            moments_from_rows(&rows, &m.initial, m.gamma)
        }
        MomentMethod::Sat => {
            let policy = m.policy_from_actions(actions.to_vec())?;
            let chain = m.induce_chain(&policy)?;
            return_stats(&chain, MomentMethod::Sat)
        }
    }
}

/// Sweeps every deterministic policy, scoring each against the spec, and
/// reports the feasible optimizer (lowest canonical index on ties). The
/// parallel pass reduces in index order and is bit-identical to the
/// sequential one.
pub fn optimize<T: Scalar>(
    m: &Mdp<T>,
    spec: &RiskSpec<T>,
    options: &OptimizeOptions,
) -> Result<RiskReport<T>, RiskError> {
    m.ensure_valid()?;
    spec.validate()?;
    let count = m.policy_count()?;
    let count_usize = usize::try_from(count).map_err(|_| MdpError::PolicyCountOverflow)?;

    let eval = |index: u64| -> Result<PolicyRecord<T>, RiskError> {
        let policy = m.policy_from_index(index)?;
        let stats = policy_moments(m, &policy.actions, options.method)?;
        let objective = risk_value(&stats, &spec.objective)?;
        Ok(PolicyRecord {
            canonical_index: index,
            mean: stats.mean,
            variance: stats.variance,
            objective,
            feasible: satisfies(stats.mean, stats.variance, &spec.constraints),
        })
    };

    let evaluated: Vec<Result<PolicyRecord<T>, RiskError>> = if options.parallel {
        (0..count).into_par_iter().map(eval).collect()
    } else {
        (0..count).map(eval).collect()
    };
    let mut records = Vec::with_capacity(count_usize);
    for result in evaluated {
        records.push(result?);
    }

    let mut feasible_count = 0usize;
    let mut winner: Option<&PolicyRecord<T>> = None;
    for record in &records {
        if !record.feasible {
            continue;
        }
        feasible_count += 1;
        let better = match winner {
            None => true,
            Some(best) => match spec.sense {
                Sense::Maximize => record.objective > best.objective,
                Sense::Minimize => record.objective < best.objective,
            },
        };
        if better {
            winner = Some(record);
        }
    }
    let optimal = match winner {
        None => None,
        Some(record) => {
            let policy = m.policy_from_index(record.canonical_index)?;
            Some(Optimum {
                risk: record.objective,
                policy_index: record.canonical_index,
                actions: policy.actions,
                mean: record.mean,
                variance: record.variance,
            })
        }
    };
    Ok(RiskReport {
        records,
        optimal,
        feasible_count,
    })
}
