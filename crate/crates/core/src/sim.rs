//! Monte-Carlo simulation of Markov reward processes.
//!
//! Serves as an independent check on the closed-form moment solvers:
//! episodes are rolled out to a horizon chosen so the discarded tail is
//! provably smaller than a caller-supplied tolerance, and each episode
//! draws from its own counter-based generator stream so results do not
//! depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MarkovRewardProcess, MdpError};
use crate::scalar::{fl, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub episodes: usize,
    /// Bound on the absolute truncation bias of every simulated return.
    pub tail_epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport<T> {
    pub mean: T,
    pub variance: T,
    pub mean_se: T,
    pub variance_se: T,
    pub horizon: usize,
    pub episodes: usize,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] MdpError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("cdf grid must be sorted ascending")]
    UnsortedGrid,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.episodes == 0 {
            return Err(SimError::Config("episodes must be at least 1".into()));
        }
        if !(self.tail_epsilon > 0.0 && self.tail_epsilon.is_finite()) {
            return Err(SimError::Config("tail_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Smallest horizon T with gamma^T * r_max / (1 - gamma) below `eps`,
/// so that stopping every episode after T steps biases each return by
/// less than `eps`.
fn truncation_horizon<T: Scalar>(gamma: T, r_max: T, eps: T) -> usize {
    if r_max <= T::zero() {
        return 0;
    }
    let scale = r_max / (T::one() - gamma);
    let bound = |t: usize| gamma.powi(t as i32) * scale;
    let guess = (eps / scale).ln() / gamma.ln();
    let mut t = guess.to_f64().unwrap_or(0.0).ceil().max(0.0) as usize;
    while bound(t) >= eps {
        t += 1;
    }
    while t > 0 && bound(t - 1) < eps {
        t -= 1;
    }
    t
}

/// Inverse-CDF draw over weights listed in construction order. Entries
/// with zero mass are never chosen; rounding shortfall in the cumulative
/// sum falls through to the last positive entry.
fn pick<T: Scalar>(u: T, weights: impl Iterator<Item = T>) -> usize {
    let mut cumulative = T::zero();
    let mut fallback = 0;
    for (k, w) in weights.enumerate() {
        if w <= T::zero() {
            continue;
        }
        fallback = k;
        cumulative = cumulative + w;
        if u < cumulative {
            return k;
        }
    }
    fallback
}

fn episode_return<T: Scalar>(mrp: &MarkovRewardProcess<T>, horizon: usize, rng: &mut ChaCha8Rng) -> T {
    let draw = |rng: &mut ChaCha8Rng| fl::<T>(rng.random::<f64>());
    let u = draw(rng);
    let mut x = pick(u, mrp.initial.iter().copied());
    let mut ret = T::zero();
    let mut disc = T::one();
    for _ in 0..horizon {
        let row = &mrp.rows[x];
        let e = pick(draw(rng), row.iter().map(|edge| edge.prob));
        let edge = &row[e];
        let r = pick(draw(rng), edge.rewards.iter().map(|&(_, w)| w));
        ret = ret + disc * edge.rewards[r].0;
        disc = disc * mrp.gamma;
        x = edge.to;
    }
    ret
}

fn episode_returns<T: Scalar>(
    mrp: &MarkovRewardProcess<T>,
    cfg: &SimConfig,
) -> Result<(Vec<T>, usize), SimError> {
    cfg.validate()?;
    mrp.ensure_valid()?;
    let horizon = truncation_horizon(mrp.gamma, mrp.max_abs_reward(), fl(cfg.tail_epsilon));
    let returns: Vec<T> = (0..cfg.episodes)
        .into_par_iter()
        .map(|episode| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(episode as u64);
            episode_return(mrp, horizon, &mut rng)
        })
        .collect();
    Ok((returns, horizon))
}

/// Simulates `cfg.episodes` truncated returns and reports their sample
/// mean and unbiased variance together with standard errors (the
/// variance standard error uses the fourth central moment).
pub fn simulate_stats<T: Scalar>(
    mrp: &MarkovRewardProcess<T>,
    cfg: &SimConfig,
) -> Result<SimReport<T>, SimError> {
    let (returns, horizon) = episode_returns(mrp, cfg)?;
    let n = returns.len();
    let nf = fl::<T>(n as f64);
    let mean = returns.iter().fold(T::zero(), |acc, &r| acc + r) / nf;
    let (mut m2, mut m4) = (T::zero(), T::zero());
    for &r in &returns {
        let d2 = (r - mean) * (r - mean);
        m2 = m2 + d2;
        m4 = m4 + d2 * d2;
    }
    let variance = if n > 1 { m2 / fl(n as f64 - 1.0) } else { T::zero() };
    m4 = m4 / nf;
    let mean_se = (variance / nf).sqrt();
    let variance_se = if n > 1 {
        let shrink = fl::<T>((n as f64 - 3.0) / (n as f64 - 1.0));
        ((m4 - shrink * variance * variance) / nf).max(T::zero()).sqrt()
    } else {
        T::zero()
    };
    Ok(SimReport {
        mean,
        variance,
        mean_se,
        variance_se,
        horizon,
        episodes: n,
    })
}

/// Empirical distribution of the simulated returns evaluated on an
/// ascending grid: each entry is the fraction of episodes with return
/// at most the grid point.
pub fn empirical_cdf<T: Scalar>(
    mrp: &MarkovRewardProcess<T>,
    cfg: &SimConfig,
    grid: &[T],
) -> Result<Vec<(T, T)>, SimError> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(SimError::UnsortedGrid);
    }
    let (mut returns, _) = episode_returns(mrp, cfg)?;
    returns.sort_by(|a, b| a.partial_cmp(b).expect("returns are finite"));
    let nf = fl::<T>(returns.len() as f64);
    let mut below = 0;
    let mut out = Vec::with_capacity(grid.len());
    for &tau in grid {
        while below < returns.len() && returns[below] <= tau {
            below += 1;
        }
        out.push((tau, fl::<T>(below as f64) / nf));
    }
    Ok(out)
}
