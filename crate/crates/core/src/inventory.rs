//! Two-supplier inventory control instance family.
//!
//! A retailer with warehouse capacity `M` serves random demand each epoch.
//! Supplier one delivers immediately at a higher unit cost; supplier two is
//! cheaper, delivers one epoch later, and each epoch is available only with
//! probability `beta1` (when unavailable the retailer is compensated `p_s`
//! per ordered unit and nothing arrives). Unmet demand is backlogged per
//! unit with probability `beta2` at a discounted price, otherwise the sale
//! is lost. The builder turns a parameter set into the exact finite MDP
//! over states `(on_hand, inbound)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Edge, Mdp};
use crate::scalar::{fl, reward_key, Scalar};

/// Warehouse contents: units on the shelf and units arriving this epoch
/// from the slow supplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InventoryState {
    pub on_hand: usize,
    pub inbound: usize,
}

/// Order quantities placed this epoch: `immediate` from the fast supplier,
/// `advance` from the slow one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InventoryAction {
    pub immediate: usize,
    pub advance: usize,
}

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("invalid inventory parameters: {0}")]
    Invalid(String),
    #[error("feature vector of length {got} does not encode a parameter set")]
    FeatureLength { got: usize },
}

/// Economic and stochastic parameters of one instance.
///
/// Serialized field names follow the conventional short symbols so that
/// instances can be exchanged as compact JSON documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryParams<T> {
    #[serde(rename = "p_r")]
    pub retail_price: T,
    /// Compensation per unit of an advance order the supplier fails to fill.
    #[serde(rename = "p_s")]
    pub shortfall_comp: T,
    #[serde(rename = "c1")]
    pub immediate_cost: T,
    #[serde(rename = "c2")]
    pub advance_cost: T,
    /// Price reduction granted on each backlogged unit.
    #[serde(rename = "c_b")]
    pub backlog_discount: T,
    /// Fixed fee charged once per supplier used in an epoch.
    #[serde(rename = "c_f")]
    pub order_fee: T,
    #[serde(rename = "c_h")]
    pub holding_cost: T,
    /// Probability that the slow supplier can deliver this epoch.
    #[serde(rename = "beta1")]
    pub availability: T,
    /// Probability that an unserved customer accepts backlogging.
    #[serde(rename = "beta2")]
    pub backlog_prob: T,
    /// Tail level used when the instance is scored with a quantile objective.
    #[serde(rename = "alpha")]
    pub risk_level: T,
    /// Demand distribution on {0, ..., 2M}.
    #[serde(rename = "f_D")]
    pub demand_pmf: Vec<T>,
    #[serde(rename = "M")]
    pub capacity: usize,
    pub gamma: T,
}

/// All warehouse states with `on_hand + inbound <= capacity`, ordered
/// lexicographically.
pub fn states(capacity: usize) -> Vec<InventoryState> {
    let mut out = Vec::new();
    for on_hand in 0..=capacity {
        for inbound in 0..=capacity - on_hand {
            out.push(InventoryState { on_hand, inbound });
        }
    }
    out
}

/// Position of `state` in the `states(capacity)` ordering.
pub fn state_index(state: InventoryState, capacity: usize) -> usize {
    let i = state.on_hand;
    debug_assert!(i + state.inbound <= capacity);
    i * (capacity + 1) - i * (i.max(1) - 1) / 2 + state.inbound
}

/// Orders the retailer may place in `state`: any split with
/// `immediate + advance <= capacity - on_hand - inbound`, lexicographic.
pub fn allowable_actions(state: InventoryState, capacity: usize) -> Vec<InventoryAction> {
    let free = capacity - state.on_hand - state.inbound;
    let mut out = Vec::new();
    for immediate in 0..=free {
        for advance in 0..=free - immediate {
            out.push(InventoryAction { immediate, advance });
        }
    }
    out
}

/// Uniform sampling ranges for the scalar parameters, followed by one
/// `[0, 1]` range per demand pmf coordinate. The order matches
/// `feature_vector`.
pub fn feature_ranges(capacity: usize) -> Vec<(f64, f64)> {
    let mut out = vec![
        (6.0, 10.0),
        (0.0, 2.0),
        (4.0, 6.0),
        (1.0, 4.0),
        (0.0, 2.0),
        (0.0, 2.0),
        (0.0, 2.0),
        (0.8, 1.0),
        (0.0, 1.0),
        (0.0, 1.0),
    ];
    out.extend(std::iter::repeat((0.0, 1.0)).take(2 * capacity + 1));
    out
}

/// Draws one parameter set. Scalars are uniform on `feature_ranges`, the
/// tail level is rejected at the endpoints, and the demand pmf is uniform
/// on the simplex (normalized unit exponentials). Draw order is fixed so
/// a given generator state always yields the same parameters.
pub fn sample_params<R: Rng + ?Sized>(
    rng: &mut R,
    capacity: usize,
    gamma: f64,
) -> InventoryParams<f64> {
    let ranges = feature_ranges(capacity);
    let mut uniform = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let retail_price = uniform(ranges[0]);
    let shortfall_comp = uniform(ranges[1]);
    let immediate_cost = uniform(ranges[2]);
    let advance_cost = uniform(ranges[3]);
    let backlog_discount = uniform(ranges[4]);
    let order_fee = uniform(ranges[5]);
    let holding_cost = uniform(ranges[6]);
    let availability = uniform(ranges[7]);
    let backlog_prob = uniform(ranges[8]);
    let risk_level = loop {
        let a: f64 = rng.random();
        if a > 0.0 {
            break a;
        }
    };
    let demand_pmf = loop {
        let exps: Vec<f64> = (0..2 * capacity + 1)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = exps.iter().sum();
        if total > 0.0 {
            break exps.into_iter().map(|e| e / total).collect();
        }
    };
    InventoryParams {
        retail_price,
        shortfall_comp,
        immediate_cost,
        advance_cost,
        backlog_discount,
        order_fee,
        holding_cost,
        availability,
        backlog_prob,
        risk_level,
        demand_pmf,
        capacity,
        gamma,
    }
}

fn choose(n: usize, k: usize) -> f64 {
    let mut c = 1.0f64;
    for t in 0..k {
        c = c * (n - t) as f64 / (t + 1) as f64;
    }
    c
}

impl<T: Scalar> InventoryParams<T> {
    /// Margin sacrificed on each lost sale: the retail price net of what
    /// restocking the unit through the slow supplier would have cost.
    pub fn lost_sale_cost(&self) -> T {
        self.retail_price - self.advance_cost
    }

    pub fn validate(&self) -> Result<(), InventoryError> {
        let mut bad = Vec::new();
        if self.capacity == 0 {
            bad.push("capacity must be at least 1".to_string());
        }
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            bad.push("gamma must lie in (0, 1)".to_string());
        }
        let unit = |name: &str, x: T, bad: &mut Vec<String>| {
            if !(x >= T::zero() && x <= T::one()) {
                bad.push(format!("{name} must lie in [0, 1]"));
            }
        };
        unit("beta1", self.availability, &mut bad);
        unit("beta2", self.backlog_prob, &mut bad);
        if !(self.risk_level > T::zero() && self.risk_level < T::one()) {
            bad.push("alpha must lie in (0, 1)".to_string());
        }
        for (name, x) in [
            ("p_r", self.retail_price),
            ("p_s", self.shortfall_comp),
            ("c1", self.immediate_cost),
            ("c2", self.advance_cost),
            ("c_b", self.backlog_discount),
            ("c_f", self.order_fee),
            ("c_h", self.holding_cost),
        ] {
            if !x.is_finite() {
                bad.push(format!("{name} must be finite"));
            }
        }
        if self.demand_pmf.len() != 2 * self.capacity + 1 {
            bad.push(format!(
                "demand pmf must have length {}, got {}",
                2 * self.capacity + 1,
                self.demand_pmf.len()
            ));
        } else {
            let mut total = T::zero();
            let mut ok = true;
            for &w in &self.demand_pmf {
                if !(w >= T::zero() && w.is_finite()) {
                    bad.push("demand pmf entries must be finite and nonnegative".to_string());
                    ok = false;
                    break;
                }
                total = total + w;
            }
            let tol = fl::<T>(1e-12).max(T::epsilon() * fl(100.0));
            if ok && (total - T::one()).abs() > tol {
                bad.push("demand pmf must sum to 1".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(InventoryError::Invalid(bad.join("; ")))
        }
    }

    /// Builds the exact MDP: for each state and order split, the outcome
    /// law enumerates demand, slow-supplier availability, and the number
    /// of backlogged customers, then aggregates probability mass over
    /// outcomes with identical successor and bit-identical reward.
    pub fn build_mdp(&self) -> Result<Mdp<T>, InventoryError> {
        self.validate()?;
        let m = self.capacity;
        let all_states = states(m);
        let labels: Vec<String> = all_states
            .iter()
            .map(|s| format!("({},{})", s.on_hand, s.inbound))
            .collect();
        let one = T::one();
        let beta1 = self.availability;
        let beta2 = self.backlog_prob;

        let mut action_labels = Vec::with_capacity(all_states.len());
        let mut kernel = Vec::with_capacity(all_states.len());
        for s in &all_states {
            let acts = allowable_actions(*s, m);
            action_labels.push(
                acts.iter()
                    .map(|a| format!("({},{})", a.immediate, a.advance))
                    .collect::<Vec<String>>(),
            );
            let mut rows = Vec::with_capacity(acts.len());
            for act in &acts {
                let stock = s.on_hand + s.inbound + act.immediate;
                let fee_count = (act.immediate > 0) as usize + (act.advance > 0) as usize;
                let fixed_charges = self.order_fee * fl(fee_count as f64)
                    + self.immediate_cost * fl(act.immediate as f64)
                    + self.advance_cost * fl(act.advance as f64)
                    + self.holding_cost * fl(s.on_hand as f64);
                let branches: Vec<(bool, T)> = if act.advance == 0 {
                    vec![(true, one)]
                } else {
                    vec![(true, beta1), (false, one - beta1)]
                };
                let mut agg: BTreeMap<(usize, u64), (T, T)> = BTreeMap::new();
                for (d, &pd) in self.demand_pmf.iter().enumerate() {
                    if pd <= T::zero() {
                        continue;
                    }
                    let unmet = d.saturating_sub(stock);
                    let sold = d - unmet;
                    let next_on_hand = stock - sold;
                    for &(avail, wa) in &branches {
                        if wa <= T::zero() {
                            continue;
                        }
                        let next = InventoryState {
                            on_hand: next_on_hand,
                            inbound: if avail { act.advance } else { 0 },
                        };
                        let y = state_index(next, m);
                        for b in 0..=unmet {
                            let wb = fl::<T>(choose(unmet, b))
                                * beta2.powi(b as i32)
                                * (one - beta2).powi((unmet - b) as i32);
                            let mass = pd * wa * wb;
                            if mass <= T::zero() {
                                continue;
                            }
                            let mut reward = self.retail_price * fl(sold as f64)
                                + (self.retail_price - self.backlog_discount) * fl(b as f64)
                                - self.lost_sale_cost() * fl((unmet - b) as f64)
                                - fixed_charges;
                            if !avail {
                                reward = reward + self.shortfall_comp * fl(act.advance as f64);
                            }
                            reward = reward + T::zero();
                            let slot = agg
                                .entry((y, reward_key(reward)))
                                .or_insert((reward, T::zero()));
                            slot.1 = slot.1 + mass;
                        }
                    }
                }
                let mut row: Vec<Edge<T>> = Vec::new();
                for (&(y, _), &(reward, mass)) in &agg {
                    match row.last_mut() {
                        Some(edge) if edge.to == y => edge.rewards.push((reward, mass)),
                        _ => row.push(Edge {
                            to: y,
                            prob: T::zero(),
                            rewards: vec![(reward, mass)],
                        }),
                    }
                }
                for edge in &mut row {
                    let prob: T = edge
                        .rewards
                        .iter()
                        .fold(T::zero(), |acc, &(_, w)| acc + w);
                    edge.prob = prob;
                    for rw in &mut edge.rewards {
                        rw.1 = rw.1 / prob;
                    }
                }
                rows.push(row);
            }
            kernel.push(rows);
        }

        let mut initial = vec![T::zero(); all_states.len()];
        initial[0] = one;
        let mdp = Mdp {
            states: labels,
            actions: action_labels,
            kernel,
            initial,
            gamma: self.gamma,
        };
        mdp.ensure_valid()
            .map_err(|e| InventoryError::Invalid(e.to_string()))?;
        Ok(mdp)
    }

    /// Flattens the parameters into the pinned feature order:
    /// the seven prices and fees, the three probabilities, then the
    /// demand pmf.
    pub fn feature_vector(&self) -> Vec<T> {
        let mut out = vec![
            self.retail_price,
            self.shortfall_comp,
            self.immediate_cost,
            self.advance_cost,
            self.backlog_discount,
            self.order_fee,
            self.holding_cost,
            self.availability,
            self.backlog_prob,
            self.risk_level,
        ];
        out.extend_from_slice(&self.demand_pmf);
        out
    }

    /// Inverse of `feature_vector`; the capacity is recovered from the
    /// vector length and `gamma` is supplied by the caller.
    pub fn from_features(features: &[T], gamma: T) -> Result<Self, InventoryError> {
        if features.len() < 13 || (features.len() - 11) % 2 != 0 {
            return Err(InventoryError::FeatureLength {
                got: features.len(),
            });
        }
        let capacity = (features.len() - 11) / 2;
        let params = InventoryParams {
            retail_price: features[0],
            shortfall_comp: features[1],
            immediate_cost: features[2],
            advance_cost: features[3],
            backlog_discount: features[4],
            order_fee: features[5],
            holding_cost: features[6],
            availability: features[7],
            backlog_prob: features[8],
            risk_level: features[9],
            demand_pmf: features[10..].to_vec(),
            capacity,
            gamma,
        };
        params.validate()?;
        Ok(params)
    }
}
