//! Tabular Markov decision processes whose rewards are random variables
//! conditioned on the transition taken, plus deterministic-policy
//! enumeration and the Markov reward chain a fixed policy induces.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::{fl, prob_tol, Scalar};

/// One positive-probability transition of a state-action pair, together
/// with the reward distribution conditioned on taking it.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge<T> {
    pub to: usize,
    pub prob: T,
    /// Pairs `(reward value, conditional probability)`; the probabilities
    /// sum to one.
    pub rewards: Vec<(T, T)>,
}

impl<T: Scalar> Edge<T> {
    /// Expected reward on this edge.
    pub fn mean_reward(&self) -> T {
        self.rewards
            .iter()
            .fold(T::zero(), |acc, &(j, d)| acc + j * d)
    }
}

/// Finite MDP with per-state action sets, a transition kernel indexed as
/// `kernel[state][action] -> edges`, an initial distribution and a
/// discount factor in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp<T> {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub kernel: Vec<Vec<Vec<Edge<T>>>>,
    pub initial: Vec<T>,
    pub gamma: T,
}

/// Markov chain with transition-conditioned rewards, the object a fixed
/// deterministic policy reduces an MDP to.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRewardProcess<T> {
    pub states: Vec<String>,
    pub rows: Vec<Vec<Edge<T>>>,
    pub initial: Vec<T>,
    pub gamma: T,
}

/// Deterministic stationary policy: one action index per state, plus its
/// rank in the lexicographic enumeration of all such policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
    pub canonical_index: u64,
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid model: {}", violations.join("; "))]
    Invalid { violations: Vec<String> },
    #[error("policy covers {got} states but the model has {expected}")]
    PolicyLength { expected: usize, got: usize },
    #[error("policy picks action {action} in state {state}, which offers {available}")]
    PolicyAction {
        state: usize,
        action: usize,
        available: usize,
    },
    #[error("policy index {index} out of range: the model has {count} deterministic policies")]
    PolicyIndex { index: u64, count: u64 },
    #[error("deterministic policy count exceeds u64 range")]
    PolicyCountOverflow,
    #[error("augmented model does not match the base model: {0}")]
    AugmentedMismatch(String),
}

fn check_distribution<T: Scalar>(
    what: &str,
    probs: impl Iterator<Item = T>,
    violations: &mut Vec<String>,
) {
    let mut sum = T::zero();
    let mut negative = false;
    let mut finite = true;
    for p in probs {
        if !p.is_finite() {
            finite = false;
        }
        if p < T::zero() {
            negative = true;
        }
        sum = sum + p;
    }
    if !finite {
        violations.push(format!("{what}: non-finite probability"));
    } else if negative {
        violations.push(format!("{what}: negative probability"));
    } else if (sum - T::one()).abs() > prob_tol::<T>() {
        violations.push(format!("{what}: probabilities sum to {sum}, not 1"));
    }
}

fn check_edges<T: Scalar>(
    what: &str,
    edges: &[Edge<T>],
    n_states: usize,
    violations: &mut Vec<String>,
) {
    if edges.is_empty() {
        violations.push(format!("{what}: no outgoing transitions"));
        return;
    }
    for edge in edges {
        if edge.to >= n_states {
            violations.push(format!(
                "{what}: transition targets state {} of {n_states}",
                edge.to
            ));
        }
        if !edge.prob.is_finite() || edge.prob <= T::zero() {
            violations.push(format!(
                "{what}: transition to {} must have positive finite probability, got {}",
                edge.to, edge.prob
            ));
        }
        if edge.rewards.iter().any(|&(j, _)| !j.is_finite()) {
            violations.push(format!("{what}: non-finite reward value on edge to {}", edge.to));
        }
        check_distribution(
            &format!("{what}: reward distribution on edge to {}", edge.to),
            edge.rewards.iter().map(|&(_, d)| d),
            violations,
        );
    }
    check_distribution(
        what,
        edges.iter().map(|e| e.prob),
        violations,
    );
}

fn check_gamma<T: Scalar>(gamma: T, violations: &mut Vec<String>) {
    if !(gamma > T::zero() && gamma < T::one()) {
        violations.push(format!("discount factor {gamma} outside (0, 1)"));
    }
}

impl<T: Scalar> Mdp<T> {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Collects every way the model is malformed; empty means well-formed.
    pub fn validate(&self) -> Vec<String> {
        let n = self.states.len();
        let mut violations = Vec::new();
        if self.actions.len() != n || self.kernel.len() != n || self.initial.len() != n {
            violations.push(format!(
                "shape mismatch: {} states, {} action sets, {} kernel rows, {} initial weights",
                n,
                self.actions.len(),
                self.kernel.len(),
                self.initial.len()
            ));
            return violations;
        }
        check_gamma(self.gamma, &mut violations);
        check_distribution(
            "initial distribution",
            self.initial.iter().copied(),
            &mut violations,
        );
        for (x, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                violations.push(format!("state {x}: empty action set"));
            }
            if self.kernel[x].len() != acts.len() {
                violations.push(format!(
                    "state {x}: {} actions but {} kernel entries",
                    acts.len(),
                    self.kernel[x].len()
                ));
                continue;
            }
            for (a, edges) in self.kernel[x].iter().enumerate() {
                check_edges(&format!("state {x} action {a}"), edges, n, &mut violations);
            }
        }
        violations
    }

    pub fn ensure_valid(&self) -> Result<(), MdpError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(MdpError::Invalid { violations })
        }
    }

    /// Number of deterministic stationary policies, the product of the
    /// action-set sizes.
    pub fn policy_count(&self) -> Result<u64, MdpError> {
        let mut count: u64 = 1;
        for acts in &self.actions {
            count = count
                .checked_mul(acts.len() as u64)
                .ok_or(MdpError::PolicyCountOverflow)?;
        }
        Ok(count)
    }

    /// Mixed-radix decode of a canonical policy index; earlier states vary
    /// slowest, so index order is lexicographic order on action tuples.
    pub fn policy_from_index(&self, index: u64) -> Result<DeterministicPolicy, MdpError> {
        let count = self.policy_count()?;
        if index >= count {
            return Err(MdpError::PolicyIndex { index, count });
        }
        let mut actions = vec![0usize; self.states.len()];
        let mut rest = index;
        for x in (0..self.states.len()).rev() {
            let radix = self.actions[x].len() as u64;
            actions[x] = (rest % radix) as usize;
            rest /= radix;
        }
        Ok(DeterministicPolicy {
            actions,
            canonical_index: index,
        })
    }

    /// Mixed-radix encode; inverse of `policy_from_index`.
    pub fn policy_index(&self, actions: &[usize]) -> Result<u64, MdpError> {
        if actions.len() != self.states.len() {
            return Err(MdpError::PolicyLength {
                expected: self.states.len(),
                got: actions.len(),
            });
        }
        let mut index: u64 = 0;
        for (x, &a) in actions.iter().enumerate() {
            let radix = self.actions[x].len();
            if a >= radix {
                return Err(MdpError::PolicyAction {
                    state: x,
                    action: a,
                    available: radix,
                });
            }
            index = index
                .checked_mul(radix as u64)
                .and_then(|i| i.checked_add(a as u64))
                .ok_or(MdpError::PolicyCountOverflow)?;
        }
        Ok(index)
    }

    pub fn policy_from_actions(&self, actions: Vec<usize>) -> Result<DeterministicPolicy, MdpError> {
        let canonical_index = self.policy_index(&actions)?;
        Ok(DeterministicPolicy {
            actions,
            canonical_index,
        })
    }

    /// All deterministic policies in canonical (lexicographic) order.
    pub fn enumerate_policies(&self) -> Result<PolicyIter<'_, T>, MdpError> {
        let count = self.policy_count()?;
        Ok(PolicyIter {
            mdp: self,
            next: 0,
            count,
        })
    }

    /// Fixes a policy, yielding the Markov reward chain it induces.
    pub fn induce_chain(&self, policy: &DeterministicPolicy) -> Result<MarkovRewardProcess<T>, MdpError> {
        let rows = self
            .policy_rows(&policy.actions)?
            .into_iter()
            .map(|edges| edges.to_vec())
            .collect();
        Ok(MarkovRewardProcess {
            states: self.states.clone(),
            rows,
            initial: self.initial.clone(),
            gamma: self.gamma,
        })
    }

    /// Borrowed view of the kernel rows a policy selects, in state order.
    pub fn policy_rows(&self, actions: &[usize]) -> Result<Vec<&[Edge<T>]>, MdpError> {
        if actions.len() != self.states.len() {
            return Err(MdpError::PolicyLength {
                expected: self.states.len(),
                got: actions.len(),
            });
        }
        actions
            .iter()
            .enumerate()
            .map(|(x, &a)| {
                self.kernel[x]
                    .get(a)
                    .map(|edges| edges.as_slice())
                    .ok_or(MdpError::PolicyAction {
                        state: x,
                        action: a,
                        available: self.kernel[x].len(),
                    })
            })
            .collect()
    }

    /// Sorted distinct reward values appearing anywhere in the kernel.
    pub fn reward_support(&self) -> Vec<T> {
        let mut values: Vec<T> = self
            .kernel
            .iter()
            .flatten()
            .flatten()
            .flat_map(|e| e.rewards.iter().map(|&(j, _)| j))
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("non-finite reward"));
        values.dedup();
        values
    }
}

/// Iterator over all deterministic policies in canonical order.
pub struct PolicyIter<'a, T> {
    mdp: &'a Mdp<T>,
    next: u64,
    count: u64,
}

impl<T: Scalar> Iterator for PolicyIter<'_, T> {
    type Item = DeterministicPolicy;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let policy = self
            .mdp
            .policy_from_index(self.next)
            .expect("index below policy count");
        self.next += 1;
        Some(policy)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.next) as usize;
        (left, Some(left))
    }
}

impl<T: Scalar> MarkovRewardProcess<T> {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn validate(&self) -> Vec<String> {
        let n = self.states.len();
        let mut violations = Vec::new();
        if self.rows.len() != n || self.initial.len() != n {
            violations.push(format!(
                "shape mismatch: {} states, {} rows, {} initial weights",
                n,
                self.rows.len(),
                self.initial.len()
            ));
            return violations;
        }
        check_gamma(self.gamma, &mut violations);
        check_distribution(
            "initial distribution",
            self.initial.iter().copied(),
            &mut violations,
        );
        for (x, edges) in self.rows.iter().enumerate() {
            check_edges(&format!("state {x}"), edges, n, &mut violations);
        }
        violations
    }

    pub fn ensure_valid(&self) -> Result<(), MdpError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(MdpError::Invalid { violations })
        }
    }

    /// Dense row-major transition matrix, reward structure erased.
    pub fn transition_matrix(&self) -> Vec<T> {
        let n = self.states.len();
        let mut p = vec![T::zero(); n * n];
        for (x, edges) in self.rows.iter().enumerate() {
            for edge in edges {
                p[x * n + edge.to] = p[x * n + edge.to] + edge.prob;
            }
        }
        p
    }

    /// Expected one-step reward out of each state.
    pub fn mean_rewards(&self) -> Vec<T> {
        self.rows
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .fold(T::zero(), |acc, e| acc + e.prob * e.mean_reward())
            })
            .collect()
    }

    /// Largest absolute reward value in the support, useful for horizon
    /// truncation bounds.
    pub fn max_abs_reward(&self) -> T {
        self.rows
            .iter()
            .flatten()
            .flat_map(|e| e.rewards.iter().map(|&(j, _)| j.abs()))
            .fold(T::zero(), |m, j| m.max(j))
    }
}

#[derive(Serialize, Deserialize)]
struct MdpWire {
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    /// Rows `[from, action, to, probability]`.
    transitions: Vec<(usize, usize, usize, f64)>,
    /// Rows `[from, action, to, reward value, conditional probability]`.
    rewards: Vec<(usize, usize, usize, f64, f64)>,
    initial: Vec<f64>,
    gamma: f64,
}

impl<T: Scalar> Serialize for Mdp<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for (x, per_action) in self.kernel.iter().enumerate() {
            for (a, edges) in per_action.iter().enumerate() {
                for edge in edges {
                    transitions.push((x, a, edge.to, f(edge.prob)));
                    for &(j, d) in &edge.rewards {
                        rewards.push((x, a, edge.to, f(j), f(d)));
                    }
                }
            }
        }
        MdpWire {
            states: self.states.clone(),
            actions: self.actions.clone(),
            transitions,
            rewards,
            initial: self.initial.iter().map(|&w| f(w)).collect(),
            gamma: f(self.gamma),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Mdp<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = MdpWire::deserialize(deserializer)?;
        let n = wire.states.len();
        if wire.actions.len() != n {
            return Err(D::Error::custom(format!(
                "{} states but {} action sets",
                n,
                wire.actions.len()
            )));
        }
        if wire.initial.len() != n {
            return Err(D::Error::custom(format!(
                "{} states but {} initial weights",
                n,
                wire.initial.len()
            )));
        }
        let mut kernel: Vec<Vec<Vec<Edge<T>>>> = wire
            .actions
            .iter()
            .map(|acts| vec![Vec::new(); acts.len()])
            .collect();
        let check = |x: usize, a: usize, y: usize| -> Result<(), D::Error> {
            if x >= n || y >= n {
                return Err(D::Error::custom(format!(
                    "transition ({x}, {a}, {y}) references a state out of range"
                )));
            }
            if a >= wire.actions[x].len() {
                return Err(D::Error::custom(format!(
                    "transition ({x}, {a}, {y}) references an action out of range"
                )));
            }
            Ok(())
        };
        for &(x, a, y, p) in &wire.transitions {
            check(x, a, y)?;
            let edges = &mut kernel[x][a];
            match edges.iter_mut().find(|e| e.to == y) {
                Some(edge) => edge.prob = edge.prob + fl(p),
                None => edges.push(Edge {
                    to: y,
                    prob: fl(p),
                    rewards: Vec::new(),
                }),
            }
        }
        for &(x, a, y, j, d) in &wire.rewards {
            check(x, a, y)?;
            let edge = kernel[x][a]
                .iter_mut()
                .find(|e| e.to == y)
                .ok_or_else(|| {
                    D::Error::custom(format!(
                        "reward row ({x}, {a}, {y}) has no matching transition"
                    ))
                })?;
            let jv: T = fl(j);
            match edge.rewards.iter_mut().find(|(v, _)| *v == jv) {
                Some(slot) => slot.1 = slot.1 + fl(d),
                None => edge.rewards.push((jv, fl(d))),
            }
        }
        Ok(Mdp {
            states: wire.states,
            actions: wire.actions,
            kernel,
            initial: wire.initial.into_iter().map(fl).collect(),
            gamma: fl(wire.gamma),
        })
    }
}
