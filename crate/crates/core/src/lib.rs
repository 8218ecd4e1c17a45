//! Toolkit for risk-sensitive tabular Markov decision processes: exact
//! return mean/variance per policy, a reward-erasing state augmentation
//! that reduces stochastic rewards to state-based ones, value-at-risk
//! style objectives optimized by exhaustive policy enumeration, an
//! inventory-control model family, labeled dataset generation, and a
//! small feed-forward regressor trained on those datasets.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below pin the
//! common instantiations.

pub mod dataset;
pub mod inventory;
pub mod linalg;
pub mod mdp;
pub mod mlp;
pub mod normal;
pub mod risk;
pub mod sat;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

/// Double-precision MDP, the default working type.
pub type Mdp64 = mdp::Mdp<f64>;
/// Single-precision MDP.
pub type Mdp32 = mdp::Mdp<f32>;
/// Double-precision policy-induced chain.
pub type Chain64 = mdp::MarkovRewardProcess<f64>;
/// Double-precision inventory parameter set.
pub type InventoryParams64 = inventory::InventoryParams<f64>;
/// Double-precision risk specification.
pub type RiskSpec64 = risk::RiskSpec<f64>;
/// Double-precision optimization report.
pub type RiskReport64 = risk::RiskReport<f64>;
/// Double-precision network model.
pub type MlpModel64 = mlp::MlpModel<f64>;
/// Single-precision network model.
pub type MlpModel32 = mlp::MlpModel<f32>;
