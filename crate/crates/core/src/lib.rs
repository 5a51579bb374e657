//! Counterfactual off-policy actor-critic on finite MDPs.
//!
//! Exact linear-algebra analysis of the counterfactual objective and its
//! gradient, online estimators for the density ratio and emphasis traces,
//! and tabular Off-PAC, ACE and Geoff-PAC agents.

pub mod agents;
pub mod chain;
pub mod envs;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod linalg;
pub mod mdp;
pub mod online;
pub mod policy;
pub mod scalar;
pub mod stats;
pub mod verify;

pub use agents::{evaluate_policy, train, Agent, AgentConfig, Algorithm, CriticMode, MetricRow, TrainingRun};
pub use error::{Error, Result};
pub use exact::{CounterfactualAnalysis, ObjectiveKind};
pub use mdp::FiniteMdp;
pub use policy::SoftmaxPolicy;
pub use scalar::Scalar;

pub type Mdp = FiniteMdp<f64>;
pub type Policy = SoftmaxPolicy<f64>;
pub type Analysis = CounterfactualAnalysis<f64>;
pub type MdpF32 = FiniteMdp<f32>;
pub type PolicyF32 = SoftmaxPolicy<f32>;
pub type AnalysisF32 = CounterfactualAnalysis<f32>;
