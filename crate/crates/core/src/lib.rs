//! Decentralized matrix factorization for point-of-interest recommendation.
//!
//! Each user is simulated as an independent learner holding its own user
//! factor, a local copy of the shared item factors and private personal item
//! factors. Learners train by local SGD and exchange only shared-item-factor
//! gradients with geographically nearby users of the same city, reached by
//! bounded walks over a degree-capped adjacency graph. Centralized MF and BPR
//! baselines, top-k evaluation and communication metering share the same
//! data pipeline.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod dataio;
pub mod dmf;
pub mod eval;
pub mod geograph;
pub mod scalar;
pub mod simbus;
pub mod synth;

pub use scalar::Scalar;

pub type Graph = geograph::AdjacencyGraph<f64>;
pub type Graph32 = geograph::AdjacencyGraph<f32>;
pub type HyperParams = dmf::HyperParams<f64>;
pub type HyperParams32 = dmf::HyperParams<f32>;
pub type NodeState = dmf::NodeState<f64>;
pub type NodeState32 = dmf::NodeState<f32>;
pub type GradientMessage = dmf::GradientMessage<f64>;
pub type CentralParams = baselines::CentralParams<f64>;
pub type CentralModel = baselines::CentralModel<f64>;
pub type CentralModel32 = baselines::CentralModel<f32>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
