//! Heterogeneous interacting-agent asset market.
//!
//! * [`simulator`] / [`ensemble`]: exact event-driven runs of the agent model.
//! * [`analytic`]: closed-form mean excess demand and price.
//! * [`classifier`]: validity horizon and bounce/oscillation structure.
//! * [`oracle`]: brute-force integrators and quadrature used as ground truth.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod classifier;
pub mod ensemble;
pub mod fit;
pub mod model;
pub mod network;
pub mod oracle;
pub mod output;
pub mod simulator;

pub use analytic::{ClosedFormSolution, FreezePrediction};
pub use classifier::{ExtremaVerdict, Pattern};
pub use ensemble::{run_ensemble, EnsembleStats};
pub use model::{FundamentalMode, ModelParams, Regime};
pub use network::{GraphSpec, PeerGraph};
pub use simulator::{simulate, SimConfig, Trajectory};
