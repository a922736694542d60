pub mod config;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod metrics;
pub mod quad;
pub mod rls;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};
pub use graph::{MixingMatrix, Topology};
pub use metrics::MetricsRecord;
pub use quad::{PackedParams, QuadraticFunction, RegressorVector};
pub use rls::RlsState;
pub use scenario::{Scenario, ScenarioSpec};
pub use sim::{Engine, RunOutput, SimConfig, Simulation};
