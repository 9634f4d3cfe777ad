//! Deterministic discrete-event simulator of TCP over mobile ad hoc routing,
//! with proxy acknowledgements on proxy-assisted routing and plain on-demand
//! distance-vector routing as the baseline.
//!
//! A run is single-threaded and fully determined by its [`Scenario`] and
//! seed. Batches of runs are spread across threads by [`experiment`] when the
//! `parallel` feature is on.

pub mod experiment;
mod mac;
pub mod metrics;
pub mod pack;
pub mod packet;
pub mod radio;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod tcp;
pub mod trace;
pub mod world;

pub use experiment::{compare, replay, run_batch, run_one, Row, RunSpec};
pub use metrics::RunSummary;
pub use scenario::{Protocol, Scenario, ScenarioError};
pub use sim::SimTime;
pub use tcp::Variant;
pub use trace::TraceMode;
pub use world::{simulate, Probe, ProxyEvent, RouteView, RunOptions, RunOutput, SimError, World};
