//! Model-adaptive tool-necessity labeling, tool-call behavior collection,
//! hidden-state probing and two-stage error attribution.

pub mod arith;
pub mod backend;
pub mod collector;
pub mod corpus;
pub mod diagnose;
pub mod dump;
pub mod error;
pub mod io;
pub mod labeler;
pub mod metrics;
pub mod probes;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Probe = probes::ProbeResult<f64>;
pub type Grid = probes::PositionGrid<f64>;
pub type GridSweep = probes::Sweep<f64>;
pub type Mcc = metrics::Mcc<f64>;
