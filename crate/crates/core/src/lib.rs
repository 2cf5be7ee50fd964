//! Distribution-grid synchrophasor analytics.
//!
//! The crate simulates three-phase unbalanced feeders to produce timestamped
//! phasor streams, stores them in a multi-resolution versioned time-series
//! store, derives streams through a chunk-driven distiller pipeline, and runs
//! grid diagnostics (phase identification, topology detection, impedance
//! estimation, state estimation, event detection, fault location,
//! reverse-flow detection) over the result.

pub mod diag;
pub mod phasor;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod store;
