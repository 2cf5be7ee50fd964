//! Diagnostic analytics over synchrophasor frame streams: phase
//! identification, topology verification, impedance estimation, state
//! estimation, event detection, fault location, reverse-flow detection, and
//! the data-requirement compliance tables.
//!
//! Every operation is a pure function of its inputs; candidate scans use
//! fixed tie-breaking (lowest hypothesis index, earliest branch id) so
//! results are deterministic.

mod cusum;
mod fault;
mod impedance;
mod kpca;
mod phase_id;
mod requirements;
mod reverse;
mod state_est;
mod topology;

pub use cusum::{detect_switch_transition, CusumParams};
pub use fault::{average_frames, locate_fault, window_average, FaultLocateOptions, FaultLocation};
pub use impedance::{
    estimate_line_impedance, estimate_transformer_impedance, excitation_condition,
    ExcitationProblem, ImpedanceEstimate, ImpedanceOptions,
};
pub use kpca::{
    build_feature_windows, detect_events_kpca, EventFlag, KpcaKernel, KpcaOptions, Window,
};
pub use phase_id::{identify_phase, PhaseAssignment, PhaseIdOptions, ThreePhaseSeries};
pub use requirements::{
    check_requirements, requirement_limits, AchievedStats, ComplianceReport, CriterionResult,
    UseCase,
};
pub use reverse::{detect_reverse_flow, DEFAULT_REVERSE_DEADBAND_PU};
pub use state_est::{
    linear_state_estimate, wls_state_estimate, InjectionPseudo, MeasurementNoise, SePriors,
    StateEstimate, VoltageMeasurement,
};
pub use topology::{
    detect_topology_voting, ResidualMetric, TopologyHypothesis, VotingOptions, VotingOutcome,
};

use thiserror::Error;

use crate::phasor::PhasorError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("series too short: need {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("no labeling passes the angle-consistency gate")]
    NoConsistentAssignment,
    #[error("magnitude variance too small to correlate")]
    InsufficientVariation,
    #[error("insufficient cross-phase excitation (condition metric {condition:.3e})")]
    InsufficientExcitation { condition: f64 },
    #[error("innovation matrix is numerically singular")]
    NumericallySingular,
    #[error("estimator did not converge within {0} iterations")]
    Diverged(usize),
    #[error("measurement set does not make the system observable")]
    Unobservable,
    #[error("training windows are degenerate")]
    DegenerateTraining,
    #[error("no disturbance beyond noise between the compared windows")]
    NoFaultDetected,
    #[error("near-tied fault locations on distinct branches: {0:?}")]
    AmbiguousLocation(Vec<(String, f64)>),
    #[error("topology vote tied between {0:?}")]
    AmbiguousTopology(Vec<String>),
    #[error("every hypothesis was disqualified: {0}")]
    HypothesesInfeasible(String),
    #[error("unknown use case {0:?}")]
    UnknownUseCase(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Phasor(#[from] PhasorError),
}
