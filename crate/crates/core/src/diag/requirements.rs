//! Data-requirement compliance: accuracy (TVE), acceptance latency, and
//! report-rate limits per application use case.
//!
//! The state-estimation use cases require 1-5% / 5-15 min (emergency
//! alarms), 0.5% / 5 min (constraint violations), and 0.5% / 30 s
//! (efficiency); the topology use cases require essentially-zero TVE within
//! 5-15 min (switch status as the sole safety source), 1% / 5 min
//! (corroborating field records), and 5% / 1 min (supporting state
//! estimation). Where a table row quotes a range, the permissive end is the
//! encoded limit. All six use cases are steady-state class, which needs at
//! least one report per cycle (60/s).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DiagError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseCase {
    EmergencyAlarms,
    AvoidConstraintViolations,
    ImproveSystemEfficiency,
    SwitchStatusIdentification,
    CorroborateFieldRecords,
    SupportStateEstimation,
}

impl UseCase {
    pub const ALL: [UseCase; 6] = [
        UseCase::EmergencyAlarms,
        UseCase::AvoidConstraintViolations,
        UseCase::ImproveSystemEfficiency,
        UseCase::SwitchStatusIdentification,
        UseCase::CorroborateFieldRecords,
        UseCase::SupportStateEstimation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UseCase::EmergencyAlarms => "emergency_alarms",
            UseCase::AvoidConstraintViolations => "avoid_constraint_violations",
            UseCase::ImproveSystemEfficiency => "improve_system_efficiency",
            UseCase::SwitchStatusIdentification => "switch_status_identification",
            UseCase::CorroborateFieldRecords => "corroborate_field_records",
            UseCase::SupportStateEstimation => "support_state_estimation",
        }
    }
}

impl fmt::Display for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UseCase {
    type Err = DiagError;

    fn from_str(s: &str) -> Result<Self, DiagError> {
        let norm = s.trim().to_lowercase().replace([' ', '-'], "_");
        UseCase::ALL
            .into_iter()
            .find(|u| u.as_str() == norm)
            .ok_or_else(|| DiagError::UnknownUseCase(s.to_string()))
    }
}

/// `(tve_max fraction, latency_max seconds)` for a use case.
pub fn requirement_limits(use_case: UseCase) -> (f64, f64) {
    match use_case {
        UseCase::EmergencyAlarms => (0.05, 900.0),
        UseCase::AvoidConstraintViolations => (0.005, 300.0),
        UseCase::ImproveSystemEfficiency => (0.005, 30.0),
        UseCase::SwitchStatusIdentification => (0.0, 900.0),
        UseCase::CorroborateFieldRecords => (0.01, 300.0),
        UseCase::SupportStateEstimation => (0.05, 60.0),
    }
}

/// Minimum report rate for steady-state applications: one report per cycle.
pub const STEADY_STATE_MIN_RATE_HZ: f64 = 60.0;

/// Measured (or declared) stream statistics to check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AchievedStats {
    pub tve: f64,
    pub latency_s: f64,
    pub report_rate_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    /// The encoded limit (max for tve/latency, min for report rate).
    pub limit: f64,
    pub achieved: f64,
    pub pass: bool,
    /// Positive margin means headroom against the limit.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub use_case: UseCase,
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
}

pub fn check_requirements(stats: &AchievedStats, use_case: UseCase) -> ComplianceReport {
    let (tve_max, latency_max) = requirement_limits(use_case);
    let criteria = vec![
        CriterionResult {
            name: "accuracy_tve".into(),
            limit: tve_max,
            achieved: stats.tve,
            pass: stats.tve <= tve_max,
            margin: tve_max - stats.tve,
        },
        CriterionResult {
            name: "latency_s".into(),
            limit: latency_max,
            achieved: stats.latency_s,
            pass: stats.latency_s <= latency_max,
            margin: latency_max - stats.latency_s,
        },
        CriterionResult {
            name: "report_rate_hz".into(),
            limit: STEADY_STATE_MIN_RATE_HZ,
            achieved: stats.report_rate_hz,
            pass: stats.report_rate_hz >= STEADY_STATE_MIN_RATE_HZ,
            margin: stats.report_rate_hz - STEADY_STATE_MIN_RATE_HZ,
        },
    ];
    let pass = criteria.iter().all(|c| c.pass);
    ComplianceReport {
        use_case,
        criteria,
        pass,
    }
}
