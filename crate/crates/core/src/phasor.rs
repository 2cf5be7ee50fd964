//! Measurement primitives: phasors, angle arithmetic, waveform-to-phasor
//! extraction, total vector error, and the transmission power-flow
//! approximation.
//!
//! Angles are radians everywhere inside the library, wrapped to the half-open
//! interval `(-pi, pi]`; degrees appear only at I/O boundaries. Magnitudes are
//! RMS quantities (volts, amperes, or per-unit when a base is attached).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TWO_PI: f64 = 2.0 * PI;

/// Nominal synchrophasor report rate, frames per second (twice per cycle on a
/// 60 Hz system).
pub const REPORT_RATE_HZ: f64 = 120.0;

/// Nanoseconds between reports at the nominal 120 frames/s rate.
pub const REPORT_INTERVAL_NS: i64 = 1_000_000_000 / 120;

#[derive(Debug, Error, PartialEq)]
pub enum PhasorError {
    #[error("angle is not finite")]
    InvalidAngle,
    #[error("magnitude must be finite and non-negative")]
    InvalidMagnitude,
    #[error("waveform window too short: got {got} samples, need at least 8")]
    InsufficientSamples { got: usize },
    #[error("reference phasor has zero magnitude")]
    DegenerateReference,
    #[error("reactance must be positive")]
    InvalidReactance,
    #[error("nominal frequency must be positive")]
    InvalidFrequency,
}

/// Wrap an angle into `(-pi, pi]`.
///
/// The branch cut is half-open: `-pi` maps to `+pi`, which keeps tie-breaking
/// deterministic.
pub fn wrap_angle(theta: f64) -> Result<f64, PhasorError> {
    if !theta.is_finite() {
        return Err(PhasorError::InvalidAngle);
    }
    let mut r = theta.rem_euclid(TWO_PI);
    if r > PI {
        r -= TWO_PI;
    }
    Ok(r)
}

/// Wrapped difference `a - b` in `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> Result<f64, PhasorError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(PhasorError::InvalidAngle);
    }
    wrap_angle(a - b)
}

/// An RMS phasor: magnitude plus an angle wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor {
    magnitude: f64,
    angle: f64,
}

impl Phasor {
    pub fn new(magnitude: f64, angle: f64) -> Result<Self, PhasorError> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(PhasorError::InvalidMagnitude);
        }
        Ok(Self {
            magnitude,
            angle: wrap_angle(angle)?,
        })
    }

    pub fn zero() -> Self {
        Self {
            magnitude: 0.0,
            angle: 0.0,
        }
    }

    pub fn from_complex(c: Complex64) -> Self {
        let angle = if c.arg() == -PI { PI } else { c.arg() };
        Self {
            magnitude: c.norm(),
            angle,
        }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.angle)
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

/// One phasor per phase, in a-b-c order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreePhaseSet {
    pub a: Phasor,
    pub b: Phasor,
    pub c: Phasor,
}

impl ThreePhaseSet {
    pub fn new(a: Phasor, b: Phasor, c: Phasor) -> Self {
        Self { a, b, c }
    }

    pub fn zero() -> Self {
        Self {
            a: Phasor::zero(),
            b: Phasor::zero(),
            c: Phasor::zero(),
        }
    }

    pub fn from_complex(v: [Complex64; 3]) -> Self {
        Self {
            a: Phasor::from_complex(v[0]),
            b: Phasor::from_complex(v[1]),
            c: Phasor::from_complex(v[2]),
        }
    }

    pub fn to_complex(&self) -> [Complex64; 3] {
        [
            self.a.to_complex(),
            self.b.to_complex(),
            self.c.to_complex(),
        ]
    }

    pub fn phase(&self, idx: usize) -> Phasor {
        match idx {
            0 => self.a,
            1 => self.b,
            _ => self.c,
        }
    }
}

/// One timestamped three-phase voltage + current measurement at one meter.
///
/// The nominal report rate is 120 frames/s; timestamps within a stored stream
/// are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp_ns: i64,
    pub meter_id: String,
    pub voltage: ThreePhaseSet,
    pub current: ThreePhaseSet,
}

/// Extract the fundamental-frequency phasor from one nominal cycle of
/// waveform samples via a single-bin discrete Fourier projection.
///
/// The window must cover exactly one nominal cycle (which the simulator
/// guarantees), making the rectangular projection exact. The magnitude is
/// reported as RMS (peak / sqrt(2)); the angle is the cosine-referenced phase
/// at the start of the window.
pub fn estimate_phasor(window: &[f64], nominal_freq: f64) -> Result<Phasor, PhasorError> {
    if !(nominal_freq.is_finite() && nominal_freq > 0.0) {
        return Err(PhasorError::InvalidFrequency);
    }
    let n = window.len();
    if n < 8 {
        return Err(PhasorError::InsufficientSamples { got: n });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &s) in window.iter().enumerate() {
        let phase = TWO_PI * (i as f64) / (n as f64);
        acc += s * Complex64::new(phase.cos(), -phase.sin());
    }
    // 2/N scales the bin to peak amplitude; /sqrt(2) converts to RMS.
    let c = acc * (2.0 / n as f64) / std::f64::consts::SQRT_2;
    Ok(Phasor::from_complex(c))
}

/// Total vector error: |measured - reference| / |reference| on the complex
/// plane.
pub fn tve(measured: Phasor, reference: Phasor) -> Result<f64, PhasorError> {
    if reference.magnitude() <= 0.0 {
        return Err(PhasorError::DegenerateReference);
    }
    let diff = measured.to_complex() - reference.to_complex();
    Ok(diff.norm() / reference.magnitude())
}

/// Real power transferred across a mainly inductive line:
/// `(v1 * v2 / x) * sin(delta)`, all quantities per-unit.
pub fn power_flow_approx(v1: f64, v2: f64, x: f64, delta: f64) -> Result<f64, PhasorError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(PhasorError::InvalidReactance);
    }
    Ok(v1 * v2 / x * delta.sin())
}
