//! Reverse power flow detection: per phase, flow is reversed when the real
//! power through the meter drops below a small negative deadband.

use crate::phasor::Frame;

/// Per-frame, per-phase reverse flags. `power_base_per_phase` converts
/// Re(V * conj(I)) watts to per-unit; the default deadband is 1e-4 p.u.
pub fn detect_reverse_flow(
    frames: &[Frame],
    power_base_per_phase: f64,
    deadband_pu: f64,
) -> Vec<[bool; 3]> {
    frames
        .iter()
        .map(|f| {
            let mut flags = [false; 3];
            for p in 0..3 {
                let s = f.voltage.phase(p).to_complex() * f.current.phase(p).to_complex().conj();
                flags[p] = s.re / power_base_per_phase < -deadband_pu;
            }
            flags
        })
        .collect()
}

pub const DEFAULT_REVERSE_DEADBAND_PU: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::{Phasor, ThreePhaseSet};

    fn frame(v_ang: f64, i_ang: f64) -> Frame {
        let v = Phasor::new(100.0, v_ang).unwrap();
        let i = Phasor::new(5.0, i_ang).unwrap();
        Frame {
            timestamp_ns: 0,
            meter_id: "m".into(),
            voltage: ThreePhaseSet::new(v, v, v),
            current: ThreePhaseSet::new(i, i, i),
        }
    }

    #[test]
    fn forward_load_flow_is_not_flagged() {
        let flags = detect_reverse_flow(&[frame(0.0, -0.3)], 500.0, 1e-4);
        assert_eq!(flags, vec![[false, false, false]]);
    }

    #[test]
    fn conjugate_negated_current_flips_every_phase() {
        let flags = detect_reverse_flow(
            &[frame(0.0, std::f64::consts::PI - 0.3)],
            500.0,
            1e-4,
        );
        assert_eq!(flags, vec![[true, true, true]]);
    }

    #[test]
    fn deadband_suppresses_noise_level_reversals() {
        // almost purely reactive: tiny negative real power
        let f = frame(0.0, std::f64::consts::FRAC_PI_2 + 1e-7);
        let base = 500.0;
        let flags = detect_reverse_flow(&[f], base, 1e-4);
        assert_eq!(flags, vec![[false, false, false]]);
    }
}
