//! Phase identification: match unlabeled phase conductors at one measurement
//! point against labeled reference phases by magnitude cross-correlation,
//! with the angle difference snapped to the nearest multiple of 30 degrees
//! (delta-wye transformers between the points shift angles by exactly such
//! multiples).

use super::DiagError;
use crate::phasor::{wrap_angle, Frame};

/// Voltage magnitude and angle series per local phase label.
#[derive(Debug, Clone)]
pub struct ThreePhaseSeries {
    pub mag: [Vec<f64>; 3],
    pub ang: [Vec<f64>; 3],
}

impl ThreePhaseSeries {
    pub fn from_frames(frames: &[Frame]) -> Self {
        let mut mag = [Vec::new(), Vec::new(), Vec::new()];
        let mut ang = [Vec::new(), Vec::new(), Vec::new()];
        for f in frames {
            for p in 0..3 {
                let ph = f.voltage.phase(p);
                mag[p].push(ph.magnitude());
                ang[p].push(ph.angle());
            }
        }
        Self { mag, ang }
    }

    pub fn len(&self) -> usize {
        self.mag[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Relabel phases: `self.mag[p]` becomes `out.mag[perm[p]]`.
    pub fn permuted(&self, perm: [usize; 3]) -> Self {
        let mut out = self.clone();
        for p in 0..3 {
            out.mag[perm[p]] = self.mag[p].clone();
            out.ang[perm[p]] = self.ang[p].clone();
        }
        out
    }

    /// Shift all angles by a constant (radians).
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for p in 0..3 {
            for a in &mut out.ang[p] {
                *a = wrap_angle(*a + delta).expect("finite angle");
            }
        }
        out
    }
}

/// Result of matching one candidate meter against the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAssignment {
    pub meter_id: String,
    /// `mapping[local] = reference phase index` (a bijection).
    pub mapping: [usize; 3],
    /// Constant angle offset, a multiple of 30 in `(-180, 180]` degrees.
    pub offset_deg: i32,
    /// Mean magnitude correlation over the three matched pairs, in [-1, 1].
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseIdOptions {
    pub min_samples: usize,
    /// Gate on the mean wrapped angle residual after removing the nearest
    /// 30-degree multiple (radians).
    pub angle_gate: f64,
}

impl Default for PhaseIdOptions {
    fn default() -> Self {
        Self {
            min_samples: 300,
            angle_gate: 5f64.to_radians(),
        }
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cxy = 0.0;
    let mut cxx = 0.0;
    let mut cyy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cxy += (a - mx) * (b - my);
        cxx += (a - mx) * (a - mx);
        cyy += (b - my) * (b - my);
    }
    if cxx <= 0.0 || cyy <= 0.0 {
        None
    } else {
        Some(cxy / (cxx * cyy).sqrt())
    }
}

fn circular_mean_diff(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d.sin();
        c += d.cos();
    }
    s.atan2(c)
}

fn has_variation(series: &[f64]) -> bool {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() > 1e-12 * mean.abs().max(1.0)
}

/// Select, over the 6 label bijections and 12 offsets, the assignment that
/// maximizes summed magnitude correlation subject to the angle residual gate.
///
/// If two points sit on the same phases, large positive magnitude
/// correlations and small angle differences (mod 30 degrees) are expected;
/// the reported offset is the snapped multiple.
pub fn identify_phase(
    meter_id: &str,
    reference: &ThreePhaseSeries,
    candidate: &ThreePhaseSeries,
    opts: &PhaseIdOptions,
) -> Result<PhaseAssignment, DiagError> {
    let n = reference.len().min(candidate.len());
    if n < opts.min_samples {
        return Err(DiagError::InsufficientData {
            need: opts.min_samples,
            got: n,
        });
    }
    for p in 0..3 {
        if !has_variation(&reference.mag[p][..n]) || !has_variation(&candidate.mag[p][..n]) {
            return Err(DiagError::InsufficientVariation);
        }
    }

    let thirty = 30f64.to_radians();
    let mut best: Option<PhaseAssignment> = None;
    for perm in PERMUTATIONS {
        let mut corr_sum = 0.0;
        let mut residual_sum = 0.0;
        let mut offsets = [0i32; 3];
        let mut feasible = true;
        for local in 0..3 {
            let q = perm[local];
            match pearson(&candidate.mag[local][..n], &reference.mag[q][..n]) {
                Some(r) => corr_sum += r,
                None => {
                    feasible = false;
                    break;
                }
            }
            let d = circular_mean_diff(&candidate.ang[local][..n], &reference.ang[q][..n]);
            let mut mult = (d / thirty).round() as i32;
            if mult == -6 {
                mult = 6; // -180 and +180 are the same shift
            }
            offsets[local] = mult;
            residual_sum += wrap_angle(d - mult as f64 * thirty)
                .expect("finite angle")
                .abs();
        }
        if !feasible {
            continue;
        }
        // one physical offset must explain all three pairs
        if offsets[0] != offsets[1] || offsets[1] != offsets[2] {
            continue;
        }
        if residual_sum / 3.0 >= opts.angle_gate {
            continue;
        }
        let assignment = PhaseAssignment {
            meter_id: meter_id.to_string(),
            mapping: perm,
            offset_deg: offsets[0] * 30,
            score: corr_sum / 3.0,
        };
        match &best {
            Some(b) if b.score >= assignment.score => {}
            _ => best = Some(assignment),
        }
    }
    best.ok_or(DiagError::NoConsistentAssignment)
}
