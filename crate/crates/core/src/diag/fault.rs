//! Fault location from pre-fault and during-fault phasors at the substation
//! and remote meters, plus substation current measurements.
//!
//! The extra current drawn during the fault (the substation current step) is
//! injected at candidate positions on a 1% grid along every line; the
//! candidate whose power-flow prediction best matches the measured
//! during-fault meter voltages wins, with a local quadratic refinement
//! around the grid minimum. Assumes a stiff source: the substation voltage
//! is taken as the source value.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;

use super::DiagError;
use crate::phasor::{Frame, ThreePhaseSet};
use crate::sim::{
    path_from_source, solve_power_flow, splice_fault, transformer_current_matrix, BranchKind,
    CVec3, FeederModel, LoadModel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FaultLocation {
    pub branch: String,
    pub distance_fraction: f64,
    /// Residual mismatch (per-unit squared voltage error summed over meters
    /// and phases) at the reported location.
    pub mismatch: f64,
}

#[derive(Debug, Clone)]
pub struct FaultLocateOptions {
    /// Grid resolution along each branch (fraction of length).
    pub grid_step: f64,
    /// Minimum per-unit substation current step to call it a fault.
    pub min_delta_i_pu: f64,
    /// Relative tolerance under which distinct-branch minima count as tied.
    pub ambiguity_rel_tol: f64,
}

impl Default for FaultLocateOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            min_delta_i_pu: 5e-3,
            ambiguity_rel_tol: 1e-9,
        }
    }
}

/// Complex mean of the voltage and current phasors over a window of frames.
pub fn average_frames(frames: &[Frame]) -> Option<Frame> {
    let first = frames.first()?;
    let n = frames.len() as f64;
    let mut v = [Complex64::new(0.0, 0.0); 3];
    let mut i = [Complex64::new(0.0, 0.0); 3];
    for f in frames {
        for p in 0..3 {
            v[p] += f.voltage.phase(p).to_complex() / n;
            i[p] += f.current.phase(p).to_complex() / n;
        }
    }
    Some(Frame {
        timestamp_ns: first.timestamp_ns,
        meter_id: first.meter_id.clone(),
        voltage: ThreePhaseSet::from_complex(v),
        current: ThreePhaseSet::from_complex(i),
    })
}

/// Real 3x3 transfer mapping a current at `bus` to the current it draws at
/// the source: the product of the transformer current matrices on the path.
fn current_transfer_to_source(model: &FeederModel, bus: &str) -> Result<Matrix3<f64>, DiagError> {
    let mut t = Matrix3::identity();
    for bi in path_from_source(model, bus)? {
        if let BranchKind::Transformer(x) = &model.branches[bi].kind {
            t = transformer_current_matrix(x.n_t)? * t;
        }
    }
    Ok(t)
}

fn pinv3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let dm = DMatrix::from_iterator(3, 3, m.iter().cloned());
    let p = dm
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .expect("svd pseudo-inverse");
    Matrix3::from_iterator(p.iter().cloned())
}

struct Candidate {
    branch: String,
    fraction: f64,
    mismatch: f64,
}

/// Locate a fault by grid search over candidate (branch, position) pairs.
pub fn locate_fault(
    model: &FeederModel,
    prefault: &BTreeMap<String, Frame>,
    during: &BTreeMap<String, Frame>,
    substation: &str,
    opts: &FaultLocateOptions,
) -> Result<FaultLocation, DiagError> {
    let bases = model.voltage_bases()?;
    let sub_pre = prefault
        .get(substation)
        .ok_or(DiagError::InsufficientData { need: 1, got: 0 })?;
    let sub_during = during
        .get(substation)
        .ok_or(DiagError::InsufficientData { need: 1, got: 0 })?;

    let i_base_sub = model.s_base / (3.0 * bases[substation]);
    let mut delta_i = CVec3::zeros();
    let mut worst = 0.0f64;
    for p in 0..3 {
        delta_i[p] =
            sub_during.current.phase(p).to_complex() - sub_pre.current.phase(p).to_complex();
        worst = worst.max(delta_i[p].norm() / i_base_sub);
    }
    if worst < opts.min_delta_i_pu {
        return Err(DiagError::NoFaultDetected);
    }

    let lines: Vec<String> = model
        .branches
        .iter()
        .filter(|b| matches!(b.kind, BranchKind::Line(_)))
        .map(|b| b.name.clone())
        .collect();

    let mismatch_at = |branch: &str, fraction: f64| -> Option<f64> {
        let mut m = model.clone();
        // map the substation current step down to the faulted level
        let from_bus = model.branch(branch).ok()?.from_bus().to_string();
        let transfer = current_transfer_to_source(&m, &from_bus).ok()?;
        let inv = pinv3(&transfer);
        let mut inj = CVec3::zeros();
        for p in 0..3 {
            for q in 0..3 {
                inj[p] += Complex64::new(inv[(p, q)], 0.0) * delta_i[q];
            }
        }
        splice_fault(
            &mut m,
            branch,
            fraction,
            "@candidate",
            LoadModel::ConstantCurrent(inj),
        )
        .ok()?;
        let sol = solve_power_flow(&m).ok()?;
        let mut total = 0.0;
        for (meter, frame) in during {
            let Ok(pred) = sol.voltage(meter) else {
                return None;
            };
            let vb = bases[meter];
            for p in 0..3 {
                total += ((pred[p] - frame.voltage.phase(p).to_complex()) / vb).norm_sqr();
            }
        }
        Some(total)
    };

    // grid search, best per branch
    let steps = (1.0 / opts.grid_step).round() as usize;
    let mut per_branch: Vec<Candidate> = Vec::new();
    for branch in &lines {
        let mut best: Option<(usize, f64)> = None;
        let mut grid = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let f = k as f64 * opts.grid_step;
            let m = mismatch_at(branch, f);
            grid.push(m);
            if let Some(m) = m {
                if best.map(|(_, b)| m < b).unwrap_or(true) {
                    best = Some((k, m));
                }
            }
        }
        let Some((k, m)) = best else { continue };
        // quadratic refinement around an interior grid minimum
        let mut fraction = k as f64 * opts.grid_step;
        let mut mismatch = m;
        if k > 0 && k < steps {
            if let (Some(a), Some(b), Some(c)) = (grid[k - 1], grid[k], grid[k + 1]) {
                let denom = a - 2.0 * b + c;
                if denom > 0.0 {
                    let shift = 0.5 * (a - c) / denom;
                    let refined = (fraction + shift * opts.grid_step).clamp(0.0, 1.0);
                    if let Some(mr) = mismatch_at(branch, refined) {
                        if mr <= mismatch {
                            fraction = refined;
                            mismatch = mr;
                        }
                    }
                }
            }
        }
        per_branch.push(Candidate {
            branch: branch.clone(),
            fraction,
            mismatch,
        });
    }

    let best = per_branch
        .iter()
        .min_by(|a, b| a.mismatch.partial_cmp(&b.mismatch).expect("finite"))
        .ok_or(DiagError::NoFaultDetected)?;

    // candidates at a shared bus are the same electrical point
    let endpoint_bus = |c: &Candidate| -> Option<String> {
        let br = model.branch(&c.branch).ok()?;
        if c.fraction <= opts.grid_step / 2.0 {
            Some(br.from_bus().to_string())
        } else if c.fraction >= 1.0 - opts.grid_step / 2.0 {
            Some(br.to_bus().to_string())
        } else {
            None
        }
    };
    let mut tied: Vec<&Candidate> = per_branch
        .iter()
        .filter(|c| c.mismatch <= best.mismatch * (1.0 + opts.ambiguity_rel_tol) + 1e-30)
        .collect();
    if tied.len() > 1 {
        let best_bus = endpoint_bus(best);
        tied.retain(|c| {
            c.branch == best.branch || best_bus.is_none() || endpoint_bus(c) != best_bus
        });
        if tied.len() > 1 {
            return Err(DiagError::AmbiguousLocation(
                tied.iter().map(|c| (c.branch.clone(), c.fraction)).collect(),
            ));
        }
    }

    Ok(FaultLocation {
        branch: best.branch.clone(),
        distance_fraction: best.fraction,
        mismatch: best.mismatch,
    })
}

/// Build per-meter frames from a telemetry map by averaging a window.
pub fn window_average(
    frames: &BTreeMap<String, Vec<Frame>>,
    lo: usize,
    hi: usize,
) -> BTreeMap<String, Frame> {
    frames
        .iter()
        .filter_map(|(m, fs)| {
            let hi = hi.min(fs.len());
            if lo >= hi {
                return None;
            }
            average_frames(&fs[lo..hi]).map(|f| (m.clone(), f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        simulate_telemetry, Branch, Event, EventScript, LineBranch, LoadProfiles, NoiseModel,
        SourceSpec, DEFAULT_FAULT_SHUNT_OHMS,
    };

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn z(scale: f64) -> crate::sim::CMat3 {
        Matrix3::new(
            c(0.4, 1.0),
            c(0.1, 0.35),
            c(0.1, 0.33),
            c(0.1, 0.35),
            c(0.42, 1.02),
            c(0.11, 0.36),
            c(0.1, 0.33),
            c(0.11, 0.36),
            c(0.39, 0.98),
        ) * c(scale, 0.0)
    }

    /// sub -> m1 -> m2 chain with loads at both.
    fn chain_model() -> FeederModel {
        let mut loads = BTreeMap::new();
        loads.insert(
            "m1".to_string(),
            LoadModel::ConstantPower(CVec3::new(c(50e3, 15e3), c(40e3, 12e3), c(60e3, 18e3))),
        );
        loads.insert(
            "m2".to_string(),
            LoadModel::ConstantPower(CVec3::new(c(30e3, 9e3), c(35e3, 11e3), c(25e3, 8e3))),
        );
        FeederModel {
            s_base: 500e3,
            source: SourceSpec {
                bus: "sub".into(),
                voltage_ln: 2400.0,
                angle_rad: 0.0,
            },
            branches: vec![
                Branch {
                    name: "l1".into(),
                    kind: BranchKind::Line(LineBranch {
                        from: "sub".into(),
                        to: "m1".into(),
                        z: z(1.0),
                    }),
                },
                Branch {
                    name: "l2".into(),
                    kind: BranchKind::Line(LineBranch {
                        from: "m1".into(),
                        to: "m2".into(),
                        z: z(1.4),
                    }),
                },
            ],
            loads,
            meters: vec!["sub".into(), "m1".into(), "m2".into()],
        }
    }

    fn fault_telemetry(model: &FeederModel, branch: &str, fraction: f64) -> (BTreeMap<String, Frame>, BTreeMap<String, Frame>) {
        let events = EventScript {
            events: vec![(
                0.25,
                Event::BoltedFault {
                    branch: branch.into(),
                    distance_fraction: fraction,
                    phases: [true, true, true],
                    shunt_ohms: DEFAULT_FAULT_SHUNT_OHMS,
                },
            )],
        };
        let tele = simulate_telemetry(
            model,
            &LoadProfiles::constant(),
            &NoiseModel::noiseless(1),
            &events,
            0.5,
        )
        .unwrap();
        let pre = window_average(&tele.meters, 10, 28);
        let during = window_average(&tele.meters, 32, 58);
        (pre, during)
    }

    #[test]
    fn interior_fault_is_located_on_the_right_branch() {
        let model = chain_model();
        let (pre, during) = fault_telemetry(&model, "l2", 0.5);
        let loc = locate_fault(&model, &pre, &during, "sub", &FaultLocateOptions::default())
            .unwrap();
        assert_eq!(loc.branch, "l2");
        assert!(
            (loc.distance_fraction - 0.5).abs() <= 0.05,
            "fraction {}",
            loc.distance_fraction
        );
    }

    #[test]
    fn no_event_window_reports_no_fault() {
        let model = chain_model();
        let tele = simulate_telemetry(
            &model,
            &LoadProfiles::constant(),
            &NoiseModel::noiseless(1),
            &EventScript::none(),
            0.5,
        )
        .unwrap();
        let pre = window_average(&tele.meters, 5, 25);
        let during = window_average(&tele.meters, 30, 50);
        assert!(matches!(
            locate_fault(&model, &pre, &during, "sub", &FaultLocateOptions::default()),
            Err(DiagError::NoFaultDetected)
        ));
    }

    #[test]
    fn fault_at_a_bus_lands_on_an_adjacent_branch_end() {
        let model = chain_model();
        let (pre, during) = fault_telemetry(&model, "l2", 0.0); // exactly at bus m1
        let loc = locate_fault(&model, &pre, &during, "sub", &FaultLocateOptions::default())
            .unwrap();
        // the located point must be electrically the m1 bus: either end of
        // l1/l2 that touches it
        let at_m1 = (loc.branch == "l1" && loc.distance_fraction >= 0.995)
            || (loc.branch == "l2" && loc.distance_fraction <= 0.005);
        assert!(at_m1, "located {loc:?}");
    }
}
