//! Three-phase unbalanced feeder model and telemetry synthesizer.
//!
//! The model is a radial collection of lines (full 3x3 mutually coupled
//! impedance), delta-grounded-wye transformers (diagonal low-side impedance
//! plus the ratio matrix phase shift), and switches. Loads are per-bus,
//! per-phase constant-power or constant-current; constant-impedance shunts
//! exist for fault modeling. All electrical quantities are engineering units
//! (volts, amperes, ohms, VA); per-unit conversion uses a single VA base per
//! model and one voltage base per voltage level.

mod solve;
mod telemetry;

pub use solve::{solve_power_flow, verify_solution, PowerFlowSolution};
pub use telemetry::{
    frame_timestamp_ns, simulate_telemetry, splice_fault, Event, EventScript, GapMarker,
    LoadProfile, LoadProfiles, NoiseModel, Telemetry, DEFAULT_FAULT_SHUNT_OHMS,
};

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use thiserror::Error;

use crate::phasor::ThreePhaseSet;

pub type CMat3 = Matrix3<Complex64>;
pub type CVec3 = Vector3<Complex64>;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("transformer ratio must be positive")]
    InvalidRatio,
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("energized subgraph is not radial (second path into bus {0})")]
    NotRadial(String),
    #[error("power flow did not converge after {0} iterations")]
    Diverged(usize),
    #[error("unknown bus {0}")]
    UnknownBus(String),
    #[error("unknown branch {0}")]
    UnknownBranch(String),
    #[error("invalid event script: {0}")]
    EventScript(String),
    #[error("invalid noise model: {0}")]
    NoiseModel(String),
    #[error("load profile does not cover the horizon: {0}")]
    ProfileGap(String),
}

/// Tolerance for the symmetry check on line impedance matrices.
const SYMMETRY_TOL: f64 = 1e-12;

/// A three-phase line section with a symmetric 3x3 impedance matrix (ohms).
#[derive(Debug, Clone, PartialEq)]
pub struct LineBranch {
    pub from: String,
    pub to: String,
    pub z: CMat3,
}

/// Delta (high) to grounded-wye (low) transformer.
///
/// `n_t` is the ratio of rated line-to-line voltage on the high side to rated
/// line-to-neutral voltage on the low side. The series impedance is diagonal
/// and referred to the low side.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBranch {
    pub from: String,
    pub to: String,
    pub n_t: f64,
    pub z_abc: CVec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchBranch {
    pub from: String,
    pub to: String,
    pub status: SwitchStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BranchKind {
    Line(LineBranch),
    Transformer(TransformerBranch),
    Switch(SwitchBranch),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: String,
    pub kind: BranchKind,
}

impl Branch {
    pub fn from_bus(&self) -> &str {
        match &self.kind {
            BranchKind::Line(l) => &l.from,
            BranchKind::Transformer(t) => &t.from,
            BranchKind::Switch(s) => &s.from,
        }
    }

    pub fn to_bus(&self) -> &str {
        match &self.kind {
            BranchKind::Line(l) => &l.to,
            BranchKind::Transformer(t) => &t.to,
            BranchKind::Switch(s) => &s.to,
        }
    }

    fn conducts(&self) -> bool {
        match &self.kind {
            BranchKind::Switch(s) => s.status == SwitchStatus::Closed,
            _ => true,
        }
    }
}

/// Per-bus, per-phase load.
///
/// Constant-power iterates with the sweep; constant-current is a fixed
/// complex injection (absolute phase reference) and solves in closed form;
/// constant-impedance is a shunt to ground, used for fault events. Non-finite
/// impedance entries mean "no shunt on that phase".
#[derive(Debug, Clone, PartialEq)]
pub enum LoadModel {
    ConstantPower(CVec3),
    ConstantCurrent(CVec3),
    ConstantImpedance(CVec3),
}

/// Fixed positive-sequence three-phase source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub bus: String,
    /// Line-to-neutral RMS volts.
    pub voltage_ln: f64,
    pub angle_rad: f64,
}

impl SourceSpec {
    pub fn voltages(&self) -> CVec3 {
        let third = 2.0 * std::f64::consts::PI / 3.0;
        CVec3::new(
            Complex64::from_polar(self.voltage_ln, self.angle_rad),
            Complex64::from_polar(self.voltage_ln, self.angle_rad - third),
            Complex64::from_polar(self.voltage_ln, self.angle_rad + third),
        )
    }
}

/// Buses, branches, loads and meter placements of one radial feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    /// Three-phase VA base for per-unit conversions.
    pub s_base: f64,
    pub source: SourceSpec,
    pub branches: Vec<Branch>,
    pub loads: BTreeMap<String, LoadModel>,
    pub meters: Vec<String>,
}

impl FeederModel {
    /// All bus names: the source plus every branch endpoint, in first-seen
    /// order.
    pub fn buses(&self) -> Vec<String> {
        let mut seen = Vec::new();
        let mut push = |name: &str| {
            if !seen.iter().any(|b: &String| b == name) {
                seen.push(name.to_string());
            }
        };
        push(&self.source.bus);
        for b in &self.branches {
            push(b.from_bus());
            push(b.to_bus());
        }
        seen
    }

    pub fn branch(&self, name: &str) -> Result<&Branch, SimError> {
        self.branches
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| SimError::UnknownBranch(name.to_string()))
    }

    pub fn branch_mut(&mut self, name: &str) -> Result<&mut Branch, SimError> {
        self.branches
            .iter_mut()
            .find(|b| b.name == name)
            .ok_or_else(|| SimError::UnknownBranch(name.to_string()))
    }

    /// Line-to-neutral voltage base per bus, propagated from the source
    /// across transformer ratios. Uses all branches regardless of switch
    /// state: an open switch does not change a voltage level.
    pub fn voltage_bases(&self) -> Result<HashMap<String, f64>, SimError> {
        let mut bases: HashMap<String, f64> = HashMap::new();
        bases.insert(self.source.bus.clone(), self.source.voltage_ln);
        let mut queue = VecDeque::from([self.source.bus.clone()]);
        while let Some(bus) = queue.pop_front() {
            let here = bases[&bus];
            for br in &self.branches {
                let (near, far) = if br.from_bus() == bus {
                    (br.from_bus(), br.to_bus())
                } else if br.to_bus() == bus {
                    (br.to_bus(), br.from_bus())
                } else {
                    continue;
                };
                let far_base = match &br.kind {
                    BranchKind::Line(_) | BranchKind::Switch(_) => here,
                    BranchKind::Transformer(t) => {
                        if t.n_t <= 0.0 {
                            return Err(SimError::InvalidRatio);
                        }
                        if near == t.from {
                            3f64.sqrt() * here / t.n_t
                        } else {
                            t.n_t * here / 3f64.sqrt()
                        }
                    }
                };
                match bases.get(far) {
                    Some(existing) => {
                        if (existing - far_base).abs() > 1e-6 * existing.abs() {
                            return Err(SimError::ModelViolation(format!(
                                "conflicting voltage bases at bus {far}: {existing} vs {far_base}"
                            )));
                        }
                    }
                    None => {
                        bases.insert(far.to_string(), far_base);
                        queue.push_back(far.to_string());
                    }
                }
            }
        }
        Ok(bases)
    }

    /// Validate structural invariants: names resolve, impedances are
    /// symmetric with non-negative resistive diagonals, ratios are positive,
    /// the energized subgraph containing the source is radial, and every bus
    /// has a voltage base.
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.s_base.is_finite() && self.s_base > 0.0) {
            return Err(SimError::ModelViolation("s_base must be positive".into()));
        }
        if !(self.source.voltage_ln.is_finite() && self.source.voltage_ln > 0.0) {
            return Err(SimError::ModelViolation(
                "source voltage must be positive".into(),
            ));
        }
        let mut names: Vec<&str> = Vec::new();
        for br in &self.branches {
            if names.contains(&br.name.as_str()) {
                return Err(SimError::ModelViolation(format!(
                    "duplicate branch name {}",
                    br.name
                )));
            }
            names.push(&br.name);
            if br.from_bus() == br.to_bus() {
                return Err(SimError::ModelViolation(format!(
                    "branch {} is a self loop",
                    br.name
                )));
            }
            match &br.kind {
                BranchKind::Line(l) => {
                    check_symmetric(&l.z)?;
                    for p in 0..3 {
                        if l.z[(p, p)].re < 0.0 {
                            return Err(SimError::ModelViolation(format!(
                                "branch {} has negative series resistance",
                                br.name
                            )));
                        }
                    }
                }
                BranchKind::Transformer(t) => {
                    if !(t.n_t.is_finite() && t.n_t > 0.0) {
                        return Err(SimError::InvalidRatio);
                    }
                }
                BranchKind::Switch(_) => {}
            }
        }
        let buses = self.buses();
        for bus in self.loads.keys() {
            if !buses.contains(bus) {
                return Err(SimError::UnknownBus(bus.clone()));
            }
        }
        for m in &self.meters {
            if !buses.contains(m) {
                return Err(SimError::UnknownBus(m.clone()));
            }
        }
        let bases = self.voltage_bases()?;
        for bus in &buses {
            if !bases.contains_key(bus) {
                return Err(SimError::ModelViolation(format!(
                    "bus {bus} has no path to the source, voltage base undefined"
                )));
            }
        }
        // Radiality of the energized component is checked by the tree build.
        solve::build_tree(self)?;
        Ok(())
    }
}

fn check_symmetric(z: &CMat3) -> Result<(), SimError> {
    let mut scale = 1.0f64;
    for r in 0..3 {
        for c in 0..3 {
            scale = scale.max(z[(r, c)].norm());
        }
    }
    for r in 0..3 {
        for c in (r + 1)..3 {
            if (z[(r, c)] - z[(c, r)]).norm() > SYMMETRY_TOL * scale {
                return Err(SimError::ModelViolation(
                    "line impedance matrix is not symmetric".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Ratio matrix mapping high-side line-to-neutral voltages to ideal low-side
/// line-to-ground voltages of a delta-grounded-wye transformer:
/// `(1/n_t) * [[1,0,-1],[-1,1,0],[0,-1,1]]`.
pub fn transformer_ratio_matrix(n_t: f64) -> Result<Matrix3<f64>, SimError> {
    if !(n_t.is_finite() && n_t > 0.0) {
        return Err(SimError::InvalidRatio);
    }
    let k = 1.0 / n_t;
    Ok(Matrix3::new(
        k, 0.0, -k, //
        -k, k, 0.0, //
        0.0, -k, k,
    ))
}

/// Current transfer matrix of the same transformer: low-side line currents to
/// high-side line currents. Transpose structure of the ratio matrix, so the
/// ideal part is power-invariant and the delta side carries no zero-sequence
/// current.
pub fn transformer_current_matrix(n_t: f64) -> Result<Matrix3<f64>, SimError> {
    transformer_ratio_matrix(n_t).map(|m| m.transpose())
}

pub(crate) fn real_to_complex(m: &Matrix3<f64>) -> CMat3 {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Branch indices along the energized path from the source to `bus`,
/// ordered source-out.
pub fn path_from_source(model: &FeederModel, bus: &str) -> Result<Vec<usize>, SimError> {
    let tree = solve::build_tree(model)?;
    let target = *tree
        .bus_index
        .get(bus)
        .ok_or_else(|| SimError::UnknownBus(bus.to_string()))?;
    if !tree.energized[target] {
        return Err(SimError::ModelViolation(format!("bus {bus} is de-energized")));
    }
    let mut parent_edge: Vec<Option<usize>> = vec![None; tree.bus_names.len()];
    for &bi in &tree.branch_order {
        let (_, child, _) = tree.orientation[bi].expect("ordered branch oriented");
        parent_edge[child] = Some(bi);
    }
    let mut path = Vec::new();
    let mut cur = target;
    while let Some(bi) = parent_edge[cur] {
        path.push(bi);
        let (p, _, _) = tree.orientation[bi].expect("oriented");
        cur = p;
    }
    path.reverse();
    Ok(path)
}

/// Voltage drop `Z * I` across a three-phase series element.
pub fn line_drop(z: &CMat3, i: &ThreePhaseSet) -> Result<ThreePhaseSet, SimError> {
    check_symmetric(z)?;
    let drop = z * CVec3::new(
        i.a.to_complex(),
        i.b.to_complex(),
        i.c.to_complex(),
    );
    Ok(ThreePhaseSet::from_complex([drop[0], drop[1], drop[2]]))
}

/// Low-side line-to-ground voltages of a delta-grounded-wye transformer given
/// high-side line-to-neutral voltages and low-side currents:
/// `VLG = A_t * VLN - Z_abc * I`.
pub fn transformer_secondary(
    vln_high: &ThreePhaseSet,
    i_low: &ThreePhaseSet,
    xfmr: &TransformerBranch,
) -> Result<ThreePhaseSet, SimError> {
    let a_t = real_to_complex(&transformer_ratio_matrix(xfmr.n_t)?);
    let v = CVec3::new(
        vln_high.a.to_complex(),
        vln_high.b.to_complex(),
        vln_high.c.to_complex(),
    );
    let i = CVec3::new(
        i_low.a.to_complex(),
        i_low.b.to_complex(),
        i_low.c.to_complex(),
    );
    let out = a_t * v - CVec3::new(xfmr.z_abc[0] * i[0], xfmr.z_abc[1] * i[1], xfmr.z_abc[2] * i[2]);
    Ok(ThreePhaseSet::from_complex([out[0], out[1], out[2]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::Phasor;
    use std::f64::consts::PI;

    #[test]
    fn ratio_matrix_at_unity() {
        let m = transformer_ratio_matrix(1.0).unwrap();
        let want = Matrix3::new(1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0);
        assert_eq!(m, want);
        assert_eq!(transformer_ratio_matrix(0.0), Err(SimError::InvalidRatio));
        assert_eq!(transformer_ratio_matrix(-2.0), Err(SimError::InvalidRatio));
    }

    #[test]
    fn ratio_matrix_rows_sum_to_zero() {
        for &n_t in &[0.5, 1.0, 2.0, 30.0, 173.2] {
            let m = transformer_ratio_matrix(n_t).unwrap();
            for r in 0..3 {
                let s: f64 = (0..3).map(|c| m[(r, c)]).sum();
                assert!(s.abs() < 1e-15, "row {r} of n_t={n_t} sums to {s}");
            }
        }
    }

    #[test]
    fn ratio_matrix_scales_inversely() {
        let m1 = transformer_ratio_matrix(1.0).unwrap();
        let m2 = transformer_ratio_matrix(2.0).unwrap();
        assert_eq!(m2 * 2.0, m1);
    }

    #[test]
    fn line_drop_zero_current() {
        let z = CMat3::from_diagonal(&CVec3::new(
            Complex64::new(1.0, 2.0),
            Complex64::new(1.0, 2.0),
            Complex64::new(1.0, 2.0),
        ));
        let drop = line_drop(&z, &ThreePhaseSet::zero()).unwrap();
        assert_eq!(drop.a.magnitude(), 0.0);
        assert_eq!(drop.b.magnitude(), 0.0);
        assert_eq!(drop.c.magnitude(), 0.0);
    }

    #[test]
    fn line_drop_diagonal_single_phase() {
        let z = CMat3::from_diagonal(&CVec3::new(
            Complex64::new(0.3, 0.7),
            Complex64::new(0.4, 0.8),
            Complex64::new(0.5, 0.9),
        ));
        let ia = Phasor::new(10.0, 0.25).unwrap();
        let i = ThreePhaseSet::new(ia, Phasor::zero(), Phasor::zero());
        let drop = line_drop(&z, &i).unwrap();
        let want = Complex64::new(0.3, 0.7) * ia.to_complex();
        assert!((drop.a.to_complex() - want).norm() < 1e-12);
        assert_eq!(drop.b.magnitude(), 0.0);
        assert_eq!(drop.c.magnitude(), 0.0);
    }

    #[test]
    fn line_drop_matches_elementwise_oracle() {
        // full mutual coupling, unbalanced currents
        let z = Matrix3::new(
            Complex64::new(0.4, 1.0),
            Complex64::new(0.1, 0.4),
            Complex64::new(0.09, 0.35),
            Complex64::new(0.1, 0.4),
            Complex64::new(0.41, 1.02),
            Complex64::new(0.11, 0.38),
            Complex64::new(0.09, 0.35),
            Complex64::new(0.11, 0.38),
            Complex64::new(0.39, 0.99),
        );
        let i = [
            Complex64::from_polar(12.0, 0.1),
            Complex64::from_polar(7.0, -2.0),
            Complex64::from_polar(9.5, 2.2),
        ];
        let drop = line_drop(
            &z,
            &ThreePhaseSet::from_complex(i),
        )
        .unwrap();
        // element-wise complex arithmetic oracle
        for r in 0..3 {
            let mut want = Complex64::new(0.0, 0.0);
            for c in 0..3 {
                want += z[(r, c)] * i[c];
            }
            let got = drop.phase(r).to_complex();
            assert!((got - want).norm() < 1e-12, "row {r}");
        }
    }

    #[test]
    fn line_drop_rejects_asymmetric() {
        let mut z = CMat3::zeros();
        z[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(
            line_drop(&z, &ThreePhaseSet::zero()),
            Err(SimError::ModelViolation(_))
        ));
    }

    #[test]
    fn transformer_secondary_zero_current() {
        let xfmr = TransformerBranch {
            from: "h".into(),
            to: "l".into(),
            n_t: 2.5,
            z_abc: CVec3::new(
                Complex64::new(0.1, 0.5),
                Complex64::new(0.1, 0.5),
                Complex64::new(0.1, 0.5),
            ),
        };
        let v = ThreePhaseSet::new(
            Phasor::new(100.0, 0.0).unwrap(),
            Phasor::new(100.0, -2.0 * PI / 3.0).unwrap(),
            Phasor::new(100.0, 2.0 * PI / 3.0).unwrap(),
        );
        let out = transformer_secondary(&v, &ThreePhaseSet::zero(), &xfmr).unwrap();
        let a_t = real_to_complex(&transformer_ratio_matrix(2.5).unwrap());
        let want = a_t * CVec3::new(
            v.a.to_complex(),
            v.b.to_complex(),
            v.c.to_complex(),
        );
        for p in 0..3 {
            assert!((out.phase(p).to_complex() - want[p]).norm() < 1e-12);
        }
    }

    #[test]
    fn transformer_secondary_shifts_by_minus_thirty_degrees() {
        // Balanced positive-sequence high side at angle 0, n_t = 1: the
        // ideal low side is sqrt(3) larger and lags by 30 degrees.
        let xfmr = TransformerBranch {
            from: "h".into(),
            to: "l".into(),
            n_t: 1.0,
            z_abc: CVec3::zeros(),
        };
        let v = ThreePhaseSet::new(
            Phasor::new(1.0, 0.0).unwrap(),
            Phasor::new(1.0, -2.0 * PI / 3.0).unwrap(),
            Phasor::new(1.0, 2.0 * PI / 3.0).unwrap(),
        );
        let out = transformer_secondary(&v, &ThreePhaseSet::zero(), &xfmr).unwrap();
        for p in 0..3 {
            let high = v.phase(p);
            let low = out.phase(p);
            assert!((low.magnitude() - 3f64.sqrt()).abs() < 1e-12);
            let shift = crate::phasor::angle_diff(low.angle(), high.angle()).unwrap();
            assert!(
                (shift + PI / 6.0).abs() < 1e-12,
                "phase {p} shift {shift} is not -30 degrees"
            );
        }
    }

    #[test]
    fn voltage_bases_cross_transformers() {
        let model = FeederModel {
            s_base: 1e6,
            source: SourceSpec {
                bus: "sub".into(),
                voltage_ln: 7200.0,
                angle_rad: 0.0,
            },
            branches: vec![
                Branch {
                    name: "t1".into(),
                    kind: BranchKind::Transformer(TransformerBranch {
                        from: "sub".into(),
                        to: "low".into(),
                        n_t: 30.0,
                        z_abc: CVec3::zeros(),
                    }),
                },
            ],
            loads: BTreeMap::new(),
            meters: vec![],
        };
        let bases = model.voltage_bases().unwrap();
        assert!((bases["sub"] - 7200.0).abs() < 1e-9);
        let want = 3f64.sqrt() * 7200.0 / 30.0;
        assert!((bases["low"] - want).abs() < 1e-9);
    }
}
