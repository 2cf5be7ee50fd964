//! Telemetry synthesis: repeated power-flow solutions over an event-adjusted
//! model, sampled at the nominal 120 frames/s report rate with Gaussian
//! measurement noise.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    solve_power_flow, Branch, BranchKind, CVec3, FeederModel, LineBranch, LoadModel, SimError,
    SwitchStatus,
};
use crate::phasor::{wrap_angle, Frame, Phasor, ThreePhaseSet};

/// Measurement noise of the synthesized instrument.
///
/// Defaults follow the measured device characteristics: angle standard
/// deviation 0.01 degrees, magnitude standard deviation 1.7e-4 per-unit.
/// Identical seeds reproduce identical streams bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub angle_sigma: f64,
    pub magnitude_sigma_pu: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            angle_sigma: 0.01f64.to_radians(),
            magnitude_sigma_pu: 1.7e-4,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            angle_sigma: 0.0,
            magnitude_sigma_pu: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = self.angle_sigma.is_finite()
            && self.angle_sigma >= 0.0
            && self.magnitude_sigma_pu.is_finite()
            && self.magnitude_sigma_pu >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::NoiseModel("sigmas must be finite and >= 0".into()))
        }
    }
}

/// Per-phase multiplicative load profile over simulation time (seconds).
#[derive(Debug, Clone, PartialEq)]
pub enum LoadProfile {
    Constant,
    /// Piecewise-linear knots `(t_seconds, [scale_a, scale_b, scale_c])`,
    /// strictly increasing in time. Knots must cover the horizon.
    Piecewise(Vec<(f64, [f64; 3])>),
}

impl LoadProfile {
    fn validate(&self, duration: f64) -> Result<(), SimError> {
        if let LoadProfile::Piecewise(knots) = self {
            if knots.is_empty() {
                return Err(SimError::ProfileGap("empty profile".into()));
            }
            for w in knots.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(SimError::ProfileGap(
                        "profile knots must be strictly increasing in time".into(),
                    ));
                }
            }
            if knots[0].0 > 0.0 || knots[knots.len() - 1].0 < duration {
                return Err(SimError::ProfileGap(format!(
                    "knots span [{}, {}], horizon needs [0, {duration}]",
                    knots[0].0,
                    knots[knots.len() - 1].0
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> [f64; 3] {
        match self {
            LoadProfile::Constant => [1.0, 1.0, 1.0],
            LoadProfile::Piecewise(knots) => {
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                if t >= knots[knots.len() - 1].0 {
                    return knots[knots.len() - 1].1;
                }
                let idx = knots.partition_point(|k| k.0 <= t);
                let (t0, s0) = knots[idx - 1];
                let (t1, s1) = knots[idx];
                let w = (t - t0) / (t1 - t0);
                [
                    s0[0] + w * (s1[0] - s0[0]),
                    s0[1] + w * (s1[1] - s0[1]),
                    s0[2] + w * (s1[2] - s0[2]),
                ]
            }
        }
    }
}

/// Per-bus load profiles; buses without an entry stay at their base load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadProfiles(pub BTreeMap<String, LoadProfile>);

impl LoadProfiles {
    pub fn constant() -> Self {
        Self::default()
    }

    fn validate(&self, model: &FeederModel, duration: f64) -> Result<(), SimError> {
        let buses = model.buses();
        for (bus, p) in &self.0 {
            if !buses.contains(bus) {
                return Err(SimError::UnknownBus(bus.clone()));
            }
            p.validate(duration)?;
        }
        Ok(())
    }

    fn eval(&self, bus: &str, t: f64) -> [f64; 3] {
        self.0
            .get(bus)
            .map(|p| p.eval(t))
            .unwrap_or([1.0, 1.0, 1.0])
    }
}

/// A scripted disturbance. All events persist from their activation time
/// except `Sag`, which clears after its duration.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    SwitchToggle {
        branch: String,
    },
    LoadStep {
        bus: String,
        scale: f64,
    },
    BoltedFault {
        branch: String,
        distance_fraction: f64,
        phases: [bool; 3],
        shunt_ohms: f64,
    },
    Sag {
        depth: f64,
        duration: f64,
    },
    Oscillation {
        amplitude: f64,
        frequency_hz: f64,
    },
}

pub const DEFAULT_FAULT_SHUNT_OHMS: f64 = 1e-3;

/// Ordered event schedule: times strictly increasing, within the horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventScript {
    pub events: Vec<(f64, Event)>,
}

impl EventScript {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, model: &FeederModel, duration: f64) -> Result<(), SimError> {
        let mut prev = f64::NEG_INFINITY;
        for (t, ev) in &self.events {
            if *t <= prev {
                return Err(SimError::EventScript(
                    "event times must be strictly increasing".into(),
                ));
            }
            prev = *t;
            if *t < 0.0 || *t >= duration {
                return Err(SimError::EventScript(format!(
                    "event at t={t} outside horizon [0, {duration})"
                )));
            }
            match ev {
                Event::SwitchToggle { branch } => {
                    let b = model.branch(branch)?;
                    if !matches!(b.kind, BranchKind::Switch(_)) {
                        return Err(SimError::EventScript(format!(
                            "switch_toggle target {branch} is not a switch"
                        )));
                    }
                }
                Event::LoadStep { bus, scale } => {
                    if !model.buses().contains(bus) {
                        return Err(SimError::UnknownBus(bus.clone()));
                    }
                    if !(scale.is_finite() && *scale >= 0.0) {
                        return Err(SimError::EventScript("load_step scale must be >= 0".into()));
                    }
                }
                Event::BoltedFault {
                    branch,
                    distance_fraction,
                    phases,
                    shunt_ohms,
                } => {
                    let b = model.branch(branch)?;
                    if !matches!(b.kind, BranchKind::Line(_)) {
                        return Err(SimError::EventScript(format!(
                            "bolted_fault target {branch} is not a line"
                        )));
                    }
                    if !(0.0..=1.0).contains(distance_fraction) {
                        return Err(SimError::EventScript(
                            "fault distance_fraction must be in [0, 1]".into(),
                        ));
                    }
                    if !phases.iter().any(|p| *p) {
                        return Err(SimError::EventScript(
                            "fault must involve at least one phase".into(),
                        ));
                    }
                    if !(shunt_ohms.is_finite() && *shunt_ohms > 0.0) {
                        return Err(SimError::EventScript("fault shunt must be > 0".into()));
                    }
                }
                Event::Sag { depth, duration: d } => {
                    if !(0.0..=1.0).contains(depth) || !(d.is_finite() && *d > 0.0) {
                        return Err(SimError::EventScript("sag depth in [0,1], duration > 0".into()));
                    }
                }
                Event::Oscillation {
                    amplitude,
                    frequency_hz,
                } => {
                    if !(amplitude.is_finite() && *amplitude >= 0.0)
                        || !(frequency_hz.is_finite() && *frequency_hz > 0.0)
                    {
                        return Err(SimError::EventScript(
                            "oscillation amplitude >= 0, frequency > 0".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Split a line branch at a fractional position and attach a shunt load at
/// the split point. The two halves keep the original impedance split
/// proportionally, which is exactly the series two-line composition.
pub fn splice_fault(
    model: &mut FeederModel,
    branch: &str,
    fraction: f64,
    fault_bus: &str,
    load: LoadModel,
) -> Result<(), SimError> {
    let idx = model
        .branches
        .iter()
        .position(|b| b.name == branch)
        .ok_or_else(|| SimError::UnknownBranch(branch.to_string()))?;
    let line = match &model.branches[idx].kind {
        BranchKind::Line(l) => l.clone(),
        _ => {
            return Err(SimError::ModelViolation(format!(
                "branch {branch} is not a line"
            )))
        }
    };
    let name = model.branches[idx].name.clone();
    let near = Branch {
        name: format!("{name}#a"),
        kind: BranchKind::Line(LineBranch {
            from: line.from.clone(),
            to: fault_bus.to_string(),
            z: line.z * Complex64::new(fraction, 0.0),
        }),
    };
    let far = Branch {
        name: format!("{name}#b"),
        kind: BranchKind::Line(LineBranch {
            from: fault_bus.to_string(),
            to: line.to.clone(),
            z: line.z * Complex64::new(1.0 - fraction, 0.0),
        }),
    };
    model.branches.splice(idx..=idx, [near, far]);
    model.loads.insert(fault_bus.to_string(), load);
    Ok(())
}

fn fault_shunt(phases: [bool; 3], shunt_ohms: f64) -> LoadModel {
    let inf = Complex64::new(f64::INFINITY, 0.0);
    LoadModel::ConstantImpedance(CVec3::new(
        if phases[0] { Complex64::new(shunt_ohms, 0.0) } else { inf },
        if phases[1] { Complex64::new(shunt_ohms, 0.0) } else { inf },
        if phases[2] { Complex64::new(shunt_ohms, 0.0) } else { inf },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapMarker {
    pub timestamp_ns: i64,
    pub reason: String,
}

/// One frame stream per meter plus gap markers for instants where the
/// event-adjusted model could not be solved.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub meters: BTreeMap<String, Vec<Frame>>,
    pub gaps: Vec<GapMarker>,
    pub timestamps_ns: Vec<i64>,
}

pub fn frame_timestamp_ns(k: usize) -> i64 {
    (k as i128 * 1_000_000_000 / 120) as i64
}

/// Build the model as it stands at simulation time `t`, with all events at or
/// before `t` applied.
fn model_at(
    base: &FeederModel,
    profiles: &LoadProfiles,
    events: &EventScript,
    t: f64,
) -> Result<FeederModel, SimError> {
    let mut model = base.clone();
    let mut source_scale = 1.0f64;
    let mut step_scale: BTreeMap<&str, f64> = BTreeMap::new();
    let mut fault_no = 0usize;

    for (te, ev) in &events.events {
        if *te > t {
            break;
        }
        match ev {
            Event::SwitchToggle { branch } => {
                if let BranchKind::Switch(sw) = &mut model.branch_mut(branch)?.kind {
                    sw.status = match sw.status {
                        SwitchStatus::Open => SwitchStatus::Closed,
                        SwitchStatus::Closed => SwitchStatus::Open,
                    };
                }
            }
            Event::LoadStep { bus, scale } => {
                *step_scale.entry(bus.as_str()).or_insert(1.0) *= scale;
            }
            Event::BoltedFault {
                branch,
                distance_fraction,
                phases,
                shunt_ohms,
            } => {
                fault_no += 1;
                let fault_bus = format!("{branch}@fault{fault_no}");
                splice_fault(
                    &mut model,
                    branch,
                    *distance_fraction,
                    &fault_bus,
                    fault_shunt(*phases, *shunt_ohms),
                )?;
            }
            Event::Sag { depth, duration } => {
                if t < te + duration {
                    source_scale *= 1.0 - depth;
                }
            }
            Event::Oscillation {
                amplitude,
                frequency_hz,
            } => {
                let phase = 2.0 * std::f64::consts::PI * frequency_hz * (t - te);
                source_scale *= 1.0 + amplitude * phase.sin();
            }
        }
    }
    model.source.voltage_ln = base.source.voltage_ln * source_scale;

    // Apply per-phase profile and accumulated step scales to the base loads.
    let mut scaled = BTreeMap::new();
    for (bus, load) in &base.loads {
        let prof = profiles.eval(bus, t);
        let step = step_scale.get(bus.as_str()).copied().unwrap_or(1.0);
        let s = [prof[0] * step, prof[1] * step, prof[2] * step];
        let scaled_load = match load {
            LoadModel::ConstantPower(p) => LoadModel::ConstantPower(CVec3::new(
                p[0] * s[0],
                p[1] * s[1],
                p[2] * s[2],
            )),
            LoadModel::ConstantCurrent(c) => LoadModel::ConstantCurrent(CVec3::new(
                c[0] * s[0],
                c[1] * s[1],
                c[2] * s[2],
            )),
            LoadModel::ConstantImpedance(z) => {
                let div = |z: Complex64, s: f64| if s > 0.0 { z / s } else { Complex64::new(f64::INFINITY, 0.0) };
                LoadModel::ConstantImpedance(CVec3::new(
                    div(z[0], s[0]),
                    div(z[1], s[1]),
                    div(z[2], s[2]),
                ))
            }
        };
        scaled.insert(bus.clone(), scaled_load);
    }
    // Fault shunts spliced above must survive the load rewrite.
    for (bus, load) in model.loads.iter() {
        if !scaled.contains_key(bus) {
            scaled.insert(bus.clone(), load.clone());
        }
    }
    model.loads = scaled;
    Ok(model)
}

struct NoiseSource {
    rng: ChaCha8Rng,
    angle: Option<Normal<f64>>,
    magnitude_pu: Option<Normal<f64>>,
}

impl NoiseSource {
    fn new(noise: &NoiseModel) -> Self {
        let mk = |s: f64| {
            if s > 0.0 {
                Some(Normal::new(0.0, s).expect("validated sigma"))
            } else {
                None
            }
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            angle: mk(noise.angle_sigma),
            magnitude_pu: mk(noise.magnitude_sigma_pu),
        }
    }

    fn phasor(&mut self, c: Complex64, mag_base: f64) -> Phasor {
        let mut mag = c.norm();
        if let Some(n) = &self.magnitude_pu {
            mag += n.sample(&mut self.rng) * mag_base;
        }
        let mut ang = c.arg();
        if let Some(n) = &self.angle {
            ang += n.sample(&mut self.rng);
        }
        Phasor::new(mag.max(0.0), wrap_angle(ang).expect("finite angle")).expect("valid phasor")
    }

    fn three_phase(&mut self, v: &CVec3, mag_base: f64) -> ThreePhaseSet {
        ThreePhaseSet::new(
            self.phasor(v[0], mag_base),
            self.phasor(v[1], mag_base),
            self.phasor(v[2], mag_base),
        )
    }
}

/// Simulate meter telemetry at 120 frames/s over `duration_s` seconds.
///
/// At each report instant the event-adjusted model is solved, meter buses are
/// read (voltage at the bus, current entering it from its source-side
/// branch; the feeder head current at the source), and Gaussian noise is
/// applied. Solver failures become gap markers instead of aborting the run.
pub fn simulate_telemetry(
    model: &FeederModel,
    profiles: &LoadProfiles,
    noise: &NoiseModel,
    events: &EventScript,
    duration_s: f64,
) -> Result<Telemetry, SimError> {
    model.validate()?;
    noise.validate()?;
    events.validate(model, duration_s)?;
    profiles.validate(model, duration_s)?;

    let bases = model.voltage_bases()?;
    let n_frames = (duration_s * 120.0).round() as usize;
    let mut noise_src = NoiseSource::new(noise);

    let mut meters: BTreeMap<String, Vec<Frame>> = model
        .meters
        .iter()
        .map(|m| (m.clone(), Vec::with_capacity(n_frames)))
        .collect();
    let mut gaps = Vec::new();
    let mut timestamps = Vec::with_capacity(n_frames);

    for k in 0..n_frames {
        let t = k as f64 / 120.0;
        let t_ns = frame_timestamp_ns(k);
        timestamps.push(t_ns);
        let state = model_at(model, profiles, events, t)?;
        match solve_power_flow(&state) {
            Ok(sol) => {
                for meter in &model.meters {
                    let v = sol.voltage(meter)?;
                    let i = sol.inflow(meter)?;
                    let v_base = bases[meter];
                    let i_base = model.s_base / (3.0 * v_base);
                    let frame = Frame {
                        timestamp_ns: t_ns,
                        meter_id: meter.clone(),
                        voltage: noise_src.three_phase(&v, v_base),
                        current: noise_src.three_phase(&i, i_base),
                    };
                    meters.get_mut(meter).expect("meter stream").push(frame);
                }
            }
            Err(e) => gaps.push(GapMarker {
                timestamp_ns: t_ns,
                reason: e.to_string(),
            }),
        }
    }

    Ok(Telemetry {
        meters,
        gaps,
        timestamps_ns: timestamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{LineBranch, SourceSpec, SwitchBranch};
    use nalgebra::Matrix3;

    fn model() -> FeederModel {
        let z = Matrix3::new(
            Complex64::new(0.3, 0.7),
            Complex64::new(0.08, 0.2),
            Complex64::new(0.08, 0.2),
            Complex64::new(0.08, 0.2),
            Complex64::new(0.3, 0.7),
            Complex64::new(0.08, 0.2),
            Complex64::new(0.08, 0.2),
            Complex64::new(0.08, 0.2),
            Complex64::new(0.3, 0.7),
        );
        let mut loads = BTreeMap::new();
        loads.insert(
            "mid".to_string(),
            LoadModel::ConstantPower(CVec3::new(
                Complex64::new(60e3, 15e3),
                Complex64::new(45e3, 10e3),
                Complex64::new(70e3, 22e3),
            )),
        );
        loads.insert(
            "tail".to_string(),
            LoadModel::ConstantPower(CVec3::new(
                Complex64::new(25e3, 6e3),
                Complex64::new(30e3, 9e3),
                Complex64::new(20e3, 4e3),
            )),
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
                        to: "mid".into(),
                        z,
                    }),
                },
                Branch {
                    name: "sw".into(),
                    kind: BranchKind::Switch(SwitchBranch {
                        from: "mid".into(),
                        to: "tail".into(),
                        status: SwitchStatus::Closed,
                    }),
                },
            ],
            loads,
            meters: vec!["sub".into(), "mid".into(), "tail".into()],
        }
    }

    #[test]
    fn zero_noise_constant_loads_gives_identical_frames() {
        let out = simulate_telemetry(
            &model(),
            &LoadProfiles::constant(),
            &NoiseModel::noiseless(7),
            &EventScript::none(),
            0.5,
        )
        .unwrap();
        assert!(out.gaps.is_empty());
        for frames in out.meters.values() {
            assert_eq!(frames.len(), 60);
            for f in &frames[1..] {
                assert_eq!(f.voltage, frames[0].voltage);
                assert_eq!(f.current, frames[0].current);
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_streams_bit_for_bit() {
        let run = |seed| {
            simulate_telemetry(
                &model(),
                &LoadProfiles::constant(),
                &NoiseModel {
                    seed,
                    ..NoiseModel::default()
                },
                &EventScript::none(),
                0.25,
            )
            .unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a, b);
        let c = run(43);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_sigmas_match_the_configured_model() {
        let noise = NoiseModel {
            seed: 3,
            ..NoiseModel::default()
        };
        let out = simulate_telemetry(
            &model(),
            &LoadProfiles::constant(),
            &noise,
            &EventScript::none(),
            10_000.0 / 120.0,
        )
        .unwrap();
        let frames = &out.meters["mid"];
        assert_eq!(frames.len(), 10_000);
        let angles: Vec<f64> = frames.iter().map(|f| f.voltage.a.angle()).collect();
        let mags: Vec<f64> = frames.iter().map(|f| f.voltage.a.magnitude()).collect();
        let std = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        let ang_std = std(&angles);
        let mag_std_pu = std(&mags) / 2400.0;
        assert!(
            (ang_std - noise.angle_sigma).abs() < 0.2 * noise.angle_sigma,
            "angle sigma {ang_std} vs {}",
            noise.angle_sigma
        );
        assert!(
            (mag_std_pu - noise.magnitude_sigma_pu).abs() < 0.2 * noise.magnitude_sigma_pu,
            "magnitude sigma {mag_std_pu} vs {}",
            noise.magnitude_sigma_pu
        );
    }

    #[test]
    fn switch_toggle_step_matches_static_solutions() {
        let events = EventScript {
            events: vec![(
                0.25,
                Event::SwitchToggle {
                    branch: "sw".into(),
                },
            )],
        };
        let out = simulate_telemetry(
            &model(),
            &LoadProfiles::constant(),
            &NoiseModel::noiseless(0),
            &events,
            0.5,
        )
        .unwrap();
        // Oracle: static solves of the pre and post models.
        let pre = solve_power_flow(&model()).unwrap();
        let mut post_model = model();
        if let BranchKind::Switch(sw) = &mut post_model.branch_mut("sw").unwrap().kind {
            sw.status = SwitchStatus::Open;
        }
        let post = solve_power_flow(&post_model).unwrap();

        let frames = &out.meters["tail"];
        let k_event = 30; // 0.25 s at 120 frames/s
        let va_pre = frames[k_event - 1].voltage.a;
        let va_post = frames[k_event].voltage.a;
        assert!((va_pre.to_complex() - pre.voltage("tail").unwrap()[0]).norm() < 1e-9);
        assert!((va_post.to_complex() - post.voltage("tail").unwrap()[0]).norm() < 1e-9);
        // De-energized side reports zero voltage, energized side steps by the
        // static difference.
        assert_eq!(va_post.magnitude(), 0.0);
        let mid_pre = frames_angle(&out.meters["mid"], k_event - 1);
        let mid_post = frames_angle(&out.meters["mid"], k_event);
        let want_pre = pre.voltage("mid").unwrap()[0].arg();
        let want_post = post.voltage("mid").unwrap()[0].arg();
        assert!((mid_pre - want_pre).abs() < 1e-9);
        assert!((mid_post - want_post).abs() < 1e-9);
    }

    fn frames_angle(frames: &[Frame], k: usize) -> f64 {
        frames[k].voltage.a.angle()
    }

    #[test]
    fn bolted_fault_depresses_voltage() {
        let events = EventScript {
            events: vec![(
                0.25,
                Event::BoltedFault {
                    branch: "l1".into(),
                    distance_fraction: 0.5,
                    phases: [true, false, false],
                    shunt_ohms: DEFAULT_FAULT_SHUNT_OHMS,
                },
            )],
        };
        let out = simulate_telemetry(
            &model(),
            &LoadProfiles::constant(),
            &NoiseModel::noiseless(0),
            &events,
            0.5,
        )
        .unwrap();
        let frames = &out.meters["mid"];
        let before = frames[29].voltage.a.magnitude();
        let during = frames[30].voltage.a.magnitude();
        assert!(during < 0.2 * before, "fault barely moved: {during} vs {before}");
        // Unfaulted phase sags far less.
        let during_b = frames[30].voltage.b.magnitude();
        assert!(during_b > 0.5 * frames[29].voltage.b.magnitude());
    }

    #[test]
    fn event_script_validation_rejects_bad_scripts() {
        let m = model();
        let out_of_order = EventScript {
            events: vec![
                (0.3, Event::LoadStep { bus: "mid".into(), scale: 1.1 }),
                (0.2, Event::LoadStep { bus: "mid".into(), scale: 1.1 }),
            ],
        };
        assert!(matches!(
            out_of_order.validate(&m, 1.0),
            Err(SimError::EventScript(_))
        ));
        let not_a_switch = EventScript {
            events: vec![(0.1, Event::SwitchToggle { branch: "l1".into() })],
        };
        assert!(matches!(
            not_a_switch.validate(&m, 1.0),
            Err(SimError::EventScript(_))
        ));
        let beyond = EventScript {
            events: vec![(2.0, Event::LoadStep { bus: "mid".into(), scale: 1.0 })],
        };
        assert!(matches!(
            beyond.validate(&m, 1.0),
            Err(SimError::EventScript(_))
        ));
    }
}
