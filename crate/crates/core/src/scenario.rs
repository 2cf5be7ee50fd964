//! Scenario files and end-to-end runs: parse and validate a scenario,
//! simulate telemetry, ingest it into the store, propagate distillers, run
//! the requested diagnostics, and write a reproducible run manifest.
//!
//! Scenario files are TOML with a `schema_version` key; unknown keys are
//! rejected. Identical scenario + seed into a fresh store reproduces
//! byte-identical streams and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diag::{self, DiagError};
use crate::phasor::Frame;
use crate::pipeline::{DistillerSpec, Kernel, PipelineError, Registry};
use crate::sim::{
    simulate_telemetry, Branch, BranchKind, CMat3, CVec3, EventScript, FeederModel, LineBranch,
    LoadModel, LoadProfile, LoadProfiles, NoiseModel, SimError, SourceSpec, SwitchBranch,
    SwitchStatus, Telemetry, TransformerBranch, DEFAULT_FAULT_SHUNT_OHMS,
};
use crate::store::{PhaseLabel, Store, StoreError, StreamKey, VersionId};

pub const SCHEMA_VERSION: u32 = 1;

/// File name of the distiller registry inside a store directory.
pub const REGISTRY_FILE: &str = "distillers.json";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario validation: {0}")]
    Validation(String),
    #[error("scenario io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Diag(#[from] DiagError),
}

fn bad(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelSection,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub profiles: Vec<ProfileSection>,
    #[serde(default)]
    pub events: Vec<EventSection>,
    #[serde(default)]
    pub distillers: Vec<DistillerSection>,
    #[serde(default)]
    pub diagnostics: Vec<DiagnosticSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub s_base_va: f64,
    pub source: SourceSection,
    #[serde(default)]
    pub lines: Vec<LineSection>,
    #[serde(default)]
    pub transformers: Vec<TransformerSection>,
    #[serde(default)]
    pub switches: Vec<SwitchSection>,
    #[serde(default)]
    pub loads: Vec<LoadSection>,
    pub meters: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub bus: String,
    pub voltage_ln: f64,
    #[serde(default)]
    pub angle_deg: f64,
}

/// Line impedance: either compact self/mutual terms or explicit 3x3 parts.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub name: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub r_self: Option<f64>,
    #[serde(default)]
    pub x_self: Option<f64>,
    #[serde(default)]
    pub r_mutual: Option<f64>,
    #[serde(default)]
    pub x_mutual: Option<f64>,
    #[serde(default)]
    pub z_real: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub z_imag: Option<[[f64; 3]; 3]>,
}

impl LineSection {
    fn impedance(&self) -> Result<CMat3, ScenarioError> {
        match (self.z_real, self.z_imag, self.r_self, self.x_self) {
            (Some(re), Some(im), None, None) => {
                let mut z = CMat3::zeros();
                for r in 0..3 {
                    for c in 0..3 {
                        z[(r, c)] = Complex64::new(re[r][c], im[r][c]);
                    }
                }
                Ok(z)
            }
            (None, None, Some(rs), Some(xs)) => {
                let rm = self.r_mutual.unwrap_or(0.0);
                let xm = self.x_mutual.unwrap_or(0.0);
                let s = Complex64::new(rs, xs);
                let m = Complex64::new(rm, xm);
                Ok(CMat3::from_fn(|r, c| if r == c { s } else { m }))
            }
            _ => Err(bad(format!(
                "line {}: give either z_real+z_imag or r_self+x_self (with optional mutual terms)",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSection {
    pub name: String,
    pub from: String,
    pub to: String,
    pub n_t: f64,
    pub r: [f64; 3],
    pub x: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSection {
    pub name: String,
    pub from: String,
    pub to: String,
    pub status: SwitchStatus,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    pub bus: String,
    pub kind: LoadKind,
    #[serde(default)]
    pub p_w: Option<[f64; 3]>,
    #[serde(default)]
    pub q_var: Option<[f64; 3]>,
    #[serde(default)]
    pub i_mag_a: Option<[f64; 3]>,
    #[serde(default)]
    pub i_ang_deg: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    ConstantPower,
    ConstantCurrent,
}

impl LoadSection {
    fn load(&self) -> Result<LoadModel, ScenarioError> {
        match self.kind {
            LoadKind::ConstantPower => {
                let p = self
                    .p_w
                    .ok_or_else(|| bad(format!("load at {}: p_w required", self.bus)))?;
                let q = self.q_var.unwrap_or([0.0; 3]);
                Ok(LoadModel::ConstantPower(CVec3::new(
                    Complex64::new(p[0], q[0]),
                    Complex64::new(p[1], q[1]),
                    Complex64::new(p[2], q[2]),
                )))
            }
            LoadKind::ConstantCurrent => {
                let m = self
                    .i_mag_a
                    .ok_or_else(|| bad(format!("load at {}: i_mag_a required", self.bus)))?;
                let a = self.i_ang_deg.unwrap_or([0.0; 3]);
                Ok(LoadModel::ConstantCurrent(CVec3::new(
                    Complex64::from_polar(m[0], a[0].to_radians()),
                    Complex64::from_polar(m[1], a[1].to_radians()),
                    Complex64::from_polar(m[2], a[2].to_radians()),
                )))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_angle_sigma_deg")]
    pub angle_sigma_deg: f64,
    #[serde(default = "default_magnitude_sigma_pu")]
    pub magnitude_sigma_pu: f64,
}

fn default_angle_sigma_deg() -> f64 {
    0.01
}

fn default_magnitude_sigma_pu() -> f64 {
    1.7e-4
}

/// `points` rows are `[t_seconds, scale_a, scale_b, scale_c]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub bus: String,
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub t: f64,
    pub kind: EventKind,
    #[serde(default)]
    pub branch: Option<String>,
    #[serde(default)]
    pub bus: Option<String>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub distance_fraction: Option<f64>,
    #[serde(default)]
    pub phases: Option<Vec<String>>,
    #[serde(default)]
    pub shunt_ohms: Option<f64>,
    #[serde(default)]
    pub depth: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub frequency_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SwitchToggle,
    LoadStep,
    BoltedFault,
    Sag,
    Oscillation,
}

impl EventSection {
    fn event(&self) -> Result<crate::sim::Event, ScenarioError> {
        use crate::sim::Event;
        let need = |o: &Option<String>, what: &str| {
            o.clone()
                .ok_or_else(|| bad(format!("event at t={}: {what} required", self.t)))
        };
        Ok(match self.kind {
            EventKind::SwitchToggle => Event::SwitchToggle {
                branch: need(&self.branch, "branch")?,
            },
            EventKind::LoadStep => Event::LoadStep {
                bus: need(&self.bus, "bus")?,
                scale: self
                    .scale
                    .ok_or_else(|| bad(format!("event at t={}: scale required", self.t)))?,
            },
            EventKind::BoltedFault => {
                let mut phases = [false; 3];
                for p in self
                    .phases
                    .clone()
                    .ok_or_else(|| bad(format!("event at t={}: phases required", self.t)))?
                {
                    match p.as_str() {
                        "a" => phases[0] = true,
                        "b" => phases[1] = true,
                        "c" => phases[2] = true,
                        other => return Err(bad(format!("unknown phase {other:?}"))),
                    }
                }
                Event::BoltedFault {
                    branch: need(&self.branch, "branch")?,
                    distance_fraction: self.distance_fraction.ok_or_else(|| {
                        bad(format!("event at t={}: distance_fraction required", self.t))
                    })?,
                    phases,
                    shunt_ohms: self.shunt_ohms.unwrap_or(DEFAULT_FAULT_SHUNT_OHMS),
                }
            }
            EventKind::Sag => Event::Sag {
                depth: self
                    .depth
                    .ok_or_else(|| bad(format!("event at t={}: depth required", self.t)))?,
                duration: self
                    .duration
                    .ok_or_else(|| bad(format!("event at t={}: duration required", self.t)))?,
            },
            EventKind::Oscillation => Event::Oscillation {
                amplitude: self
                    .amplitude
                    .ok_or_else(|| bad(format!("event at t={}: amplitude required", self.t)))?,
                frequency_hz: self
                    .frequency_hz
                    .ok_or_else(|| bad(format!("event at t={}: frequency_hz required", self.t)))?,
            },
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillerSection {
    pub name: String,
    pub kernel: KernelKind,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default)]
    pub window_ms: Option<f64>,
    #[serde(default = "one")]
    pub kernel_version: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Identity,
    AngleDiff,
    MagnitudeCorrelation,
    RealPower,
    FreqDeviation,
}

impl DistillerSection {
    fn spec(&self) -> Result<DistillerSpec, ScenarioError> {
        let window_ns = self.window_ms.map(|ms| (ms * 1e6) as i64);
        let kernel = match self.kernel {
            KernelKind::Identity => Kernel::Identity,
            KernelKind::AngleDiff => Kernel::AngleDiff,
            KernelKind::RealPower => Kernel::RealPower,
            KernelKind::MagnitudeCorrelation => Kernel::MagnitudeCorrelation {
                window_ns: window_ns
                    .ok_or_else(|| bad(format!("distiller {}: window_ms required", self.name)))?,
            },
            KernelKind::FreqDeviation => Kernel::FreqDeviation {
                window_ns: window_ns
                    .ok_or_else(|| bad(format!("distiller {}: window_ms required", self.name)))?,
            },
        };
        let inputs = self
            .inputs
            .iter()
            .map(|s| s.parse::<StreamKey>())
            .collect::<Result<Vec<_>, _>>()?;
        let output = self.output.parse::<StreamKey>()?;
        let mut spec = DistillerSpec::new(self.name.clone(), inputs, output, kernel);
        spec.kernel_version = self.kernel_version;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticSection {
    pub kind: DiagnosticKind,
    /// Analysis window (seconds); defaults to the whole horizon.
    #[serde(default)]
    pub window_s: Option<[f64; 2]>,
    #[serde(default)]
    pub reference_meter: Option<String>,
    #[serde(default)]
    pub candidate_meter: Option<String>,
    #[serde(default)]
    pub branch: Option<String>,
    #[serde(default)]
    pub from_meter: Option<String>,
    #[serde(default)]
    pub to_meter: Option<String>,
    #[serde(default)]
    pub meter: Option<String>,
    #[serde(default)]
    pub meters: Option<Vec<String>>,
    #[serde(default)]
    pub substation: Option<String>,
    #[serde(default)]
    pub stream: Option<String>,
    #[serde(default)]
    pub train_window_s: Option<[f64; 2]>,
    #[serde(default)]
    pub test_window_s: Option<[f64; 2]>,
    #[serde(default)]
    pub prefault_window_s: Option<[f64; 2]>,
    #[serde(default)]
    pub during_window_s: Option<[f64; 2]>,
    #[serde(default)]
    pub at_s: Option<f64>,
    #[serde(default)]
    pub hypotheses: Option<Vec<HypothesisSection>>,
    #[serde(default)]
    pub use_case: Option<String>,
    #[serde(default)]
    pub tve: Option<f64>,
    #[serde(default)]
    pub latency_s: Option<f64>,
    #[serde(default)]
    pub report_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSection {
    pub id: String,
    pub switches: BTreeMap<String, SwitchStatus>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    PhaseId,
    Topology,
    SwitchTransition,
    Impedance,
    StateEstimation,
    EventsKpca,
    FaultLocation,
    ReverseFlow,
    CheckRequirements,
}

// ---------------------------------------------------------------------------
// Parsing and model construction
// ---------------------------------------------------------------------------

impl Scenario {
    pub fn from_path(path: &Path) -> Result<(Scenario, String), ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let scenario = Scenario::from_str(&text)?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok((scenario, hash))
    }

    pub fn from_str(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| bad(format!("parse: {e}")))?;
        if scenario.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                scenario.schema_version
            )));
        }
        if !(scenario.duration_s.is_finite() && scenario.duration_s > 0.0) {
            return Err(bad("duration_s must be positive"));
        }
        scenario.build_model()?; // full validation before any execution
        let model = scenario.build_model()?;
        scenario.build_events()?.validate(&model, scenario.duration_s)?;
        Ok(scenario)
    }

    pub fn build_model(&self) -> Result<FeederModel, ScenarioError> {
        let m = &self.model;
        let mut branches = Vec::new();
        for l in &m.lines {
            branches.push(Branch {
                name: l.name.clone(),
                kind: BranchKind::Line(LineBranch {
                    from: l.from.clone(),
                    to: l.to.clone(),
                    z: l.impedance()?,
                }),
            });
        }
        for t in &m.transformers {
            branches.push(Branch {
                name: t.name.clone(),
                kind: BranchKind::Transformer(TransformerBranch {
                    from: t.from.clone(),
                    to: t.to.clone(),
                    n_t: t.n_t,
                    z_abc: CVec3::new(
                        Complex64::new(t.r[0], t.x[0]),
                        Complex64::new(t.r[1], t.x[1]),
                        Complex64::new(t.r[2], t.x[2]),
                    ),
                }),
            });
        }
        for s in &m.switches {
            branches.push(Branch {
                name: s.name.clone(),
                kind: BranchKind::Switch(SwitchBranch {
                    from: s.from.clone(),
                    to: s.to.clone(),
                    status: s.status,
                }),
            });
        }
        let mut loads = BTreeMap::new();
        for l in &m.loads {
            if loads.insert(l.bus.clone(), l.load()?).is_some() {
                return Err(bad(format!("duplicate load at bus {}", l.bus)));
            }
        }
        let model = FeederModel {
            s_base: m.s_base_va,
            source: SourceSpec {
                bus: m.source.bus.clone(),
                voltage_ln: m.source.voltage_ln,
                angle_rad: m.source.angle_deg.to_radians(),
            },
            branches,
            loads,
            meters: m.meters.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn build_noise(&self, seed: u64) -> NoiseModel {
        match &self.noise {
            Some(n) => NoiseModel {
                angle_sigma: n.angle_sigma_deg.to_radians(),
                magnitude_sigma_pu: n.magnitude_sigma_pu,
                seed,
            },
            None => NoiseModel { seed, ..NoiseModel::default() },
        }
    }

    pub fn build_profiles(&self) -> LoadProfiles {
        let mut map = BTreeMap::new();
        for p in &self.profiles {
            let knots = p
                .points
                .iter()
                .map(|row| (row[0], [row[1], row[2], row[3]]))
                .collect();
            map.insert(p.bus.clone(), LoadProfile::Piecewise(knots));
        }
        LoadProfiles(map)
    }

    pub fn build_events(&self) -> Result<EventScript, ScenarioError> {
        let events = self
            .events
            .iter()
            .map(|e| e.event().map(|ev| (e.t, ev)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EventScript { events })
    }
}

// ---------------------------------------------------------------------------
// Store ingestion and frame reconstruction
// ---------------------------------------------------------------------------

/// Insert one meter's frames as 12 scalar channels; returns the new versions.
pub fn ingest_frames(
    store: &Store,
    meter: &str,
    frames: &[Frame],
) -> Result<Vec<(StreamKey, VersionId)>, StoreError> {
    let mut out = Vec::with_capacity(12);
    for phase in PhaseLabel::ALL {
        let p = phase.index();
        let chans: [(StreamKey, Box<dyn Fn(&Frame) -> f64>); 4] = [
            (
                StreamKey::v_mag(meter, phase),
                Box::new(move |f: &Frame| f.voltage.phase(p).magnitude()),
            ),
            (
                StreamKey::v_ang(meter, phase),
                Box::new(move |f: &Frame| f.voltage.phase(p).angle()),
            ),
            (
                StreamKey::i_mag(meter, phase),
                Box::new(move |f: &Frame| f.current.phase(p).magnitude()),
            ),
            (
                StreamKey::i_ang(meter, phase),
                Box::new(move |f: &Frame| f.current.phase(p).angle()),
            ),
        ];
        for (key, get) in chans {
            let points: Vec<(i64, f64)> =
                frames.iter().map(|f| (f.timestamp_ns, get(f))).collect();
            let v = store.insert(&key, &points)?;
            out.push((key, v));
        }
    }
    Ok(out)
}

/// Rebuild frames for a meter from its stored channels over `[t0, t1)` at
/// the latest version. Instants missing from any channel are skipped.
pub fn frames_from_store(
    store: &Store,
    meter: &str,
    t0: i64,
    t1: i64,
) -> Result<Vec<Frame>, StoreError> {
    let mut series: Vec<Vec<(i64, f64)>> = Vec::with_capacity(12);
    for phase in PhaseLabel::ALL {
        for key in [
            StreamKey::v_mag(meter, phase),
            StreamKey::v_ang(meter, phase),
            StreamKey::i_mag(meter, phase),
            StreamKey::i_ang(meter, phase),
        ] {
            let v = store.latest_version(&key)?;
            series.push(store.query_raw(&key, t0, t1, v)?);
        }
    }
    let mut idx = vec![0usize; 12];
    let mut frames = Vec::new();
    'outer: loop {
        // find the next timestamp present in all channels
        let mut t = i64::MIN;
        for (s, i) in series.iter().zip(&idx) {
            match s.get(*i) {
                Some(&(ts, _)) => t = t.max(ts),
                None => break 'outer,
            }
        }
        let mut vals = [0.0f64; 12];
        let mut aligned = true;
        for c in 0..12 {
            while idx[c] < series[c].len() && series[c][idx[c]].0 < t {
                idx[c] += 1;
            }
            match series[c].get(idx[c]) {
                Some(&(ts, v)) if ts == t => vals[c] = v,
                Some(_) => aligned = false,
                None => break 'outer,
            }
        }
        if aligned {
            let ph = |mag: f64, ang: f64| {
                crate::phasor::Phasor::new(mag.max(0.0), ang).expect("stored phasor")
            };
            frames.push(Frame {
                timestamp_ns: t,
                meter_id: meter.to_string(),
                voltage: crate::phasor::ThreePhaseSet::new(
                    ph(vals[0], vals[1]),
                    ph(vals[4], vals[5]),
                    ph(vals[8], vals[9]),
                ),
                current: crate::phasor::ThreePhaseSet::new(
                    ph(vals[2], vals[3]),
                    ph(vals[6], vals[7]),
                    ph(vals[10], vals[11]),
                ),
            });
            for i in idx.iter_mut() {
                *i += 1;
            }
        }
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Run manifest and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub duration_s: f64,
    pub streams: Vec<(String, u64)>,
    pub distillers: Vec<(String, u64)>,
    pub reports: Vec<String>,
    pub gap_count: usize,
    /// Stages that failed, with the error text; empty on a clean run.
    pub failures: Vec<(String, String)>,
}

/// One diagnostic's outputs: a machine-readable JSON value, a human text
/// block, and optional plot rows (CSV-ready).
pub struct DiagnosticOutput {
    pub name: String,
    pub json: serde_json::Value,
    pub text: String,
    pub plot: Option<(String, Vec<String>)>,
}

fn seconds_to_ns(s: f64) -> i64 {
    (s * 1e9).round() as i64
}

fn run_diagnostic(
    section: &DiagnosticSection,
    idx: usize,
    scenario: &Scenario,
    model: &FeederModel,
    store: &Store,
    horizon_ns: i64,
) -> Result<DiagnosticOutput, ScenarioError> {
    let full = |w: Option<[f64; 2]>| -> (i64, i64) {
        match w {
            Some([a, b]) => (seconds_to_ns(a), seconds_to_ns(b)),
            None => (0, horizon_ns),
        }
    };
    let need = |o: &Option<String>, what: &str| -> Result<String, ScenarioError> {
        o.clone()
            .ok_or_else(|| bad(format!("diagnostic #{idx}: {what} required")))
    };
    let name = format!("{:02}_{}", idx, kind_slug(section.kind));
    match section.kind {
        DiagnosticKind::PhaseId => {
            let reference = need(&section.reference_meter, "reference_meter")?;
            let candidate = need(&section.candidate_meter, "candidate_meter")?;
            let (t0, t1) = full(section.window_s);
            let rf = frames_from_store(store, &reference, t0, t1)?;
            let cf = frames_from_store(store, &candidate, t0, t1)?;
            let a = diag::identify_phase(
                &candidate,
                &diag::ThreePhaseSeries::from_frames(&rf),
                &diag::ThreePhaseSeries::from_frames(&cf),
                &diag::PhaseIdOptions::default(),
            )?;
            let text = format!(
                "phase identification for {candidate} against {reference}\n\
                 mapping (local -> reference): a->{}, b->{}, c->{}\n\
                 offset: {} deg\nscore: {:.6}\n",
                ["a", "b", "c"][a.mapping[0]],
                ["a", "b", "c"][a.mapping[1]],
                ["a", "b", "c"][a.mapping[2]],
                a.offset_deg,
                a.score
            );
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "phase_id",
                    "meter": a.meter_id,
                    "mapping": a.mapping,
                    "offset_deg": a.offset_deg,
                    "score": a.score,
                }),
                text,
                plot: None,
            })
        }
        DiagnosticKind::Topology => {
            let hyps = section
                .hypotheses
                .clone()
                .ok_or_else(|| bad(format!("diagnostic #{idx}: hypotheses required")))?;
            let hypotheses: Vec<diag::TopologyHypothesis> = hyps
                .into_iter()
                .map(|h| diag::TopologyHypothesis {
                    id: h.id,
                    switch_status: h.switches,
                })
                .collect();
            let (t0, t1) = full(section.window_s);
            let mut frames = BTreeMap::new();
            for meter in &model.meters {
                frames.insert(meter.clone(), frames_from_store(store, meter, t0, t1)?);
            }
            let pseudo: BTreeMap<String, CVec3> = model
                .loads
                .iter()
                .map(|(b, l)| {
                    let s = match l {
                        LoadModel::ConstantPower(s) => *s,
                        _ => CVec3::zeros(),
                    };
                    (b.clone(), s)
                })
                .collect();
            let outcome = diag::detect_topology_voting(
                model,
                &hypotheses,
                &frames,
                &pseudo,
                &diag::VotingOptions::default(),
            )?;
            let mut text = format!("topology voting: winner {}\n", outcome.winner);
            for (id, share) in &outcome.shares {
                let _ = writeln!(text, "  {id}: {:.1}% of votes", share * 100.0);
            }
            for (id, why) in &outcome.disqualified {
                let _ = writeln!(text, "  {id}: disqualified ({why})");
            }
            let plot_rows = outcome
                .shares
                .iter()
                .map(|(id, share)| format!("{id},{share}"))
                .collect();
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "topology",
                    "winner": outcome.winner,
                    "shares": outcome.shares,
                    "votes": outcome.votes,
                    "disqualified": outcome.disqualified,
                }),
                text,
                plot: Some(("hypothesis,vote_share".into(), plot_rows)),
            })
        }
        DiagnosticKind::SwitchTransition => {
            let stream: StreamKey = need(&section.stream, "stream")?.parse()?;
            let (t0, t1) = full(section.window_s);
            let v = store.latest_version(&stream)?;
            let series = store.query_raw(&stream, t0, t1, v)?;
            let cps = diag::detect_switch_transition(&series, &diag::CusumParams::default())?;
            let text = format!(
                "switch transitions on {stream}: {} change point(s)\n{}",
                cps.len(),
                cps.iter()
                    .map(|t| format!("  at {t} ns\n"))
                    .collect::<String>()
            );
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "switch_transition",
                    "stream": stream.canon(),
                    "change_points_ns": cps,
                }),
                text,
                plot: Some((
                    "change_point_ns".into(),
                    cps.iter().map(|t| t.to_string()).collect(),
                )),
            })
        }
        DiagnosticKind::Impedance => {
            let branch = need(&section.branch, "branch")?;
            let from_meter = need(&section.from_meter, "from_meter")?;
            let to_meter = need(&section.to_meter, "to_meter")?;
            let (t0, t1) = full(section.window_s);
            let f1 = frames_from_store(store, &from_meter, t0, t1)?;
            let f2 = frames_from_store(store, &to_meter, t0, t1)?;
            let (est, truth_kind) = match &model.branch(&branch)?.kind {
                BranchKind::Line(l) => (
                    diag::estimate_line_impedance(
                        &f1,
                        &f2,
                        &diag::ImpedanceOptions {
                            branch: branch.clone(),
                            truth: Some(l.z),
                            ..Default::default()
                        },
                    )?,
                    "line",
                ),
                BranchKind::Transformer(t) => {
                    let truth = CMat3::from_diagonal(&t.z_abc);
                    (
                        diag::estimate_transformer_impedance(
                            &f1,
                            &f2,
                            t.n_t,
                            &diag::ImpedanceOptions {
                                branch: branch.clone(),
                                truth: Some(truth),
                                ..Default::default()
                            },
                        )?,
                        "transformer",
                    )
                }
                BranchKind::Switch(_) => {
                    return Err(bad(format!("branch {branch} is a switch")))
                }
            };
            let mut text = format!(
                "impedance estimate for {truth_kind} {branch}\ncondition metric: {:.3e}\n",
                est.condition_metric
            );
            if let Some(e) = est.relative_error_norm {
                let _ = writeln!(text, "relative error vs model: {:.3e}", e);
            }
            for r in 0..3 {
                let _ = writeln!(
                    text,
                    "  [{:+.4}{:+.4}j  {:+.4}{:+.4}j  {:+.4}{:+.4}j]",
                    est.z_hat[(r, 0)].re,
                    est.z_hat[(r, 0)].im,
                    est.z_hat[(r, 1)].re,
                    est.z_hat[(r, 1)].im,
                    est.z_hat[(r, 2)].re,
                    est.z_hat[(r, 2)].im,
                );
            }
            let z: Vec<Vec<[f64; 2]>> = (0..3)
                .map(|r| (0..3).map(|c| [est.z_hat[(r, c)].re, est.z_hat[(r, c)].im]).collect())
                .collect();
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "impedance",
                    "branch": est.branch,
                    "z_ohms_re_im": z,
                    "condition_metric": est.condition_metric,
                    "relative_error_norm": est.relative_error_norm,
                }),
                text,
                plot: None,
            })
        }
        DiagnosticKind::StateEstimation => {
            let meters = section
                .meters
                .clone()
                .ok_or_else(|| bad(format!("diagnostic #{idx}: meters required")))?;
            let at = seconds_to_ns(section.at_s.unwrap_or(0.0));
            let mut meas = Vec::new();
            for m in &meters {
                let frames = frames_from_store(store, m, at, horizon_ns)?;
                let f = frames
                    .first()
                    .ok_or_else(|| bad(format!("no frames for meter {m} at {at} ns")))?;
                meas.push(diag::VoltageMeasurement {
                    bus: m.clone(),
                    phasors: f.voltage,
                });
            }
            let pseudo: Vec<diag::InjectionPseudo> = model
                .loads
                .iter()
                .filter_map(|(b, l)| match l {
                    LoadModel::ConstantPower(s) => Some(diag::InjectionPseudo {
                        bus: b.clone(),
                        s_va: -s,
                        sigma_va: 0.05 * model.s_base / 3.0,
                    }),
                    _ => None,
                })
                .collect();
            let noise = diag::MeasurementNoise::default();
            let lin = diag::linear_state_estimate(
                model,
                &meas,
                &pseudo,
                &noise,
                &diag::SePriors::default(),
            )?;
            let wls = diag::wls_state_estimate(model, &meas, &pseudo, &noise);
            let mut text = String::from("linear state estimate (volts, degrees):\n");
            let mut rows = Vec::new();
            for (bus, v) in lin.buses.iter().zip(&lin.voltages) {
                let _ = writeln!(
                    text,
                    "  {bus}: a {:.1} V {:+.3} deg, b {:.1} V {:+.3} deg, c {:.1} V {:+.3} deg",
                    v.a.magnitude(),
                    v.a.angle().to_degrees(),
                    v.b.magnitude(),
                    v.b.angle().to_degrees(),
                    v.c.magnitude(),
                    v.c.angle().to_degrees(),
                );
                rows.push(format!(
                    "{bus},{},{},{},{},{},{}",
                    v.a.magnitude(),
                    v.a.angle(),
                    v.b.magnitude(),
                    v.b.angle(),
                    v.c.magnitude(),
                    v.c.angle()
                ));
            }
            let wls_json = match &wls {
                Ok(w) => serde_json::json!({
                    "buses": w.buses,
                    "voltages": w.voltages,
                }),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            };
            if let Err(e) = &wls {
                let _ = writeln!(text, "wls baseline unavailable: {e}");
            }
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "state_estimation",
                    "linear": { "buses": lin.buses, "voltages": lin.voltages, "sigma_pu": lin.sigma_pu },
                    "wls": wls_json,
                }),
                text,
                plot: Some((
                    "bus,va_mag,va_ang,vb_mag,vb_ang,vc_mag,vc_ang".into(),
                    rows,
                )),
            })
        }
        DiagnosticKind::EventsKpca => {
            let meter = need(&section.meter, "meter")?;
            let substation = need(&section.substation, "substation")?;
            let (tr0, tr1) = full(section.train_window_s);
            let (te0, te1) = full(section.test_window_s);
            let mf_train = frames_from_store(store, &meter, tr0, tr1)?;
            let sf_train = frames_from_store(store, &substation, tr0, tr1)?;
            let mf_test = frames_from_store(store, &meter, te0, te1)?;
            let sf_test = frames_from_store(store, &substation, te0, te1)?;
            let train = diag::build_feature_windows(&mf_train, &sf_train, 10);
            let test = diag::build_feature_windows(&mf_test, &sf_test, 10);
            let flags = diag::detect_events_kpca(&train, &test, &diag::KpcaOptions::default())?;
            let n_anom = flags.iter().filter(|f| f.is_anomaly).count();
            let text = format!(
                "kpca event detection on {meter}: {n_anom} of {} windows flagged\n",
                flags.len()
            );
            let rows = flags
                .iter()
                .map(|f| format!("{},{},{},{}", f.start_ns, f.end_ns, f.score, f.is_anomaly))
                .collect();
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "events_kpca",
                    "meter": meter,
                    "windows": flags.len(),
                    "flagged": n_anom,
                    "flags": flags.iter().map(|f| serde_json::json!({
                        "start_ns": f.start_ns,
                        "end_ns": f.end_ns,
                        "score": f.score,
                        "is_anomaly": f.is_anomaly,
                    })).collect::<Vec<_>>(),
                }),
                text,
                plot: Some(("window_start_ns,window_end_ns,score,is_anomaly".into(), rows)),
            })
        }
        DiagnosticKind::FaultLocation => {
            let substation = need(&section.substation, "substation")?;
            let (p0, p1) = full(section.prefault_window_s);
            let (d0, d1) = full(section.during_window_s);
            let mut pre = BTreeMap::new();
            let mut during = BTreeMap::new();
            for meter in &model.meters {
                let pf = frames_from_store(store, meter, p0, p1)?;
                let df = frames_from_store(store, meter, d0, d1)?;
                if let Some(f) = diag::average_frames(&pf) {
                    pre.insert(meter.clone(), f);
                }
                if let Some(f) = diag::average_frames(&df) {
                    during.insert(meter.clone(), f);
                }
            }
            let loc = diag::locate_fault(
                model,
                &pre,
                &during,
                &substation,
                &diag::FaultLocateOptions::default(),
            )?;
            let text = format!(
                "fault located on branch {} at {:.1}% of its length (mismatch {:.3e})\n",
                loc.branch,
                loc.distance_fraction * 100.0,
                loc.mismatch
            );
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "fault_location",
                    "branch": loc.branch,
                    "distance_fraction": loc.distance_fraction,
                    "mismatch": loc.mismatch,
                }),
                text,
                plot: None,
            })
        }
        DiagnosticKind::ReverseFlow => {
            let meter = need(&section.meter, "meter")?;
            let (t0, t1) = full(section.window_s);
            let frames = frames_from_store(store, &meter, t0, t1)?;
            let flags = diag::detect_reverse_flow(
                &frames,
                model.s_base / 3.0,
                diag::DEFAULT_REVERSE_DEADBAND_PU,
            );
            let reversed: usize = flags
                .iter()
                .filter(|f| f.iter().any(|p| *p))
                .count();
            let text = format!(
                "reverse flow at {meter}: {reversed} of {} frames show reverse power on some phase\n",
                flags.len()
            );
            let rows = frames
                .iter()
                .zip(&flags)
                .map(|(f, fl)| format!("{},{},{},{}", f.timestamp_ns, fl[0], fl[1], fl[2]))
                .collect();
            Ok(DiagnosticOutput {
                name,
                json: serde_json::json!({
                    "kind": "reverse_flow",
                    "meter": meter,
                    "frames": flags.len(),
                    "reversed_frames": reversed,
                }),
                text,
                plot: Some(("timestamp_ns,rev_a,rev_b,rev_c".into(), rows)),
            })
        }
        DiagnosticKind::CheckRequirements => {
            let use_case: diag::UseCase = need(&section.use_case, "use_case")?.parse()?;
            let noise = scenario.build_noise(0);
            // achieved TVE implied by the instrument noise unless declared
            let tve = section.tve.unwrap_or_else(|| {
                (noise.magnitude_sigma_pu.powi(2) + noise.angle_sigma.powi(2)).sqrt()
            });
            let stats = diag::AchievedStats {
                tve,
                latency_s: section.latency_s.unwrap_or(1.0),
                report_rate_hz: section.report_rate_hz.unwrap_or(120.0),
            };
            let report = diag::check_requirements(&stats, use_case);
            let mut text = format!(
                "requirement check for {}: {}\n",
                report.use_case,
                if report.pass { "PASS" } else { "FAIL" }
            );
            for c in &report.criteria {
                let _ = writeln!(
                    text,
                    "  {}: achieved {:.6} vs limit {:.6} -> {} (margin {:+.6})",
                    c.name,
                    c.achieved,
                    c.limit,
                    if c.pass { "pass" } else { "fail" },
                    c.margin
                );
            }
            Ok(DiagnosticOutput {
                name,
                json: serde_json::to_value(&report).expect("serializable report"),
                text,
                plot: None,
            })
        }
    }
}

fn kind_slug(kind: DiagnosticKind) -> &'static str {
    match kind {
        DiagnosticKind::PhaseId => "phase_id",
        DiagnosticKind::Topology => "topology",
        DiagnosticKind::SwitchTransition => "switch_transition",
        DiagnosticKind::Impedance => "impedance",
        DiagnosticKind::StateEstimation => "state_estimation",
        DiagnosticKind::EventsKpca => "events_kpca",
        DiagnosticKind::FaultLocation => "fault_location",
        DiagnosticKind::ReverseFlow => "reverse_flow",
        DiagnosticKind::CheckRequirements => "check_requirements",
    }
}

/// Run a scenario end to end: simulate, ingest, distill, diagnose, report.
pub fn run_scenario(
    scenario: &Scenario,
    scenario_hash: &str,
    store: &Store,
    store_dir: Option<&Path>,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<RunManifest, ScenarioError> {
    let seed = seed_override.or(scenario.seed).unwrap_or(0);
    let model = scenario.build_model()?;
    let noise = scenario.build_noise(seed);
    let profiles = scenario.build_profiles();
    let events = scenario.build_events()?;

    let telemetry: Telemetry =
        simulate_telemetry(&model, &profiles, &noise, &events, scenario.duration_s)?;

    std::fs::create_dir_all(out_dir)?;
    let reports_dir = out_dir.join("reports");
    std::fs::create_dir_all(&reports_dir)?;

    let mut streams = Vec::new();
    for (meter, frames) in &telemetry.meters {
        for (key, version) in ingest_frames(store, meter, frames)? {
            streams.push((key.canon(), version.0));
        }
    }
    streams.sort();

    // distillers
    let mut registry = match store_dir {
        Some(dir) if dir.join(REGISTRY_FILE).exists() => {
            Registry::load(&dir.join(REGISTRY_FILE))?
        }
        _ => Registry::new(),
    };
    for d in &scenario.distillers {
        registry.register(d.spec()?)?;
    }
    let materializations = registry.propagate(store)?;
    if let Some(dir) = store_dir {
        registry.save(&dir.join(REGISTRY_FILE))?;
    }
    let distillers: Vec<(String, u64)> = materializations
        .iter()
        .map(|m| (m.distiller.clone(), m.output_version))
        .collect();

    // diagnostics; failures are recorded, not fatal
    let horizon_ns = seconds_to_ns(scenario.duration_s);
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (idx, section) in scenario.diagnostics.iter().enumerate() {
        match run_diagnostic(section, idx, scenario, &model, store, horizon_ns) {
            Ok(output) => {
                let json_path = reports_dir.join(format!("{}.json", output.name));
                std::fs::write(&json_path, serde_json::to_vec_pretty(&output.json).unwrap())?;
                let txt_path = reports_dir.join(format!("{}.txt", output.name));
                std::fs::write(&txt_path, output.text)?;
                reports.push(json_path.display().to_string());
                reports.push(txt_path.display().to_string());
                if let Some((header, rows)) = output.plot {
                    let csv_path = reports_dir.join(format!("{}.csv", output.name));
                    let mut body = String::with_capacity(header.len() + rows.len() * 16);
                    body.push_str(&header);
                    body.push('\n');
                    for r in rows {
                        body.push_str(&r);
                        body.push('\n');
                    }
                    std::fs::write(&csv_path, body)?;
                    reports.push(csv_path.display().to_string());
                }
            }
            Err(e) => failures.push((format!("diagnostic #{idx}"), e.to_string())),
        }
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_name: scenario.name.clone(),
        scenario_hash: scenario_hash.to_string(),
        seed,
        duration_s: scenario.duration_s,
        streams,
        distillers,
        reports,
        gap_count: telemetry.gaps.len(),
        failures,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).expect("serializable manifest"),
    )?;
    Ok(manifest)
}

/// Serialize a run manifest to pretty JSON (the same form written to
/// `manifest.json`).
pub fn manifest_to_json(manifest: &RunManifest) -> String {
    serde_json::to_string_pretty(manifest).expect("serializable manifest")
}

/// Export a stream as plot-ready CSV: windowed statistics at the requested
/// pointwidth, or the raw points when `pointwidth` is `None` (count 1 rows
/// with min = max = mean = value).
pub fn export_plot(
    store: &Store,
    key: &StreamKey,
    t0: i64,
    t1: i64,
    pointwidth: Option<u8>,
    version: Option<VersionId>,
) -> Result<String, StoreError> {
    let version = match version {
        Some(v) => v,
        None => store.latest_version(key)?,
    };
    let mut out = String::from("window_start_ns,min,max,mean,count\n");
    match pointwidth {
        Some(pw) => {
            for sp in store.query_windows(key, t0, t1, pw, version)? {
                let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    sp.window_start,
                    f(sp.min),
                    f(sp.max),
                    f(sp.mean),
                    sp.count
                );
            }
        }
        None => {
            for (t, v) in store.query_raw(key, t0, t1, version)? {
                let _ = writeln!(out, "{t},{v},{v},{v},1");
            }
        }
    }
    Ok(out)
}
