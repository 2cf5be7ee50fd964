//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured figure (run with `-- --nocapture` to see them).
//!
//! Every tolerance is pinned here as a constant; the simulation scenarios
//! provide the ground truth the checks compare against.

use std::collections::BTreeMap;
use std::time::Instant;

use gridphasor_core::diag::{self, KpcaKernel, KpcaOptions};
use gridphasor_core::phasor::{tve, Frame, Phasor};
use gridphasor_core::pipeline::{DistillerSpec, Kernel, Registry};
use gridphasor_core::sim::{
    simulate_telemetry, Branch, BranchKind, CMat3, CVec3, Event, EventScript, FeederModel,
    LineBranch, LoadModel, LoadProfile, LoadProfiles, NoiseModel, SourceSpec, SwitchBranch,
    SwitchStatus, TransformerBranch, DEFAULT_FAULT_SHUNT_OHMS,
};
use gridphasor_core::store::{PhaseLabel, Store, StreamKey, VersionId};
use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// criterion 1
const NOISELESS_LINES: usize = 20;
const NOISELESS_TRANSFORMERS: usize = 10;
const NOISELESS_REL_ERR: f64 = 1e-6;
const NOISELESS_BUDGET_S: f64 = 10.0;
// criterion 2
const NOISY_TRIALS: usize = 100;
const NOISY_SAMPLES: usize = 600;
const LINE_REL_ERR: f64 = 0.13;
const XFMR_REL_ERR: f64 = 0.15;
const NOISY_SUCCESS_RATE: f64 = 0.90;
const NOISY_BUDGET_S: f64 = 60.0;
// criterion 3
const EXCITATION_CASES: usize = 50;
// criterion 4
const PHASE_ID_TRIALS: usize = 50;
const PHASE_ID_BUDGET_S: f64 = 30.0;
// criterion 5
const VOTING_TRIALS: usize = 100;
const VOTING_SHARE: f64 = 0.95;
const VOTING_TRIAL_RATE: f64 = 0.95;
const VOTING_SAMPLES: usize = 60;
// criterion 6
const SE_DRAWS: usize = 200;
const SE_PARITY_FACTOR: f64 = 1.2;
// criteria 7 and 8
const STORE_POINTS: usize = 100_000;
const STORE_VERSIONS: usize = 50;
const STORE_BUDGET_S: f64 = 60.0;
const PIPELINE_BUDGET_S: f64 = 60.0;
// criterion 9
const KPCA_PRECISION: f64 = 0.9;
const KPCA_RECALL: f64 = 0.9;
const KPCA_PCA_MATCH: f64 = 1e-8;
// criterion 10
const FAULT_TRIALS: usize = 30;
const FAULT_BRANCH_RATE: f64 = 0.90;
const FAULT_DISTANCE_ERR: f64 = 0.05;
// criterion 12
const TVE_IDENTITY_ABS: f64 = 1e-4;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn paper_noise(seed: u64) -> NoiseModel {
    NoiseModel {
        angle_sigma: 0.01f64.to_radians(),
        magnitude_sigma_pu: 1.7e-4,
        seed,
    }
}

/// Symmetric, diagonally dominant random line impedance.
fn random_line_z(rng: &mut ChaCha8Rng) -> CMat3 {
    let mut z = Matrix3::zeros();
    for p in 0..3 {
        let r = rng.random_range(0.3..0.6) * (1.0 + 0.1 * rng.random_range(-1.0..1.0));
        let x = rng.random_range(0.8..1.4) * (1.0 + 0.1 * rng.random_range(-1.0..1.0));
        z[(p, p)] = c(r, x);
    }
    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let r = rng.random_range(0.05..0.14);
        let x = rng.random_range(0.25..0.45);
        z[(i, j)] = c(r, x);
        z[(j, i)] = c(r, x);
    }
    z
}

/// Per-phase piecewise profile with independent random walks: the diversity
/// that makes the impedance regression well excited.
fn random_profile(rng: &mut ChaCha8Rng, duration: f64) -> LoadProfile {
    let mut knots = Vec::new();
    let mut scale = [1.0f64; 3];
    let mut t = 0.0;
    while t <= duration + 0.5 {
        for s in &mut scale {
            *s = (*s + rng.random_range(-0.28..0.28)).clamp(0.55, 1.45);
        }
        knots.push((t, scale));
        t += 0.5;
    }
    LoadProfile::Piecewise(knots)
}

fn random_load(rng: &mut ChaCha8Rng, p_scale: f64) -> LoadModel {
    let mut s = CVec3::zeros();
    for p in 0..3 {
        let pw = rng.random_range(0.5..1.0) * p_scale;
        let q = pw * rng.random_range(0.15..0.45);
        s[p] = c(pw, q);
    }
    LoadModel::ConstantPower(s)
}

fn line_trial_model(rng: &mut ChaCha8Rng) -> (FeederModel, CMat3) {
    let z = random_line_z(rng);
    let mut loads = BTreeMap::new();
    loads.insert("end".to_string(), random_load(rng, 70e3));
    let model = FeederModel {
        s_base: 500e3,
        source: SourceSpec {
            bus: "sub".into(),
            voltage_ln: 2400.0,
            angle_rad: 0.0,
        },
        branches: vec![Branch {
            name: "ln".into(),
            kind: BranchKind::Line(LineBranch {
                from: "sub".into(),
                to: "end".into(),
                z,
            }),
        }],
        loads,
        meters: vec!["sub".into(), "end".into()],
    };
    (model, z)
}

fn xfmr_trial_model(rng: &mut ChaCha8Rng) -> (FeederModel, CVec3, f64) {
    let n_t = 30.0;
    let mut z_abc = CVec3::zeros();
    for p in 0..3 {
        let r = 0.004 * (1.0 + 0.2 * rng.random_range(-1.0..1.0));
        let x = 0.016 * (1.0 + 0.2 * rng.random_range(-1.0..1.0));
        z_abc[p] = c(r, x);
    }
    let mut loads = BTreeMap::new();
    loads.insert("low".to_string(), random_load(rng, 45e3));
    let model = FeederModel {
        s_base: 500e3,
        source: SourceSpec {
            bus: "sub".into(),
            voltage_ln: 7200.0,
            angle_rad: 0.0,
        },
        branches: vec![Branch {
            name: "xf".into(),
            kind: BranchKind::Transformer(TransformerBranch {
                from: "sub".into(),
                to: "low".into(),
                n_t,
                z_abc,
            }),
        }],
        loads,
        meters: vec!["sub".into(), "low".into()],
    };
    (model, z_abc, n_t)
}

fn run_trial_frames(
    model: &FeederModel,
    rng: &mut ChaCha8Rng,
    noise: &NoiseModel,
    duration: f64,
) -> BTreeMap<String, Vec<Frame>> {
    let mut profiles = BTreeMap::new();
    for bus in model.loads.keys() {
        profiles.insert(bus.clone(), random_profile(rng, duration));
    }
    let telemetry = simulate_telemetry(
        model,
        &LoadProfiles(profiles),
        noise,
        &EventScript::none(),
        duration,
    )
    .expect("trial telemetry");
    telemetry.meters
}

#[test]
fn criterion_01_impedance_recovery_noiseless() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for k in 0..NOISELESS_LINES {
        let (model, z) = line_trial_model(&mut rng);
        let frames = run_trial_frames(&model, &mut rng, &NoiseModel::noiseless(k as u64), 1.0);
        let est = diag::estimate_line_impedance(
            &frames["sub"],
            &frames["end"],
            &diag::ImpedanceOptions {
                branch: "ln".into(),
                truth: Some(z),
                ..Default::default()
            },
        )
        .expect("line estimate");
        worst = worst.max(est.relative_error_norm.unwrap());
    }
    for k in 0..NOISELESS_TRANSFORMERS {
        let (model, z_abc, n_t) = xfmr_trial_model(&mut rng);
        let frames =
            run_trial_frames(&model, &mut rng, &NoiseModel::noiseless(1000 + k as u64), 1.0);
        let est = diag::estimate_transformer_impedance(
            &frames["sub"],
            &frames["low"],
            n_t,
            &diag::ImpedanceOptions {
                branch: "xf".into(),
                truth: Some(Matrix3::from_diagonal(&z_abc)),
                ..Default::default()
            },
        )
        .expect("transformer estimate");
        worst = worst.max(est.relative_error_norm.unwrap());
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        worst <= NOISELESS_REL_ERR,
        "worst noiseless relative error {worst:.3e}"
    );
    assert!(elapsed < NOISELESS_BUDGET_S, "took {elapsed:.1}s");
    println!(
        "[PASS] criterion 1: noiseless impedance recovery, worst relative error {worst:.2e} over {} trials in {elapsed:.1}s",
        NOISELESS_LINES + NOISELESS_TRANSFORMERS
    );
}

#[test]
fn criterion_02_impedance_recovery_at_paper_noise() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let duration = NOISY_SAMPLES as f64 / 120.0;
    let mut successes = 0usize;
    let mut line_errs = Vec::new();
    let mut xfmr_errs = Vec::new();
    for trial in 0..NOISY_TRIALS {
        if trial % 2 == 0 {
            let (model, z) = line_trial_model(&mut rng);
            let frames =
                run_trial_frames(&model, &mut rng, &paper_noise(5000 + trial as u64), duration);
            let err = diag::estimate_line_impedance(
                &frames["sub"],
                &frames["end"],
                &diag::ImpedanceOptions {
                    branch: "ln".into(),
                    truth: Some(z),
                    ..Default::default()
                },
            )
            .expect("line estimate")
            .relative_error_norm
            .unwrap();
            line_errs.push(err);
            if err <= LINE_REL_ERR {
                successes += 1;
            }
        } else {
            let (model, z_abc, n_t) = xfmr_trial_model(&mut rng);
            let frames =
                run_trial_frames(&model, &mut rng, &paper_noise(9000 + trial as u64), duration);
            let err = diag::estimate_transformer_impedance(
                &frames["sub"],
                &frames["low"],
                n_t,
                &diag::ImpedanceOptions {
                    branch: "xf".into(),
                    truth: Some(Matrix3::from_diagonal(&z_abc)),
                    ..Default::default()
                },
            )
            .expect("transformer estimate")
            .relative_error_norm
            .unwrap();
            xfmr_errs.push(err);
            if err <= XFMR_REL_ERR {
                successes += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let rate = successes as f64 / NOISY_TRIALS as f64;
    let med = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    assert!(
        rate >= NOISY_SUCCESS_RATE,
        "only {successes}/{NOISY_TRIALS} trials within tolerance"
    );
    assert!(elapsed < NOISY_BUDGET_S, "took {elapsed:.1}s");
    println!(
        "[PASS] criterion 2: impedance at instrument noise, {successes}/{NOISY_TRIALS} within 13%/15% \
         (median line {:.1}%, transformer {:.1}%) in {elapsed:.1}s",
        med(line_errs) * 100.0,
        med(xfmr_errs) * 100.0
    );
}

#[test]
fn criterion_03_excitation_failure_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = 0usize;
    for case in 0..EXCITATION_CASES {
        let got = match case % 3 {
            0 => {
                // identical currents on all phases for all t
                let frames = balanced_frames(&mut rng, |i_mag, ang| {
                    let i = Complex64::from_polar(i_mag, ang);
                    CVec3::new(i, i, i)
                });
                diag::estimate_line_impedance(
                    &frames.0,
                    &frames.1,
                    &diag::ImpedanceOptions::default(),
                )
                .err()
            }
            1 => {
                // balanced positive sequence, scaled over time
                let third = 2.0 * std::f64::consts::PI / 3.0;
                let frames = balanced_frames(&mut rng, move |i_mag, ang| {
                    CVec3::new(
                        Complex64::from_polar(i_mag, ang),
                        Complex64::from_polar(i_mag, ang - third),
                        Complex64::from_polar(i_mag, ang + third),
                    )
                });
                diag::estimate_line_impedance(
                    &frames.0,
                    &frames.1,
                    &diag::ImpedanceOptions::default(),
                )
                .err()
            }
            _ => {
                // dead transformer secondary
                let frames = balanced_frames(&mut rng, |_, _| CVec3::zeros());
                diag::estimate_transformer_impedance(
                    &frames.0,
                    &frames.1,
                    30.0,
                    &diag::ImpedanceOptions::default(),
                )
                .err()
            }
        };
        match got {
            Some(diag::DiagError::InsufficientExcitation { .. }) => failures += 1,
            other => panic!("case {case}: expected InsufficientExcitation, got {other:?}"),
        }
    }
    assert_eq!(failures, EXCITATION_CASES);
    println!(
        "[PASS] criterion 3: {EXCITATION_CASES}/{EXCITATION_CASES} degenerate-excitation cases gated, never a numeric answer"
    );
}

/// Frames for a synthetic two-ended element whose currents come from the
/// given per-sample generator (voltages kept consistent with a fixed Z).
fn balanced_frames(
    rng: &mut ChaCha8Rng,
    current: impl Fn(f64, f64) -> CVec3,
) -> (Vec<Frame>, Vec<Frame>) {
    let z = Matrix3::from_diagonal(&CVec3::new(c(0.4, 1.0), c(0.4, 1.0), c(0.4, 1.0)));
    let v1 = CVec3::new(
        Complex64::from_polar(2400.0, 0.0),
        Complex64::from_polar(2400.0, -2.0 * std::f64::consts::PI / 3.0),
        Complex64::from_polar(2400.0, 2.0 * std::f64::consts::PI / 3.0),
    );
    let mut a = Vec::new();
    let mut b = Vec::new();
    for k in 0..120 {
        let mag = rng.random_range(10.0..60.0);
        let ang = rng.random_range(-0.6..-0.1);
        let i = current(mag, ang);
        let v2 = v1 - z * i;
        let t = k as i64 * 8_333_333;
        a.push(Frame {
            timestamp_ns: t,
            meter_id: "e1".into(),
            voltage: gridphasor_core::phasor::ThreePhaseSet::from_complex([v1[0], v1[1], v1[2]]),
            current: gridphasor_core::phasor::ThreePhaseSet::from_complex([i[0], i[1], i[2]]),
        });
        b.push(Frame {
            timestamp_ns: t,
            meter_id: "e2".into(),
            voltage: gridphasor_core::phasor::ThreePhaseSet::from_complex([v2[0], v2[1], v2[2]]),
            current: gridphasor_core::phasor::ThreePhaseSet::from_complex([i[0], i[1], i[2]]),
        });
    }
    (a, b)
}

/// Six-meter feeder used by the phase-identification criterion.
fn phase_id_model() -> FeederModel {
    let z = |s: f64| {
        Matrix3::new(
            c(0.4 * s, 1.0 * s),
            c(0.1 * s, 0.33 * s),
            c(0.1 * s, 0.33 * s),
            c(0.1 * s, 0.33 * s),
            c(0.41 * s, 1.01 * s),
            c(0.11 * s, 0.34 * s),
            c(0.1 * s, 0.33 * s),
            c(0.11 * s, 0.34 * s),
            c(0.4 * s, 0.99 * s),
        )
    };
    let mut loads = BTreeMap::new();
    for (bus, base) in [("m2", 55e3), ("m3", 40e3), ("m4", 65e3), ("m5", 35e3)] {
        loads.insert(
            bus.to_string(),
            LoadModel::ConstantPower(CVec3::new(
                c(base, 0.3 * base),
                c(0.8 * base, 0.2 * base),
                c(1.2 * base, 0.35 * base),
            )),
        );
    }
    FeederModel {
        s_base: 1e6,
        source: SourceSpec {
            bus: "sub".into(),
            voltage_ln: 2400.0,
            angle_rad: 0.0,
        },
        branches: vec![
            Branch {
                name: "t1".into(),
                kind: BranchKind::Line(LineBranch { from: "sub".into(), to: "m1".into(), z: z(1.0) }),
            },
            Branch {
                name: "t2".into(),
                kind: BranchKind::Line(LineBranch { from: "m1".into(), to: "m2".into(), z: z(0.8) }),
            },
            Branch {
                name: "t3".into(),
                kind: BranchKind::Line(LineBranch { from: "m2".into(), to: "m3".into(), z: z(0.9) }),
            },
            Branch {
                name: "l4".into(),
                kind: BranchKind::Line(LineBranch { from: "m1".into(), to: "m4".into(), z: z(1.2) }),
            },
            Branch {
                name: "l5".into(),
                kind: BranchKind::Line(LineBranch { from: "m2".into(), to: "m5".into(), z: z(1.1) }),
            },
        ],
        loads,
        meters: vec!["sub".into(), "m1".into(), "m2".into(), "m3".into(), "m4".into(), "m5".into()],
    }
}

#[test]
fn criterion_04_phase_identification() {
    let started = Instant::now();
    let model = phase_id_model();
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut trials = 0usize;
    let mut correct = 0usize;
    let mut sim_round = 0u64;
    'outer: loop {
        sim_round += 1;
        let mut profiles = BTreeMap::new();
        for bus in model.loads.keys() {
            profiles.insert(bus.clone(), random_profile(&mut rng, 3.4));
        }
        let telemetry = simulate_telemetry(
            &model,
            &LoadProfiles(profiles),
            &paper_noise(40_000 + sim_round),
            &EventScript::none(),
            3.4,
        )
        .expect("phase-id telemetry");
        let reference = diag::ThreePhaseSeries::from_frames(&telemetry.meters["m1"]);
        for candidate_meter in ["m2", "m3", "m4", "m5", "sub"] {
            if trials >= PHASE_ID_TRIALS {
                break 'outer;
            }
            trials += 1;
            let perm = PERMS[rng.random_range(0..6)];
            let offset_mult: i32 = rng.random_range(-5..=6);
            let base = diag::ThreePhaseSeries::from_frames(&telemetry.meters[candidate_meter]);
            let candidate = base
                .permuted(perm)
                .shifted((offset_mult as f64 * 30.0).to_radians());
            let assignment = diag::identify_phase(
                candidate_meter,
                &reference,
                &candidate,
                &diag::PhaseIdOptions::default(),
            )
            .expect("assignment");
            let mut want_mapping = [0usize; 3];
            for p in 0..3 {
                want_mapping[perm[p]] = p;
            }
            let want_offset = if offset_mult == -6 { 6 * 30 } else { offset_mult * 30 };
            if assignment.mapping == want_mapping && assignment.offset_deg == want_offset {
                correct += 1;
            } else {
                panic!(
                    "trial {trials}: {candidate_meter} got {:?}@{} want {:?}@{}",
                    assignment.mapping, assignment.offset_deg, want_mapping, want_offset
                );
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(correct, PHASE_ID_TRIALS);
    assert!(elapsed < PHASE_ID_BUDGET_S, "took {elapsed:.1}s");
    println!(
        "[PASS] criterion 4: phase identification {correct}/{PHASE_ID_TRIALS} correct mappings and offsets in {elapsed:.1}s"
    );
}

/// Six-bus feeder with two switches (four radial hypotheses).
fn voting_model(sw1: SwitchStatus, sw2: SwitchStatus) -> FeederModel {
    let z = |s: f64| {
        Matrix3::new(
            c(0.4 * s, 1.0 * s),
            c(0.1 * s, 0.35 * s),
            c(0.1 * s, 0.33 * s),
            c(0.1 * s, 0.35 * s),
            c(0.42 * s, 1.02 * s),
            c(0.11 * s, 0.36 * s),
            c(0.1 * s, 0.33 * s),
            c(0.11 * s, 0.36 * s),
            c(0.39 * s, 0.98 * s),
        )
    };
    let mut loads = BTreeMap::new();
    loads.insert(
        "m2".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(40e3, 12e3), c(30e3, 9e3), c(55e3, 17e3))),
    );
    loads.insert(
        "m3".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(25e3, 7e3), c(45e3, 14e3), c(20e3, 5e3))),
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
                kind: BranchKind::Line(LineBranch { from: "sub".into(), to: "m1".into(), z: z(1.0) }),
            },
            Branch {
                name: "sw1".into(),
                kind: BranchKind::Switch(SwitchBranch { from: "m1".into(), to: "j2".into(), status: sw1 }),
            },
            Branch {
                name: "l2".into(),
                kind: BranchKind::Line(LineBranch { from: "j2".into(), to: "m2".into(), z: z(0.8) }),
            },
            Branch {
                name: "sw2".into(),
                kind: BranchKind::Switch(SwitchBranch { from: "m1".into(), to: "j3".into(), status: sw2 }),
            },
            Branch {
                name: "l3".into(),
                kind: BranchKind::Line(LineBranch { from: "j3".into(), to: "m3".into(), z: z(1.3) }),
            },
        ],
        loads,
        meters: vec!["sub".into(), "m1".into(), "m2".into(), "m3".into()],
    }
}

#[test]
fn criterion_05_topology_voting() {
    use SwitchStatus::{Closed, Open};
    let started = Instant::now();
    let configs = [(Closed, Closed), (Closed, Open), (Open, Closed), (Open, Open)];
    let ids = ["cc", "co", "oc", "oo"];
    let hypotheses: Vec<diag::TopologyHypothesis> = configs
        .iter()
        .zip(ids)
        .map(|((s1, s2), id)| diag::TopologyHypothesis {
            id: id.to_string(),
            switch_status: BTreeMap::from([
                ("sw1".to_string(), *s1),
                ("sw2".to_string(), *s2),
            ]),
        })
        .collect();
    let pseudo = |m: &FeederModel| -> BTreeMap<String, CVec3> {
        m.loads
            .iter()
            .map(|(b, l)| match l {
                LoadModel::ConstantPower(s) => (b.clone(), *s),
                _ => (b.clone(), CVec3::zeros()),
            })
            .collect()
    };

    // noiseless: the generating topology always takes every vote
    for (k, (s1, s2)) in configs.iter().enumerate() {
        let truth = voting_model(*s1, *s2);
        let telemetry = simulate_telemetry(
            &truth,
            &LoadProfiles::constant(),
            &NoiseModel::noiseless(k as u64),
            &EventScript::none(),
            VOTING_SAMPLES as f64 / 120.0,
        )
        .unwrap();
        let outcome = diag::detect_topology_voting(
            &voting_model(Closed, Closed),
            &hypotheses,
            &telemetry.meters,
            &pseudo(&truth),
            &diag::VotingOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.winner, ids[k], "noiseless trial {k}: {outcome:?}");
        let share = outcome.shares.iter().find(|(id, _)| id == ids[k]).unwrap().1;
        assert_eq!(share, 1.0, "noiseless vote not unanimous: {outcome:?}");
    }

    // noisy Monte Carlo
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut strong_wins = 0usize;
    for trial in 0..VOTING_TRIALS {
        let which = rng.random_range(0..4);
        let (s1, s2) = configs[which];
        let truth = voting_model(s1, s2);
        let telemetry = simulate_telemetry(
            &truth,
            &LoadProfiles::constant(),
            &paper_noise(50_000 + trial as u64),
            &EventScript::none(),
            VOTING_SAMPLES as f64 / 120.0,
        )
        .unwrap();
        let outcome = diag::detect_topology_voting(
            &voting_model(Closed, Closed),
            &hypotheses,
            &telemetry.meters,
            &pseudo(&truth),
            &diag::VotingOptions::default(),
        )
        .unwrap();
        if outcome.winner == ids[which] {
            let share = outcome
                .shares
                .iter()
                .find(|(id, _)| id == ids[which])
                .unwrap()
                .1;
            if share >= VOTING_SHARE {
                strong_wins += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let rate = strong_wins as f64 / VOTING_TRIALS as f64;
    assert!(
        rate >= VOTING_TRIAL_RATE,
        "true topology won with >= 95% share in only {strong_wins}/{VOTING_TRIALS} trials"
    );
    println!(
        "[PASS] criterion 5: topology voting, noiseless unanimous, {strong_wins}/{VOTING_TRIALS} noisy trials with >= 95% share in {elapsed:.1}s"
    );
}

/// Four-bus feeder for the state-estimation parity check.
fn se_model() -> FeederModel {
    let z = Matrix3::new(
        c(0.5, 1.2),
        c(0.12, 0.4),
        c(0.11, 0.38),
        c(0.12, 0.4),
        c(0.52, 1.25),
        c(0.13, 0.41),
        c(0.11, 0.38),
        c(0.13, 0.41),
        c(0.49, 1.18),
    );
    let mut loads = BTreeMap::new();
    loads.insert(
        "b1".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(70e3, 20e3), c(50e3, 14e3), c(90e3, 28e3))),
    );
    loads.insert(
        "b2".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(30e3, 9e3), c(40e3, 12e3), c(24e3, 7e3))),
    );
    loads.insert(
        "b3".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(22e3, 6e3), c(16e3, 4e3), c(28e3, 8e3))),
    );
    FeederModel {
        s_base: 1e6,
        source: SourceSpec {
            bus: "sub".into(),
            voltage_ln: 7200.0,
            angle_rad: 0.0,
        },
        branches: vec![
            Branch {
                name: "l1".into(),
                kind: BranchKind::Line(LineBranch { from: "sub".into(), to: "b1".into(), z }),
            },
            Branch {
                name: "l2".into(),
                kind: BranchKind::Line(LineBranch { from: "b1".into(), to: "b2".into(), z: z * c(0.7, 0.0) }),
            },
            Branch {
                name: "l3".into(),
                kind: BranchKind::Line(LineBranch { from: "b1".into(), to: "b3".into(), z: z * c(1.2, 0.0) }),
            },
        ],
        loads,
        meters: vec![],
    }
}

#[test]
fn criterion_06_state_estimation_parity() {
    let started = Instant::now();
    let model = se_model();
    let truth = gridphasor_core::sim::solve_power_flow(&model).unwrap();
    let bases = model.voltage_bases().unwrap();
    let meters = ["sub", "b2"];
    let noise = diag::MeasurementNoise::default();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let sigma_va = 0.04 * model.s_base / 3.0;

    let mut sq_lin = 0.0f64;
    let mut sq_wls = 0.0f64;
    let mut count = 0usize;
    let normal = |rng: &mut ChaCha8Rng, sigma: f64| {
        // Box-Muller keeps this oracle independent of the simulator's RNG use
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for _ in 0..SE_DRAWS {
        let mut meas = Vec::new();
        for m in meters {
            let v = truth.voltage(m).unwrap();
            let vb = bases[m];
            let mut phasors = [Phasor::zero(); 3];
            for p in 0..3 {
                let mag = v[p].norm() + normal(&mut rng, noise.magnitude_sigma_pu * vb);
                let ang = v[p].arg() + normal(&mut rng, noise.angle_sigma);
                phasors[p] = Phasor::new(mag.max(0.0), ang).unwrap();
            }
            meas.push(diag::VoltageMeasurement {
                bus: m.to_string(),
                phasors: gridphasor_core::phasor::ThreePhaseSet::new(
                    phasors[0], phasors[1], phasors[2],
                ),
            });
        }
        let pseudo: Vec<diag::InjectionPseudo> = model
            .loads
            .iter()
            .map(|(b, l)| {
                let s = match l {
                    LoadModel::ConstantPower(s) => *s,
                    _ => CVec3::zeros(),
                };
                let mut noisy = CVec3::zeros();
                for p in 0..3 {
                    noisy[p] = -s[p]
                        + c(
                            normal(&mut rng, sigma_va),
                            normal(&mut rng, sigma_va),
                        );
                }
                diag::InjectionPseudo {
                    bus: b.clone(),
                    s_va: noisy,
                    sigma_va,
                }
            })
            .collect();

        let lin = diag::linear_state_estimate(
            &model,
            &meas,
            &pseudo,
            &noise,
            &diag::SePriors::default(),
        )
        .expect("linear estimate");
        let wls =
            diag::wls_state_estimate(&model, &meas, &pseudo, &noise).expect("wls estimate");
        for est in [(&lin, &mut sq_lin), (&wls, &mut sq_wls)] {
            let (state, acc) = est;
            for (bus, v) in state.buses.iter().zip(&state.voltages) {
                let want = truth.voltage(bus).unwrap();
                let vb = bases[bus];
                for p in 0..3 {
                    let e = (v.phase(p).to_complex() - want[p]).norm() / vb;
                    *acc += e * e;
                }
            }
        }
        count += 1;
    }
    let n = (count * 4 * 3) as f64;
    let rmse_lin = (sq_lin / n).sqrt();
    let rmse_wls = (sq_wls / n).sqrt();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        rmse_lin <= SE_PARITY_FACTOR * rmse_wls,
        "linear rmse {rmse_lin:.3e} vs wls {rmse_wls:.3e}"
    );
    println!(
        "[PASS] criterion 6: state estimation parity, linear rmse {rmse_lin:.2e} pu vs wls {rmse_wls:.2e} pu (factor {:.3}) over {SE_DRAWS} draws in {elapsed:.1}s",
        rmse_lin / rmse_wls
    );
}

#[test]
fn criterion_07_store_correctness() {
    let started = Instant::now();
    let store = Store::in_memory();
    let key = StreamKey::v_mag("acc", PhaseLabel::A);
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut shadow: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new()];
    let mut stable_digests: Vec<String> = vec![String::new()];
    let per_batch = STORE_POINTS / STORE_VERSIONS;

    for _ in 0..STORE_VERSIONS {
        let mut batch = Vec::with_capacity(per_batch);
        let mut seen = std::collections::HashSet::new();
        // mix clustered and scattered timestamps, plus overwrites
        while batch.len() < per_batch {
            let t = if rng.random_range(0..4) == 0 {
                rng.random_range(0..2_000_000_000i64)
            } else {
                let cluster = rng.random_range(0..20i64);
                cluster * 100_000_000 + rng.random_range(0..50_000_000i64)
            };
            if seen.insert(t) {
                batch.push((t, rng.random_range(-1e3..1e3)));
            }
        }
        store.insert(&key, &batch).unwrap();
        let mut next = shadow.last().unwrap().clone();
        for &(t, v) in &batch {
            next.insert(t, v);
        }
        shadow.push(next);
        let v = store.latest_version(&key).unwrap();
        stable_digests.push(format!(
            "{:?}",
            store.query_raw(&key, 0, 2_000_000_001, v).unwrap()
        ));
    }

    // full scans, random subranges, and windows against brute force
    for version in 1..=STORE_VERSIONS {
        let model = &shadow[version];
        let v = VersionId(version as u64);
        let all: Vec<(i64, f64)> = model.iter().map(|(&t, &x)| (t, x)).collect();
        assert_eq!(store.query_raw(&key, 0, 2_000_000_001, v).unwrap(), all);

        for _ in 0..4 {
            let a = rng.random_range(0..2_000_000_000i64);
            let b = rng.random_range(a..2_000_000_001i64);
            let want: Vec<(i64, f64)> = model.range(a..b).map(|(&t, &x)| (t, x)).collect();
            assert_eq!(store.query_raw(&key, a, b, v).unwrap(), want);
        }

        for pw in [21u8, 26, 30] {
            let width = 1i64 << pw;
            // a bounded aligned slice of the grid
            let a = rng.random_range(0..1_500_000_000i64) / width * width;
            let b = (a + width * 512).min(2_000_000_000);
            for w in store.query_windows(&key, a, b, pw, v).unwrap() {
                let vals: Vec<f64> = model
                    .range(w.window_start..w.window_start + width)
                    .map(|(_, &x)| x)
                    .collect();
                assert_eq!(w.count as usize, vals.len());
                if !vals.is_empty() {
                    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    assert_eq!(w.min, Some(min));
                    assert_eq!(w.max, Some(max));
                    assert!((w.mean.unwrap() - mean).abs() <= 1e-9 * mean.abs().max(1.0));
                }
            }
        }
    }

    // changed_ranges: sound and aligned-complete against raw diffs
    let pw = 22u8;
    let width = 1i64 << pw;
    for _ in 0..40 {
        let va = rng.random_range(1..=STORE_VERSIONS);
        let vb = rng.random_range(va..=STORE_VERSIONS);
        let (a, b) = (&shadow[va], &shadow[vb]);
        let mut differing: Vec<i64> = b
            .iter()
            .filter(|(t, v)| a.get(t).map(|x| x.to_bits() != v.to_bits()).unwrap_or(true))
            .map(|(&t, _)| t)
            .collect();
        differing.extend(a.keys().filter(|t| !b.contains_key(t)));
        differing.sort_unstable();
        let ranges = store
            .changed_ranges(&key, VersionId(va as u64), VersionId(vb as u64), pw)
            .unwrap();
        let mut prev_end = i64::MIN;
        for r in &ranges {
            assert_eq!(r.start.rem_euclid(width), 0);
            assert!(r.start >= prev_end && r.start < r.end);
            prev_end = r.end;
            let mut w = r.start;
            while w < r.end {
                assert!(
                    differing.iter().any(|t| (w..w + width).contains(t)),
                    "window at {w} has no differing timestamp"
                );
                w += width;
            }
        }
        for t in &differing {
            assert!(ranges.iter().any(|r| r.start <= *t && *t < r.end));
        }
    }

    // old versions byte-stable after everything above
    for version in 1..=STORE_VERSIONS {
        let v = VersionId(version as u64);
        let now = format!("{:?}", store.query_raw(&key, 0, 2_000_000_001, v).unwrap());
        assert_eq!(now, stable_digests[version], "version {version} drifted");
    }
    store
        .verify_aggregates(&key, VersionId(STORE_VERSIONS as u64))
        .unwrap();

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < STORE_BUDGET_S, "took {elapsed:.1}s");
    println!(
        "[PASS] criterion 7: store correctness over {STORE_POINTS} points / {STORE_VERSIONS} versions in {elapsed:.1}s"
    );
}

#[test]
fn criterion_08_pipeline_equivalence() {
    let started = Instant::now();
    const STEP: i64 = 8_333_333;
    let m1 = StreamKey::v_ang("p1", PhaseLabel::A);
    let m2 = StreamKey::v_ang("p2", PhaseLabel::A);
    let d_diff = StreamKey::derived("dag", "diff");
    let d_fd = StreamKey::derived("dag", "fd");
    let d_copy = StreamKey::derived("dag", "copy");
    let register = |reg: &mut Registry| {
        reg.register(DistillerSpec::new(
            "diff",
            vec![m1.clone(), m2.clone()],
            d_diff.clone(),
            Kernel::AngleDiff,
        ))
        .unwrap();
        reg.register(DistillerSpec::new(
            "fd",
            vec![m1.clone()],
            d_fd.clone(),
            Kernel::FreqDeviation { window_ns: 15 * STEP },
        ))
        .unwrap();
        reg.register(DistillerSpec::new(
            "copy",
            vec![d_diff.clone()],
            d_copy.clone(),
            Kernel::Identity,
        ))
        .unwrap();
    };

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for round in 0..20 {
        let store = Store::in_memory();
        let mut reg = Registry::new();
        register(&mut reg);
        let ops = rng.random_range(3..14);
        for _ in 0..ops {
            if rng.random_range(0..3) == 0 {
                reg.propagate(&store).unwrap();
            } else {
                let key = if rng.random_bool(0.5) { &m1 } else { &m2 };
                let start: i64 = rng.random_range(0..600);
                let len = rng.random_range(1..120);
                let pts: Vec<(i64, f64)> = (0..len)
                    .map(|i| ((start + i) * STEP, rng.random_range(-3.0..3.0)))
                    .collect();
                store.insert(key, &pts).unwrap();
            }
        }
        reg.propagate(&store).unwrap();
        assert!(reg.propagate(&store).unwrap().is_empty(), "not idempotent");

        // full-recompute oracle from the final raw inputs
        let fresh = Store::in_memory();
        for key in [&m1, &m2] {
            if let Ok(v) = store.latest_version(key) {
                let pts = store.query_raw(key, i64::MIN / 4, i64::MAX / 4, v).unwrap();
                if !pts.is_empty() {
                    fresh.insert(key, &pts).unwrap();
                }
            }
        }
        let mut fresh_reg = Registry::new();
        register(&mut fresh_reg);
        fresh_reg.propagate(&fresh).unwrap();

        for key in [&d_diff, &d_fd, &d_copy] {
            let got = store
                .latest_version(key)
                .map(|v| store.query_raw(key, i64::MIN / 4, i64::MAX / 4, v).unwrap())
                .unwrap_or_default();
            let want = fresh
                .latest_version(key)
                .map(|v| fresh.query_raw(key, i64::MIN / 4, i64::MAX / 4, v).unwrap())
                .unwrap_or_default();
            assert_eq!(got, want, "round {round}: {} differs", key.canon());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < PIPELINE_BUDGET_S, "took {elapsed:.1}s");
    println!(
        "[PASS] criterion 8: incremental pipeline equals full recomputation over 20 random interleavings in {elapsed:.1}s"
    );
}

#[test]
fn criterion_09_kpca_event_detection() {
    let started = Instant::now();
    // stationary cyclic loads; sags injected only in the test run
    let model = voting_model(SwitchStatus::Closed, SwitchStatus::Closed);
    let mut profiles = BTreeMap::new();
    for (bus, phase_shift) in [("m2", 0.0), ("m3", 0.7)] {
        let knots: Vec<(f64, [f64; 3])> = (0..=32)
            .map(|k| {
                let t = k as f64 * 0.5;
                let s = |p: f64| 1.0 + 0.15 * (t * 1.3 + p + phase_shift).sin();
                (t, [s(0.0), s(2.1), s(4.2)])
            })
            .collect();
        profiles.insert(bus.to_string(), LoadProfile::Piecewise(knots));
    }
    let profiles = LoadProfiles(profiles);

    let train_run = simulate_telemetry(
        &model,
        &profiles,
        &paper_noise(909),
        &EventScript::none(),
        6.0,
    )
    .unwrap();
    let sags = [(7.0, 0.5), (9.2, 0.5), (11.4, 0.5), (13.1, 0.5)];
    let events = EventScript {
        events: sags
            .iter()
            .map(|&(t, d)| {
                (
                    t,
                    Event::Sag {
                        depth: 0.1,
                        duration: d,
                    },
                )
            })
            .collect(),
    };
    let test_run =
        simulate_telemetry(&model, &profiles, &paper_noise(910), &events, 16.0).unwrap();

    let train = diag::build_feature_windows(&train_run.meters["m2"], &train_run.meters["sub"], 10);
    let test = diag::build_feature_windows(&test_run.meters["m2"], &test_run.meters["sub"], 10);
    let flags = diag::detect_events_kpca(&train, &test, &KpcaOptions::default()).unwrap();

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for f in &flags {
        let overlaps_sag = sags.iter().any(|&(t, d)| {
            let s = (t * 1e9) as i64;
            let e = ((t + d) * 1e9) as i64;
            f.start_ns < e && s < f.end_ns
        });
        match (overlaps_sag, f.is_anomaly) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fn_).max(1) as f64;
    assert!(
        precision >= KPCA_PRECISION,
        "precision {precision:.3} (tp {tp}, fp {fp})"
    );
    assert!(recall >= KPCA_RECALL, "recall {recall:.3} (tp {tp}, fn {fn_})");

    // linear-kernel scores match a plain PCA oracle
    let opts = KpcaOptions {
        kernel: KpcaKernel::Linear,
        n_components: 3,
        energy_cutoff: None,
        ..Default::default()
    };
    let kpca_flags = diag::detect_events_kpca(&train, &test, &opts).unwrap();
    let pca_scores = pca_oracle_scores(&train, &test, 3);
    let mut worst = 0.0f64;
    for (f, want) in kpca_flags.iter().zip(&pca_scores) {
        worst = worst.max((f.score - want).abs());
    }
    assert!(worst <= KPCA_PCA_MATCH, "kPCA vs PCA deviation {worst:.3e}");

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 9: kPCA sag detection precision {precision:.2} recall {recall:.2}; linear kernel matches PCA within {worst:.1e} in {elapsed:.1}s"
    );
}

/// Independent PCA reconstruction-error oracle (covariance eigendecomposition
/// over standardized features).
fn pca_oracle_scores(train: &[diag::Window], test: &[diag::Window], comps: usize) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let d = train[0].features.len();
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| train.iter().map(|w| w.features[j]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = train
                .iter()
                .map(|w| (w.features[j] - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            let s = v.sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    let stdz = |w: &diag::Window| -> Vec<f64> {
        (0..d)
            .map(|j| (w.features[j] - mean[j]) / std[j])
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(stdz).collect();
    let smean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::zeros(d, d);
    for x in &xs {
        for r in 0..d {
            for cc in 0..d {
                cov[(r, cc)] += (x[r] - smean[r]) * (x[cc] - smean[cc]);
            }
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb): (f64, f64) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        eb.partial_cmp(&ea).unwrap()
    });
    let dirs: Vec<DVector<f64>> = order
        .iter()
        .take(comps)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    test.iter()
        .map(|w| {
            let x = stdz(w);
            let xc = DVector::from_iterator(d, x.iter().zip(&smean).map(|(a, m)| a - m));
            let mut err = xc.norm_squared();
            for dir in &dirs {
                let p = dir.dot(&xc);
                err -= p * p;
            }
            err.max(0.0)
        })
        .collect()
}

/// Feeder with three lines for fault-location trials.
fn fault_model() -> FeederModel {
    let z = |s: f64| {
        Matrix3::new(
            c(0.4 * s, 1.0 * s),
            c(0.1 * s, 0.35 * s),
            c(0.1 * s, 0.33 * s),
            c(0.1 * s, 0.35 * s),
            c(0.42 * s, 1.02 * s),
            c(0.11 * s, 0.36 * s),
            c(0.1 * s, 0.33 * s),
            c(0.11 * s, 0.36 * s),
            c(0.39 * s, 0.98 * s),
        )
    };
    let mut loads = BTreeMap::new();
    loads.insert(
        "m2".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(45e3, 14e3), c(35e3, 10e3), c(55e3, 17e3))),
    );
    loads.insert(
        "m3".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(30e3, 9e3), c(42e3, 13e3), c(24e3, 7e3))),
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
                kind: BranchKind::Line(LineBranch { from: "sub".into(), to: "m1".into(), z: z(1.0) }),
            },
            Branch {
                name: "l2".into(),
                kind: BranchKind::Line(LineBranch { from: "m1".into(), to: "m2".into(), z: z(1.4) }),
            },
            Branch {
                name: "l3".into(),
                kind: BranchKind::Line(LineBranch { from: "m1".into(), to: "m3".into(), z: z(0.9) }),
            },
        ],
        loads,
        meters: vec!["sub".into(), "m1".into(), "m2".into(), "m3".into()],
    }
}

#[test]
fn criterion_10_fault_location() {
    let started = Instant::now();
    let model = fault_model();
    let branches = ["l1", "l2", "l3"];
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut correct_branch = 0usize;
    let mut distance_ok = 0usize;
    for trial in 0..FAULT_TRIALS {
        let branch = branches[rng.random_range(0..3)];
        let fraction = rng.random_range(0.05..0.95);
        let phases = match rng.random_range(0..3) {
            0 => [true, false, false],
            1 => [false, true, true],
            _ => [true, true, true],
        };
        let events = EventScript {
            events: vec![(
                0.3,
                Event::BoltedFault {
                    branch: branch.into(),
                    distance_fraction: fraction,
                    phases,
                    shunt_ohms: DEFAULT_FAULT_SHUNT_OHMS,
                },
            )],
        };
        let telemetry = simulate_telemetry(
            &model,
            &LoadProfiles::constant(),
            &paper_noise(100_000 + trial as u64),
            &events,
            0.6,
        )
        .unwrap();
        let pre = diag::window_average(&telemetry.meters, 5, 33);
        let during = diag::window_average(&telemetry.meters, 40, 70);
        let loc = diag::locate_fault(
            &model,
            &pre,
            &during,
            "sub",
            &diag::FaultLocateOptions::default(),
        )
        .expect("fault located");
        if loc.branch == branch {
            correct_branch += 1;
            if (loc.distance_fraction - fraction).abs() <= FAULT_DISTANCE_ERR {
                distance_ok += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let rate = correct_branch as f64 / FAULT_TRIALS as f64;
    assert!(
        rate >= FAULT_BRANCH_RATE,
        "correct branch in only {correct_branch}/{FAULT_TRIALS}"
    );
    assert_eq!(
        distance_ok, correct_branch,
        "distance error above 5% on a correctly-branched trial"
    );
    println!(
        "[PASS] criterion 10: fault location, correct branch {correct_branch}/{FAULT_TRIALS}, all within 5% distance, in {elapsed:.1}s"
    );
}

#[test]
fn criterion_11_requirement_tables() {
    use diag::UseCase::*;
    // encoded boundaries, exact
    let rows = [
        (EmergencyAlarms, 0.05, 900.0),
        (AvoidConstraintViolations, 0.005, 300.0),
        (ImproveSystemEfficiency, 0.005, 30.0),
        (SwitchStatusIdentification, 0.0, 900.0),
        (CorroborateFieldRecords, 0.01, 300.0),
        (SupportStateEstimation, 0.05, 60.0),
    ];
    for (uc, tve_max, lat_max) in rows {
        assert_eq!(diag::requirement_limits(uc), (tve_max, lat_max), "{uc:?}");
        let at = diag::AchievedStats {
            tve: tve_max,
            latency_s: lat_max,
            report_rate_hz: 120.0,
        };
        assert!(diag::check_requirements(&at, uc).pass);
        let over_tve = diag::AchievedStats {
            tve: tve_max + 1e-12,
            ..at
        };
        assert!(!diag::check_requirements(&over_tve, uc).pass);
        let over_lat = diag::AchievedStats {
            latency_s: lat_max + 1e-9,
            ..at
        };
        assert!(!diag::check_requirements(&over_lat, uc).pass);
    }
    // the three calibration examples
    let ex = |tve: f64, lat: f64| diag::AchievedStats {
        tve,
        latency_s: lat,
        report_rate_hz: 120.0,
    };
    assert!(diag::check_requirements(&ex(0.004, 20.0), ImproveSystemEfficiency).pass);
    let r = diag::check_requirements(&ex(0.02, 10.0), AvoidConstraintViolations);
    assert!(!r.pass && !r.criteria[0].pass);
    assert!(diag::check_requirements(&ex(0.009, 240.0), CorroborateFieldRecords).pass);
    println!("[PASS] criterion 11: requirement tables reproduce every encoded pass/fail boundary");
}

#[test]
fn criterion_12_tve_identity() {
    let theta = 0.573f64.to_radians();
    // chord-length identity
    let chord = 2.0 * (theta / 2.0).sin();
    // complex subtraction route
    let r = Phasor::new(1.0, 0.0).unwrap();
    let m = Phasor::new(1.0, theta).unwrap();
    let direct = tve(m, r).unwrap();
    assert!((direct - chord).abs() < 1e-12);
    assert!(
        (direct - 0.01).abs() <= TVE_IDENTITY_ABS,
        "0.573 degrees gives TVE {direct}"
    );
    println!(
        "[PASS] criterion 12: 0.573 degree angle error gives TVE {direct:.6} (within {TVE_IDENTITY_ABS} of 1%)"
    );
}
