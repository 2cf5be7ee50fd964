//! Cross-checks the sweep solver against an independent damped-Newton
//! solution of the full nonlinear node equations.

use std::collections::BTreeMap;

use gridphasor_core::phasor::ThreePhaseSet;
use gridphasor_core::sim::{
    solve_power_flow, transformer_secondary, verify_solution, Branch, BranchKind, CMat3, CVec3,
    FeederModel, LineBranch, LoadModel, SourceSpec, TransformerBranch,
};
use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn line_z(sr: f64, sx: f64, mr: f64, mx: f64) -> CMat3 {
    Matrix3::new(
        c(sr, sx),
        c(mr, mx),
        c(mr, mx),
        c(mr, mx),
        c(sr * 1.02, sx * 1.01),
        c(mr * 0.95, mx * 0.97),
        c(mr, mx),
        c(mr * 0.95, mx * 0.97),
        c(sr * 0.98, sx * 0.99),
    )
}

/// sub --line1--> b1 --line2--> b2, plus b1 --xfmr--> b3. Unbalanced
/// constant-power loads everywhere downstream.
fn four_bus_model() -> FeederModel {
    let mut loads = BTreeMap::new();
    loads.insert(
        "b1".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(90e3, 30e3), c(40e3, 8e3), c(120e3, 45e3))),
    );
    loads.insert(
        "b2".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(30e3, 10e3), c(65e3, 20e3), c(15e3, 2e3))),
    );
    loads.insert(
        "b3".to_string(),
        LoadModel::ConstantPower(CVec3::new(c(20e3, 5e3), c(12e3, 3e3), c(28e3, 9e3))),
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
                name: "line1".into(),
                kind: BranchKind::Line(LineBranch {
                    from: "sub".into(),
                    to: "b1".into(),
                    z: line_z(0.8, 2.0, 0.2, 0.7),
                }),
            },
            Branch {
                name: "line2".into(),
                kind: BranchKind::Line(LineBranch {
                    from: "b1".into(),
                    to: "b2".into(),
                    z: line_z(0.5, 1.3, 0.15, 0.5),
                }),
            },
            Branch {
                name: "xfmr".into(),
                kind: BranchKind::Transformer(TransformerBranch {
                    from: "b1".into(),
                    to: "b3".into(),
                    n_t: 12470.0 / 277.0 * 3f64.sqrt() / 3f64.sqrt(), // keep simple: 45.0
                    z_abc: CVec3::new(c(0.002, 0.008), c(0.002, 0.008), c(0.002, 0.008)),
                }),
            },
        ],
        loads,
        meters: vec![],
    }
}

/// Independent oracle: full nonlinear node equations solved by damped Newton
/// with a finite-difference Jacobian. State is the rectangular voltage vector
/// of the three non-source buses.
struct NewtonOracle {
    z1_inv: CMat3,
    z2_inv: CMat3,
    a_t: CMat3,
    d_t: CMat3,
    zx: CVec3,
    v_src: CVec3,
    loads: [CVec3; 3], // b1, b2, b3
}

impl NewtonOracle {
    fn new(model: &FeederModel) -> Self {
        let get_line = |name: &str| match &model.branch(name).unwrap().kind {
            BranchKind::Line(l) => l.z,
            _ => panic!("not a line"),
        };
        let (n_t, zx) = match &model.branch("xfmr").unwrap().kind {
            BranchKind::Transformer(t) => (t.n_t, t.z_abc),
            _ => panic!("not a transformer"),
        };
        let m = Matrix3::new(1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0) / n_t;
        let a_t = m.map(|x| c(x, 0.0));
        let d_t = m.transpose().map(|x| c(x, 0.0));
        let loads = ["b1", "b2", "b3"].map(|b| match &model.loads[b] {
            LoadModel::ConstantPower(s) => *s,
            _ => panic!("constant power expected"),
        });
        Self {
            z1_inv: get_line("line1").try_inverse().unwrap(),
            z2_inv: get_line("line2").try_inverse().unwrap(),
            a_t,
            d_t,
            zx,
            v_src: model.source.voltages(),
            loads,
        }
    }

    fn unpack(x: &DVector<f64>) -> [CVec3; 3] {
        let mut v = [CVec3::zeros(); 3];
        for b in 0..3 {
            for p in 0..3 {
                let k = (b * 3 + p) * 2;
                v[b][p] = c(x[k], x[k + 1]);
            }
        }
        v
    }

    /// Node current mismatch at b1, b2, b3 (per phase, complex).
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let [v1, v2, v3] = Self::unpack(x);
        let i_line1 = self.z1_inv * (self.v_src - v1); // into b1
        let i_line2 = self.z2_inv * (v1 - v2); // b1 -> b2
        // transformer low-side current from the voltage-drop relation
        let ideal = self.a_t * v1;
        let mut i_low = CVec3::zeros();
        for p in 0..3 {
            i_low[p] = (ideal[p] - v3[p]) / self.zx[p];
        }
        let i_high = self.d_t * i_low; // drawn from b1
        let load = |s: &CVec3, v: &CVec3| {
            CVec3::new(
                (s[0] / v[0]).conj(),
                (s[1] / v[1]).conj(),
                (s[2] / v[2]).conj(),
            )
        };
        let f1 = i_line1 - i_line2 - i_high - load(&self.loads[0], &v1);
        let f2 = i_line2 - load(&self.loads[1], &v2);
        let f3 = i_low - load(&self.loads[2], &v3);
        let mut out = DVector::zeros(18);
        for (b, f) in [f1, f2, f3].iter().enumerate() {
            for p in 0..3 {
                out[(b * 3 + p) * 2] = f[p].re;
                out[(b * 3 + p) * 2 + 1] = f[p].im;
            }
        }
        out
    }

    fn solve(&self) -> [CVec3; 3] {
        // flat start: source voltage propagated, transformer ratio applied
        let mut x = DVector::zeros(18);
        let v0 = [self.v_src, self.v_src, self.a_t * self.v_src];
        for b in 0..3 {
            for p in 0..3 {
                x[(b * 3 + p) * 2] = v0[b][p].re;
                x[(b * 3 + p) * 2 + 1] = v0[b][p].im;
            }
        }
        for _ in 0..60 {
            let f = self.residual(&x);
            if f.norm() < 1e-9 {
                break;
            }
            // finite-difference Jacobian
            let mut jac = DMatrix::zeros(18, 18);
            for col in 0..18 {
                let h = 1e-4 * x[col].abs().max(1.0);
                let mut xp = x.clone();
                xp[col] += h;
                let fp = self.residual(&xp);
                for row in 0..18 {
                    jac[(row, col)] = (fp[row] - f[row]) / h;
                }
            }
            let dx = jac.lu().solve(&(-&f)).expect("jacobian solvable");
            // damped update: backtrack until the residual shrinks
            let mut lambda = 1.0;
            let base = f.norm();
            loop {
                let cand = &x + &dx * lambda;
                if self.residual(&cand).norm() < base || lambda < 1e-4 {
                    x = cand;
                    break;
                }
                lambda *= 0.5;
            }
        }
        assert!(
            self.residual(&x).norm() < 1e-6,
            "oracle did not converge: |F| = {}",
            self.residual(&x).norm()
        );
        Self::unpack(&x)
    }
}

#[test]
fn sweep_matches_damped_newton_oracle_on_unbalanced_feeder() {
    let mut model = four_bus_model();
    // a readable ratio for the oracle too
    if let BranchKind::Transformer(t) = &mut model.branch_mut("xfmr").unwrap().kind {
        t.n_t = 45.0;
    }
    let sol = solve_power_flow(&model).unwrap();
    assert!(verify_solution(&model, &sol).unwrap() < 1e-8);

    let oracle = NewtonOracle::new(&model).solve();
    let bases = model.voltage_bases().unwrap();
    for (bi, bus) in ["b1", "b2", "b3"].iter().enumerate() {
        let got = sol.voltage(bus).unwrap();
        let vb = bases[*bus];
        for p in 0..3 {
            let err = (got[p] - oracle[bi][p]).norm() / vb;
            assert!(
                err < 1e-6,
                "bus {bus} phase {p}: sweep {} vs oracle {} ({err} pu)",
                got[p],
                oracle[bi][p]
            );
        }
    }
}

#[test]
fn transformer_relation_residual_after_solve() {
    let mut model = four_bus_model();
    if let BranchKind::Transformer(t) = &mut model.branch_mut("xfmr").unwrap().kind {
        t.n_t = 45.0;
    }
    let sol = solve_power_flow(&model).unwrap();
    let xfmr = match &model.branch("xfmr").unwrap().kind {
        BranchKind::Transformer(t) => t.clone(),
        _ => unreachable!(),
    };
    let v_high = sol.voltage("b1").unwrap();
    let i_low = sol.branch_current(&model, "xfmr").unwrap();
    let predicted = transformer_secondary(
        &ThreePhaseSet::from_complex([v_high[0], v_high[1], v_high[2]]),
        &ThreePhaseSet::from_complex([i_low[0], i_low[1], i_low[2]]),
        &xfmr,
    )
    .unwrap();
    let got = sol.voltage("b3").unwrap();
    let vb = model.voltage_bases().unwrap()["b3"];
    for p in 0..3 {
        let r = (predicted.phase(p).to_complex() - got[p]).norm() / vb;
        assert!(r <= 1e-9, "phase {p} residual {r} pu");
    }
}
