//! Distribution state estimation over the three-phase feeder model.
//!
//! The state is the vector of per-bus, per-phase complex voltages in
//! rectangular per-unit coordinates (closed switches merge buses into one
//! electrical node). Two estimators share the measurement set:
//!
//! * a Bayesian linear estimator: Gaussian conditioning of a flat-voltage
//!   prior on direct voltage measurements and on current-injection
//!   pseudo-measurements, which are exactly linear in the rectangular state
//!   through the network admittance matrix;
//! * a baseline nonlinear weighted least squares estimator on polar voltage
//!   measurements and power-injection pseudo-measurements, iterated by
//!   Gauss-Newton.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;

use super::DiagError;
use crate::phasor::{wrap_angle, Phasor, ThreePhaseSet};
use crate::sim::{solve_power_flow, BranchKind, CVec3, FeederModel, SimError, SwitchStatus};

/// A direct voltage phasor measurement at one bus (volts).
#[derive(Debug, Clone)]
pub struct VoltageMeasurement {
    pub bus: String,
    pub phasors: ThreePhaseSet,
}

/// A load/generation pseudo-measurement: net injected complex power per
/// phase (VA, loads negative) with its standard deviation.
#[derive(Debug, Clone)]
pub struct InjectionPseudo {
    pub bus: String,
    pub s_va: CVec3,
    pub sigma_va: f64,
}

/// Instrument noise used to weight direct measurements.
#[derive(Debug, Clone)]
pub struct MeasurementNoise {
    pub angle_sigma: f64,
    pub magnitude_sigma_pu: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            angle_sigma: 0.01f64.to_radians(),
            magnitude_sigma_pu: 1.7e-4,
        }
    }
}

/// Flat-voltage prior: mean is the no-load solution, covariance is
/// `sigma_pu^2 I`.
#[derive(Debug, Clone)]
pub struct SePriors {
    pub sigma_pu: f64,
}

impl Default for SePriors {
    fn default() -> Self {
        Self { sigma_pu: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct StateEstimate {
    /// Energized buses, in model order.
    pub buses: Vec<String>,
    /// Estimated voltages (volts).
    pub voltages: Vec<ThreePhaseSet>,
    /// Standard deviation of each rectangular state entry, per-unit:
    /// `[re_a, im_a, re_b, im_b, re_c, im_c]`.
    pub sigma_pu: Vec<[f64; 6]>,
}

/// The electrical network reduced for estimation: merged nodes, per-unit
/// admittance, and the no-load operating point.
struct SeNetwork {
    nodes: Vec<String>,
    node_of_bus: HashMap<String, usize>,
    v_base: Vec<f64>,
    y: DMatrix<Complex64>,
    /// No-load per-unit voltages (3 per node).
    v0: Vec<Complex64>,
    /// Energized buses in model order with their nodes.
    buses: Vec<(String, usize)>,
    s_phase_base: f64,
}

impl SeNetwork {
    fn build(model: &FeederModel) -> Result<Self, DiagError> {
        model.validate()?;
        // merge buses joined by closed switches
        let all_buses = model.buses();
        let mut parent: HashMap<String, String> =
            all_buses.iter().map(|b| (b.clone(), b.clone())).collect();
        fn find(parent: &mut HashMap<String, String>, b: &str) -> String {
            let p = parent[b].clone();
            if p == b {
                return p;
            }
            let root = find(parent, &p);
            parent.insert(b.to_string(), root.clone());
            root
        }
        for br in &model.branches {
            if let BranchKind::Switch(sw) = &br.kind {
                if sw.status == SwitchStatus::Closed {
                    let a = find(&mut parent, &sw.from);
                    let b = find(&mut parent, &sw.to);
                    if a != b {
                        parent.insert(a, b);
                    }
                }
            }
        }

        // energized set from the solved no-load model
        let mut no_load = model.clone();
        no_load.loads = BTreeMap::new();
        let base_sol = solve_power_flow(&no_load)?;

        let mut nodes: Vec<String> = Vec::new();
        let mut node_of_bus: HashMap<String, usize> = HashMap::new();
        let mut buses = Vec::new();
        for b in &all_buses {
            let energized = base_sol.energized[base_sol.bus_index[b]];
            if !energized {
                continue;
            }
            let rep = find(&mut parent, b);
            let node = match nodes.iter().position(|n| *n == rep) {
                Some(i) => i,
                None => {
                    nodes.push(rep.clone());
                    nodes.len() - 1
                }
            };
            node_of_bus.insert(b.clone(), node);
            buses.push((b.clone(), node));
        }

        let bases = model.voltage_bases()?;
        let v_base: Vec<f64> = nodes.iter().map(|n| bases[n]).collect();
        let n = nodes.len();

        // per-unit admittance
        let mut y = DMatrix::zeros(3 * n, 3 * n);
        let sqrt3 = 3f64.sqrt();
        for br in &model.branches {
            let (Some(&ni), Some(&nj)) = (
                node_of_bus.get(br.from_bus()),
                node_of_bus.get(br.to_bus()),
            ) else {
                continue; // de-energized side
            };
            match &br.kind {
                BranchKind::Switch(_) => {} // closed ones are merged
                BranchKind::Line(l) => {
                    let z_base = 3.0 * bases[br.to_bus()] * bases[br.to_bus()] / model.s_base;
                    let z_pu = l.z / Complex64::new(z_base, 0.0);
                    let y_block = z_pu.try_inverse().ok_or_else(|| {
                        DiagError::Sim(SimError::ModelViolation(format!(
                            "line {} impedance is singular",
                            br.name
                        )))
                    })?;
                    for p in 0..3 {
                        for q in 0..3 {
                            y[(3 * ni + p, 3 * ni + q)] += y_block[(p, q)];
                            y[(3 * nj + p, 3 * nj + q)] += y_block[(p, q)];
                            y[(3 * ni + p, 3 * nj + q)] -= y_block[(p, q)];
                            y[(3 * nj + p, 3 * ni + q)] -= y_block[(p, q)];
                        }
                    }
                }
                BranchKind::Transformer(t) => {
                    let z_base = 3.0 * bases[br.to_bus()] * bases[br.to_bus()] / model.s_base;
                    let m = Matrix3::new(1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0);
                    let a_bar = (m / sqrt3).map(|x| Complex64::new(x, 0.0));
                    let d_bar = (m.transpose() / sqrt3).map(|x| Complex64::new(x, 0.0));
                    let mut z_inv = Matrix3::zeros();
                    for p in 0..3 {
                        let z_pu = t.z_abc[p] / z_base;
                        if z_pu.norm() < 1e-12 {
                            return Err(DiagError::Sim(SimError::ModelViolation(format!(
                                "transformer {} needs nonzero impedance for estimation",
                                br.name
                            ))));
                        }
                        z_inv[(p, p)] = Complex64::new(1.0, 0.0) / z_pu;
                    }
                    let hh = d_bar * z_inv * a_bar;
                    let hl = d_bar * z_inv;
                    let lh = z_inv * a_bar;
                    for p in 0..3 {
                        for q in 0..3 {
                            y[(3 * ni + p, 3 * ni + q)] += hh[(p, q)];
                            y[(3 * ni + p, 3 * nj + q)] -= hl[(p, q)];
                            y[(3 * nj + p, 3 * ni + q)] -= lh[(p, q)];
                            y[(3 * nj + p, 3 * nj + q)] += z_inv[(p, q)];
                        }
                    }
                }
            }
        }

        // no-load per-unit operating point per node
        let mut v0 = vec![Complex64::new(0.0, 0.0); 3 * n];
        for (bus, node) in &buses {
            let v = base_sol.voltage(bus)?;
            for p in 0..3 {
                v0[3 * node + p] = v[p] / v_base[*node];
            }
        }

        Ok(SeNetwork {
            nodes,
            node_of_bus,
            v_base,
            y,
            v0,
            buses,
            s_phase_base: model.s_base / 3.0,
        })
    }

    fn node(&self, bus: &str) -> Result<usize, DiagError> {
        self.node_of_bus
            .get(bus)
            .copied()
            .ok_or_else(|| DiagError::Sim(SimError::UnknownBus(bus.to_string())))
    }

    fn state_dim(&self) -> usize {
        6 * self.nodes.len()
    }

    fn estimate_from(&self, x: &DVector<f64>, sigma: &DVector<f64>) -> StateEstimate {
        let mut buses = Vec::new();
        let mut voltages = Vec::new();
        let mut sig = Vec::new();
        for (bus, node) in &self.buses {
            buses.push(bus.clone());
            let vb = self.v_base[*node];
            let mut phasors = [Phasor::zero(); 3];
            let mut s6 = [0.0f64; 6];
            for p in 0..3 {
                let re = x[6 * node + 2 * p];
                let im = x[6 * node + 2 * p + 1];
                phasors[p] = Phasor::from_complex(Complex64::new(re * vb, im * vb));
                s6[2 * p] = sigma[6 * node + 2 * p];
                s6[2 * p + 1] = sigma[6 * node + 2 * p + 1];
            }
            voltages.push(ThreePhaseSet::new(phasors[0], phasors[1], phasors[2]));
            sig.push(s6);
        }
        StateEstimate {
            buses,
            voltages,
            sigma_pu: sig,
        }
    }

    /// Complex injection currents `I = Y * V` for a rectangular state.
    fn injections(&self, x: &DVector<f64>) -> Vec<Complex64> {
        let n3 = 3 * self.nodes.len();
        let v: Vec<Complex64> = (0..n3)
            .map(|k| Complex64::new(x[2 * k], x[2 * k + 1]))
            .collect();
        (0..n3)
            .map(|k| (0..n3).map(|l| self.y[(k, l)] * v[l]).sum())
            .collect()
    }
}

fn prior_mean(net: &SeNetwork) -> DVector<f64> {
    let mut mu = DVector::zeros(net.state_dim());
    for (k, v) in net.v0.iter().enumerate() {
        mu[2 * k] = v.re;
        mu[2 * k + 1] = v.im;
    }
    mu
}

/// Gaussian conditioning of the flat-voltage prior on linear measurements:
/// direct bus voltages plus current-injection pseudo-measurements derived
/// from declared loads. Returns the posterior mean and per-entry standard
/// deviations.
pub fn linear_state_estimate(
    model: &FeederModel,
    measurements: &[VoltageMeasurement],
    pseudo: &[InjectionPseudo],
    noise: &MeasurementNoise,
    prior: &SePriors,
) -> Result<StateEstimate, DiagError> {
    let net = SeNetwork::build(model)?;
    let dim = net.state_dim();
    let mu = prior_mean(&net);
    let p_var = prior.sigma_pu * prior.sigma_pu;

    let m = 6 * measurements.len() + 6 * pseudo.len();
    if m == 0 {
        // conditioning on nothing: the prior is the answer
        let sigma = DVector::from_element(dim, prior.sigma_pu);
        return Ok(net.estimate_from(&mu, &sigma));
    }

    let mut h = DMatrix::zeros(m, dim);
    let mut z = DVector::zeros(m);
    let mut r = DMatrix::zeros(m, m);
    let mut row = 0usize;

    for meas in measurements {
        let node = net.node(&meas.bus)?;
        let vb = net.v_base[node];
        for p in 0..3 {
            let ph = meas.phasors.phase(p);
            let m_pu = ph.magnitude() / vb;
            let theta = ph.angle();
            let c = Complex64::from_polar(m_pu, theta);
            z[row] = c.re;
            z[row + 1] = c.im;
            h[(row, 6 * node + 2 * p)] = 1.0;
            h[(row + 1, 6 * node + 2 * p + 1)] = 1.0;
            // noise covariance mapped from polar to rectangular at the
            // measured operating point
            let (sm, sa) = (noise.magnitude_sigma_pu, noise.angle_sigma);
            let (ct, st) = (theta.cos(), theta.sin());
            let j = [[ct, -m_pu * st], [st, m_pu * ct]];
            for a in 0..2 {
                for b in 0..2 {
                    r[(row + a, row + b)] =
                        j[a][0] * j[b][0] * sm * sm + j[a][1] * j[b][1] * sa * sa;
                }
            }
            row += 2;
        }
    }
    for ps in pseudo {
        let node = net.node(&ps.bus)?;
        for p in 0..3 {
            let k = 3 * node + p;
            let v0 = net.v0[k];
            let s_pu = ps.s_va[p] / net.s_phase_base;
            let i_pu = (s_pu / v0).conj();
            z[row] = i_pu.re;
            z[row + 1] = i_pu.im;
            for l in 0..3 * net.nodes.len() {
                let ylk = net.y[(k, l)];
                // I_re = sum Re(y)*re - Im(y)*im ; I_im = Im(y)*re + Re(y)*im
                h[(row, 2 * l)] = ylk.re;
                h[(row, 2 * l + 1)] = -ylk.im;
                h[(row + 1, 2 * l)] = ylk.im;
                h[(row + 1, 2 * l + 1)] = ylk.re;
            }
            let sigma_i = ps.sigma_va / net.s_phase_base / v0.norm().max(1e-6);
            r[(row, row)] = sigma_i * sigma_i;
            r[(row + 1, row + 1)] = sigma_i * sigma_i;
            row += 2;
        }
    }

    // S = H P H' + R with P = p_var I
    let ht = h.transpose();
    let mut s = &h * &ht * p_var + r;
    // guard tiny asymmetries from accumulation
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let chol = s.cholesky().ok_or(DiagError::NumericallySingular)?;
    let innov = &z - &h * &mu;
    let x_hat = &mu + &ht * chol.solve(&innov) * p_var;

    // posterior variance diag: P - P H' S^-1 H P
    let hs = chol.solve(&h); // S^-1 H
    let mut sigma = DVector::zeros(dim);
    for d in 0..dim {
        let mut reduction = 0.0;
        for i in 0..m {
            reduction += h[(i, d)] * hs[(i, d)];
        }
        let var = p_var - p_var * p_var * reduction;
        sigma[d] = var.max(0.0).sqrt();
    }
    Ok(net.estimate_from(&x_hat, &sigma))
}

const WLS_MAX_ITER: usize = 50;
const WLS_TOL: f64 = 1e-9;

/// Baseline nonlinear WLS estimator: polar voltage measurements plus
/// power-injection pseudo-measurements, solved by Gauss-Newton from the
/// no-load start.
pub fn wls_state_estimate(
    model: &FeederModel,
    measurements: &[VoltageMeasurement],
    pseudo: &[InjectionPseudo],
    noise: &MeasurementNoise,
) -> Result<StateEstimate, DiagError> {
    let net = SeNetwork::build(model)?;
    let dim = net.state_dim();
    let n3 = 3 * net.nodes.len();
    let m = 6 * measurements.len() + 6 * pseudo.len();
    if m < dim {
        return Err(DiagError::Unobservable);
    }

    // measurement table: kind, node-phase, value, sigma
    enum Kind {
        Mag,
        Ang,
        InjRe,
        InjIm,
    }
    let mut rows: Vec<(Kind, usize, f64, f64)> = Vec::with_capacity(m);
    let sm = noise.magnitude_sigma_pu.max(1e-10);
    let sa = noise.angle_sigma.max(1e-10);
    for meas in measurements {
        let node = net.node(&meas.bus)?;
        let vb = net.v_base[node];
        for p in 0..3 {
            let ph = meas.phasors.phase(p);
            rows.push((Kind::Mag, 3 * node + p, ph.magnitude() / vb, sm));
            rows.push((Kind::Ang, 3 * node + p, ph.angle(), sa));
        }
    }
    for ps in pseudo {
        let node = net.node(&ps.bus)?;
        let ss = (ps.sigma_va / net.s_phase_base).max(1e-10);
        for p in 0..3 {
            let s_pu = ps.s_va[p] / net.s_phase_base;
            rows.push((Kind::InjRe, 3 * node + p, s_pu.re, ss));
            rows.push((Kind::InjIm, 3 * node + p, s_pu.im, ss));
        }
    }

    let mut x = prior_mean(&net);
    let mut converged = false;
    let mut j_w_j = DMatrix::zeros(dim, dim);
    for iter in 0..WLS_MAX_ITER {
        let v: Vec<Complex64> = (0..n3)
            .map(|k| Complex64::new(x[2 * k], x[2 * k + 1]))
            .collect();
        let inj = net.injections(&x);

        let mut jac = DMatrix::zeros(m, dim);
        let mut resid = DVector::zeros(m);
        for (ri, (kind, k, zval, sigma)) in rows.iter().enumerate() {
            let w = 1.0 / sigma;
            match kind {
                Kind::Mag => {
                    let mag = v[*k].norm().max(1e-9);
                    resid[ri] = (zval - mag) * w;
                    jac[(ri, 2 * k)] = v[*k].re / mag * w;
                    jac[(ri, 2 * k + 1)] = v[*k].im / mag * w;
                }
                Kind::Ang => {
                    let mag2 = v[*k].norm_sqr().max(1e-18);
                    let ang = v[*k].arg();
                    resid[ri] = wrap_angle(zval - ang)? * w;
                    jac[(ri, 2 * k)] = -v[*k].im / mag2 * w;
                    jac[(ri, 2 * k + 1)] = v[*k].re / mag2 * w;
                }
                Kind::InjRe | Kind::InjIm => {
                    let s = v[*k] * inj[*k].conj();
                    let h = if matches!(kind, Kind::InjRe) { s.re } else { s.im };
                    resid[ri] = (zval - h) * w;
                    for l in 0..n3 {
                        let y = net.y[(*k, l)];
                        // dS/dRe(V_l), dS/dIm(V_l)
                        let mut d_re = v[*k] * y.conj();
                        let mut d_im = v[*k] * (Complex64::i() * y).conj();
                        if l == *k {
                            d_re += inj[*k].conj();
                            d_im += Complex64::i() * inj[*k].conj();
                        }
                        let (gre, gim) = if matches!(kind, Kind::InjRe) {
                            (d_re.re, d_im.re)
                        } else {
                            (d_re.im, d_im.im)
                        };
                        jac[(ri, 2 * l)] = gre * w;
                        jac[(ri, 2 * l + 1)] = gim * w;
                    }
                }
            }
        }

        j_w_j = jac.transpose() * &jac;
        let rhs = jac.transpose() * &resid;
        let chol = match j_w_j.clone().cholesky() {
            Some(c) => c,
            None if iter == 0 => return Err(DiagError::Unobservable),
            None => return Err(DiagError::NumericallySingular),
        };
        let dx = chol.solve(&rhs);
        let step = dx.amax();
        x += dx;
        if step < WLS_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DiagError::Diverged(WLS_MAX_ITER));
    }

    // covariance of the converged estimate
    let sigma = match j_w_j.cholesky() {
        Some(chol) => {
            let inv = chol.inverse();
            DVector::from_iterator(dim, (0..dim).map(|d| inv[(d, d)].max(0.0).sqrt()))
        }
        None => DVector::zeros(dim),
    };
    Ok(net.estimate_from(&x, &sigma))
}
