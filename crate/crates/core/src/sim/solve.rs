//! Radial power-flow solver: forward-backward sweep over the energized tree.

use std::collections::HashMap;

use num_complex::Complex64;

use super::{
    real_to_complex, transformer_current_matrix, transformer_ratio_matrix, BranchKind,
    CVec3, FeederModel, LoadModel, SimError,
};

const MAX_ITERATIONS: usize = 100;
/// Contractual convergence threshold on the largest per-unit voltage update.
const CONVERGENCE_PU: f64 = 1e-9;
/// Internal target; iterating further keeps branch residuals small even with
/// stiff fault shunts, where current errors are voltage errors times 1/z.
const TIGHT_PU: f64 = 1e-13;

/// Below this per-unit voltage a constant-power load is current-limited, so
/// depressed fault voltages do not blow up the sweep.
const LOW_VOLTAGE_CLAMP_PU: f64 = 0.3;

pub(crate) struct Tree {
    pub bus_names: Vec<String>,
    pub bus_index: HashMap<String, usize>,
    /// Energized branch indices in breadth-first (source-out) order.
    pub branch_order: Vec<usize>,
    /// Per branch: (parent bus, child bus, reversed w.r.t. declaration).
    pub orientation: Vec<Option<(usize, usize, bool)>>,
    pub energized: Vec<bool>,
}

pub(crate) fn build_tree(model: &FeederModel) -> Result<Tree, SimError> {
    let bus_names = model.buses();
    let bus_index: HashMap<String, usize> = bus_names
        .iter()
        .enumerate()
        .map(|(i, b)| (b.clone(), i))
        .collect();
    let source = *bus_index
        .get(&model.source.bus)
        .ok_or_else(|| SimError::UnknownBus(model.source.bus.clone()))?;

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); bus_names.len()];
    for (bi, br) in model.branches.iter().enumerate() {
        if br.conducts() {
            adj[bus_index[br.from_bus()]].push(bi);
            adj[bus_index[br.to_bus()]].push(bi);
        }
    }

    let mut energized = vec![false; bus_names.len()];
    let mut orientation: Vec<Option<(usize, usize, bool)>> = vec![None; model.branches.len()];
    let mut branch_order = Vec::new();
    let mut queue = std::collections::VecDeque::from([source]);
    energized[source] = true;
    let mut entered_via: Vec<Option<usize>> = vec![None; bus_names.len()];
    while let Some(u) = queue.pop_front() {
        for &bi in &adj[u] {
            if entered_via[u] == Some(bi) {
                continue;
            }
            let br = &model.branches[bi];
            let (from, to) = (bus_index[br.from_bus()], bus_index[br.to_bus()]);
            let v = if from == u { to } else { from };
            if energized[v] {
                return Err(SimError::NotRadial(bus_names[v].clone()));
            }
            let reversed = to == u;
            if reversed {
                if let BranchKind::Transformer(_) = br.kind {
                    return Err(SimError::ModelViolation(format!(
                        "transformer {} has its low side facing the source",
                        br.name
                    )));
                }
            }
            energized[v] = true;
            entered_via[v] = Some(bi);
            orientation[bi] = Some((u, v, reversed));
            branch_order.push(bi);
            queue.push_back(v);
        }
    }

    Ok(Tree {
        bus_names,
        bus_index,
        branch_order,
        orientation,
        energized,
    })
}

/// Converged bus voltages and branch currents for one feeder state.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub bus_names: Vec<String>,
    pub bus_index: HashMap<String, usize>,
    /// Line-to-neutral (or line-to-ground) volts per bus; zero when
    /// de-energized.
    pub voltages: Vec<CVec3>,
    /// Per declared branch, current in the declared from->to direction,
    /// measured at the to side (for transformers: the low-side current).
    pub branch_currents: Vec<CVec3>,
    /// Current entering each bus from its source-side branch; for the source
    /// bus this is the total feeder head current.
    pub bus_inflow: Vec<CVec3>,
    pub energized: Vec<bool>,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: &str) -> Result<CVec3, SimError> {
        self.bus_index
            .get(bus)
            .map(|&i| self.voltages[i])
            .ok_or_else(|| SimError::UnknownBus(bus.to_string()))
    }

    pub fn inflow(&self, bus: &str) -> Result<CVec3, SimError> {
        self.bus_index
            .get(bus)
            .map(|&i| self.bus_inflow[i])
            .ok_or_else(|| SimError::UnknownBus(bus.to_string()))
    }

    pub fn branch_current(&self, model: &FeederModel, name: &str) -> Result<CVec3, SimError> {
        let idx = model
            .branches
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| SimError::UnknownBranch(name.to_string()))?;
        Ok(self.branch_currents[idx])
    }
}

fn load_current(load: Option<&LoadModel>, v: &CVec3, v_base: f64) -> CVec3 {
    let mut i = CVec3::zeros();
    let Some(load) = load else {
        return i;
    };
    match load {
        LoadModel::ConstantPower(s) => {
            let floor = LOW_VOLTAGE_CLAMP_PU * v_base;
            for p in 0..3 {
                let vp = v[p];
                if vp.norm() >= floor {
                    i[p] = (s[p] / vp).conj();
                } else {
                    // Below the clamp the load reverts to the equivalent
                    // impedance at the clamp voltage (continuous at the
                    // boundary, current vanishes with the voltage), which
                    // keeps the sweep stable under depressed fault voltages.
                    i[p] = vp * s[p].conj() / (floor * floor);
                }
            }
        }
        LoadModel::ConstantCurrent(c) => i = *c,
        LoadModel::ConstantImpedance(z) => {
            for p in 0..3 {
                if z[p].is_finite() && z[p].norm() > 0.0 {
                    i[p] = v[p] / z[p];
                }
            }
        }
    }
    i
}

/// Solve the feeder by forward-backward sweep, iterating until the largest
/// per-unit voltage update falls below 1e-9.
pub fn solve_power_flow(model: &FeederModel) -> Result<PowerFlowSolution, SimError> {
    let tree = build_tree(model)?;
    let bases = model.voltage_bases()?;
    let n = tree.bus_names.len();
    let source = tree.bus_index[&model.source.bus];
    let v_base: Vec<f64> = tree.bus_names.iter().map(|b| bases[b]).collect();

    // Branch operators in tree orientation.
    enum Op {
        Series(super::CMat3),
        Closed,
        Xfmr { a_t: super::CMat3, d_t: super::CMat3, z: CVec3 },
    }
    let mut ops: Vec<Option<Op>> = Vec::with_capacity(model.branches.len());
    for (bi, br) in model.branches.iter().enumerate() {
        let op = match tree.orientation[bi] {
            None => None,
            Some(_) => Some(match &br.kind {
                BranchKind::Line(l) => Op::Series(l.z),
                BranchKind::Switch(_) => Op::Closed,
                BranchKind::Transformer(t) => Op::Xfmr {
                    a_t: real_to_complex(&transformer_ratio_matrix(t.n_t)?),
                    d_t: real_to_complex(&transformer_current_matrix(t.n_t)?),
                    z: t.z_abc,
                },
            }),
        };
        ops.push(op);
    }

    let mut v = vec![CVec3::zeros(); n];
    v[source] = model.source.voltages();
    // Initial forward pass with zero current.
    for &bi in &tree.branch_order {
        let (p, c, _) = tree.orientation[bi].unwrap();
        v[c] = match ops[bi].as_ref().unwrap() {
            Op::Series(_) | Op::Closed => v[p],
            Op::Xfmr { a_t, .. } => a_t * v[p],
        };
    }

    let loads: Vec<Option<&LoadModel>> = tree
        .bus_names
        .iter()
        .map(|b| model.loads.get(b))
        .collect();
    // Constant-impedance shunts (bolted-fault shunts in particular) are too
    // stiff for the plain sweep: their current is voltage-times-1/z, and the
    // stale-voltage iteration diverges whenever an upstream impedance exceeds
    // the shunt's. They are handled by compensation instead: each shunt is
    // replaced by a constant-current injection, corrected in an outer loop
    // through the Thevenin impedance of its path to the source.
    let nonshunt = |b: usize, v: &CVec3| -> CVec3 {
        match loads[b] {
            Some(LoadModel::ConstantImpedance(_)) | None => CVec3::zeros(),
            other => load_current(other, v, v_base[b]),
        }
    };
    let shunt_z: Vec<Option<&CVec3>> = loads
        .iter()
        .map(|l| match l {
            Some(LoadModel::ConstantImpedance(z)) => Some(z),
            _ => None,
        })
        .collect();
    let shunt_buses: Vec<usize> = (0..n)
        .filter(|&b| {
            tree.energized[b]
                && shunt_z[b]
                    .map(|z| (0..3).any(|p| z[p].is_finite() && z[p].norm() > 0.0))
                    .unwrap_or(false)
        })
        .collect();

    // Thevenin series impedance (3x3) of each shunt bus's path to the source.
    let mut parent_edge: Vec<Option<usize>> = vec![None; n];
    for &bi in &tree.branch_order {
        let (_, c, _) = tree.orientation[bi].unwrap();
        parent_edge[c] = Some(bi);
    }
    let z_thevenin = |bus: usize| -> super::CMat3 {
        let mut path = Vec::new();
        let mut cur = bus;
        while let Some(bi) = parent_edge[cur] {
            path.push(bi);
            cur = tree.orientation[bi].unwrap().0;
        }
        path.reverse();
        let mut z_th = super::CMat3::zeros();
        for bi in path {
            match ops[bi].as_ref().unwrap() {
                Op::Series(z) => z_th += z,
                Op::Closed => {}
                Op::Xfmr { a_t, d_t, z } => {
                    let mut low = a_t * z_th * d_t;
                    for p in 0..3 {
                        low[(p, p)] += z[p];
                    }
                    z_th = low;
                }
            }
        }
        z_th
    };
    let shunt_thevenin: Vec<(usize, super::CMat3)> = shunt_buses
        .iter()
        .map(|&b| (b, z_thevenin(b)))
        .collect();

    // Compensation currents, nonzero only on shunt buses.
    let mut comp = vec![CVec3::zeros(); n];

    let backward = |v: &[CVec3], comp: &[CVec3], flow: &mut [CVec3]| {
        let mut acc: Vec<CVec3> = (0..n)
            .map(|b| {
                if tree.energized[b] {
                    nonshunt(b, &v[b]) + comp[b]
                } else {
                    CVec3::zeros()
                }
            })
            .collect();
        for &bi in tree.branch_order.iter().rev() {
            let (p, c, _) = tree.orientation[bi].unwrap();
            flow[bi] = acc[c];
            let up = match ops[bi].as_ref().unwrap() {
                Op::Series(_) | Op::Closed => acc[c],
                Op::Xfmr { d_t, .. } => d_t * acc[c],
            };
            acc[p] += up;
        }
        acc[source]
    };

    let mut flow = vec![CVec3::zeros(); model.branches.len()];
    let mut iterations = 0usize;

    // Inner sweep at fixed compensation currents.
    let inner = |v: &mut Vec<CVec3>, comp: &[CVec3], flow: &mut [CVec3], iterations: &mut usize|
     -> Result<(), SimError> {
        let mut last_delta = f64::INFINITY;
        for _ in 0..MAX_ITERATIONS {
            *iterations += 1;
            backward(v, comp, flow);
            let mut delta = 0.0f64;
            for &bi in &tree.branch_order {
                let (p, c, _) = tree.orientation[bi].unwrap();
                let nv = match ops[bi].as_ref().unwrap() {
                    Op::Series(z) => v[p] - z * flow[bi],
                    Op::Closed => v[p],
                    Op::Xfmr { a_t, z, .. } => {
                        let mut o = a_t * v[p];
                        for ph in 0..3 {
                            o[ph] -= z[ph] * flow[bi][ph];
                        }
                        o
                    }
                };
                for ph in 0..3 {
                    delta = delta.max((nv[ph] - v[c][ph]).norm() / v_base[c]);
                }
                v[c] = nv;
            }
            last_delta = delta;
            if delta < TIGHT_PU {
                break;
            }
        }
        // NaN-safe: anything not strictly below the threshold is divergence.
        if last_delta < CONVERGENCE_PU {
            Ok(())
        } else {
            Err(SimError::Diverged(MAX_ITERATIONS))
        }
    };

    if shunt_buses.is_empty() {
        inner(&mut v, &comp, &mut flow, &mut iterations)?;
    } else {
        const OUTER_MAX: usize = 40;
        const SHUNT_TOL_PU: f64 = 1e-9;
        let mut settled = false;
        for _ in 0..OUTER_MAX {
            inner(&mut v, &comp, &mut flow, &mut iterations)?;
            // residual of the shunt law in per-unit current
            let mut worst = 0.0f64;
            for (b, _) in &shunt_thevenin {
                let z = shunt_z[*b].unwrap();
                let i_base = model.s_base / (3.0 * v_base[*b]);
                for p in 0..3 {
                    if z[p].is_finite() && z[p].norm() > 0.0 {
                        let r = (v[*b][p] - z[p] * comp[*b][p]).norm() / (z[p].norm() * i_base);
                        worst = worst.max(r);
                    }
                }
            }
            if worst < SHUNT_TOL_PU {
                settled = true;
                break;
            }
            // Thevenin correction: I' = (Z_th + Z_sh)^-1 (V + Z_th I) on the
            // shunted phases.
            for (b, z_th) in &shunt_thevenin {
                let z = shunt_z[*b].unwrap();
                let phases: Vec<usize> = (0..3)
                    .filter(|&p| z[p].is_finite() && z[p].norm() > 0.0)
                    .collect();
                let v_oc = v[*b] + z_th * comp[*b];
                let k = phases.len();
                let mut a = nalgebra::DMatrix::<Complex64>::zeros(k, k);
                let mut rhs = nalgebra::DVector::<Complex64>::zeros(k);
                for (ri, &p) in phases.iter().enumerate() {
                    for (ci, &q) in phases.iter().enumerate() {
                        a[(ri, ci)] = z_th[(p, q)];
                    }
                    a[(ri, ri)] += z[p];
                    rhs[ri] = v_oc[p];
                }
                let sol = a
                    .lu()
                    .solve(&rhs)
                    .ok_or(SimError::Diverged(MAX_ITERATIONS))?;
                let mut next = CVec3::zeros();
                for (ri, &p) in phases.iter().enumerate() {
                    next[p] = sol[ri];
                }
                comp[*b] = next;
            }
        }
        if !settled {
            return Err(SimError::Diverged(MAX_ITERATIONS));
        }
    }

    // Final pass: recompute all flows from the converged voltages, so that
    // Kirchhoff's current law holds exactly against the stored solution.
    // Shunt loads keep their exact V/z law here; the compensation loop has
    // driven it to agree with the injected currents.
    let final_backward = |v: &[CVec3], flow: &mut [CVec3]| {
        let mut acc: Vec<CVec3> = (0..n)
            .map(|b| {
                if tree.energized[b] {
                    load_current(loads[b], &v[b], v_base[b])
                } else {
                    CVec3::zeros()
                }
            })
            .collect();
        for &bi in tree.branch_order.iter().rev() {
            let (p, c, _) = tree.orientation[bi].unwrap();
            flow[bi] = acc[c];
            let up = match ops[bi].as_ref().unwrap() {
                Op::Series(_) | Op::Closed => acc[c],
                Op::Xfmr { d_t, .. } => d_t * acc[c],
            };
            acc[p] += up;
        }
        acc[source]
    };
    let head = final_backward(&v, &mut flow);
    let mut inflow = vec![CVec3::zeros(); n];
    inflow[source] = head;
    for &bi in &tree.branch_order {
        let (_, c, _) = tree.orientation[bi].unwrap();
        inflow[c] = flow[bi];
    }

    // Declared-direction branch currents.
    let mut branch_currents = vec![CVec3::zeros(); model.branches.len()];
    for (bi, orient) in tree.orientation.iter().enumerate() {
        if let Some((_, _, reversed)) = orient {
            branch_currents[bi] = if *reversed { -flow[bi] } else { flow[bi] };
        }
    }

    Ok(PowerFlowSolution {
        bus_names: tree.bus_names,
        bus_index: tree.bus_index,
        voltages: v,
        branch_currents,
        bus_inflow: inflow,
        energized: tree.energized,
        iterations,
    })
}

/// Largest per-unit residual of the solution: branch voltage equations,
/// open-switch currents, and Kirchhoff's current law at every energized bus.
pub fn verify_solution(model: &FeederModel, sol: &PowerFlowSolution) -> Result<f64, SimError> {
    let bases = model.voltage_bases()?;
    let tree = build_tree(model)?;
    let mut worst = 0.0f64;
    let mut net: Vec<CVec3> = sol.bus_inflow.clone();

    for (bi, br) in model.branches.iter().enumerate() {
        let fi = sol.bus_index[br.from_bus()];
        let ti = sol.bus_index[br.to_bus()];
        let i = sol.branch_currents[bi];
        let vb = bases[br.to_bus()];
        let i_base = model.s_base / (3.0 * vb);
        match &br.kind {
            BranchKind::Line(l) => {
                if sol.energized[fi] && sol.energized[ti] {
                    let r = sol.voltages[fi] - sol.voltages[ti] - l.z * i;
                    for p in 0..3 {
                        worst = worst.max(r[p].norm() / vb);
                    }
                }
            }
            BranchKind::Transformer(t) => {
                if sol.energized[fi] && sol.energized[ti] {
                    let a_t = real_to_complex(&transformer_ratio_matrix(t.n_t)?);
                    let mut r = a_t * sol.voltages[fi] - sol.voltages[ti];
                    for p in 0..3 {
                        r[p] -= t.z_abc[p] * i[p];
                        worst = worst.max(r[p].norm() / vb);
                    }
                }
            }
            BranchKind::Switch(s) => {
                if s.status == super::SwitchStatus::Closed
                    && sol.energized[fi]
                    && sol.energized[ti]
                {
                    let r = sol.voltages[fi] - sol.voltages[ti];
                    for p in 0..3 {
                        worst = worst.max(r[p].norm() / vb);
                    }
                } else {
                    for p in 0..3 {
                        worst = worst.max(i[p].norm() / i_base);
                    }
                }
            }
        }
        // KCL bookkeeping: subtract what each branch carries away from its
        // source-side bus.
        if let Some((parent, _, reversed)) = tree.orientation[bi] {
            let flow_child_side = if reversed { -i } else { i };
            let up = match &br.kind {
                BranchKind::Transformer(t) => {
                    real_to_complex(&transformer_current_matrix(t.n_t)?) * flow_child_side
                }
                _ => flow_child_side,
            };
            net[parent] -= up;
        }
    }

    for (b, name) in sol.bus_names.iter().enumerate() {
        if !sol.energized[b] {
            continue;
        }
        let vb = bases[name];
        let i_base = model.s_base / (3.0 * vb);
        let load = load_current(model.loads.get(name), &sol.voltages[b], vb);
        for p in 0..3 {
            worst = worst.max((net[b][p] - load[p]).norm() / i_base);
        }
    }
    Ok(worst)
}
