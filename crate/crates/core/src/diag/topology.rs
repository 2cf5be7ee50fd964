//! Model-based topology verification: vote, per time sample, for the switch
//! configuration whose power-flow prediction is closest to the measured
//! meter voltages.

use std::collections::BTreeMap;

use super::DiagError;
use crate::phasor::{angle_diff, Frame};
use crate::sim::{
    solve_power_flow, BranchKind, CVec3, FeederModel, LoadModel, SwitchStatus,
};

/// One candidate switch configuration, keyed by switch branch name.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyHypothesis {
    pub id: String,
    pub switch_status: BTreeMap<String, SwitchStatus>,
}

/// Distance between predicted and measured voltages (per phase, per-unit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualMetric {
    #[default]
    Complex,
    AngleOnly,
    MagnitudeOnly,
}

#[derive(Debug, Clone)]
pub struct VotingOptions {
    pub metric: ResidualMetric,
    pub min_samples: usize,
}

impl Default for VotingOptions {
    fn default() -> Self {
        Self {
            metric: ResidualMetric::Complex,
            min_samples: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VotingOutcome {
    pub winner: String,
    /// Vote share per hypothesis, in input order.
    pub shares: Vec<(String, f64)>,
    pub votes: Vec<(String, usize)>,
    /// Hypotheses removed because their power flow failed, with the reason.
    pub disqualified: Vec<(String, String)>,
}

/// Per time sample, compute predicted meter voltages under each hypothesis
/// (loads back-inferred from measured currents at leaf meters, declared
/// pseudo-loads elsewhere) and give the sample's vote to the hypothesis with
/// the smallest residual. The winner takes the plurality.
pub fn detect_topology_voting(
    model: &FeederModel,
    hypotheses: &[TopologyHypothesis],
    frames: &BTreeMap<String, Vec<Frame>>,
    pseudo_loads: &BTreeMap<String, CVec3>,
    opts: &VotingOptions,
) -> Result<VotingOutcome, DiagError> {
    if hypotheses.len() < 2 {
        return Err(DiagError::InsufficientData {
            need: 2,
            got: hypotheses.len(),
        });
    }
    let meters: Vec<&String> = frames.keys().collect();
    if meters.is_empty() {
        return Err(DiagError::InsufficientData { need: 1, got: 0 });
    }
    let n_samples = frames.values().map(|f| f.len()).min().unwrap_or(0);
    if n_samples < opts.min_samples {
        return Err(DiagError::InsufficientData {
            need: opts.min_samples,
            got: n_samples,
        });
    }
    let bases = model.voltage_bases()?;

    // hypothesis-specific models with pseudo loads installed
    let mut candidates = Vec::with_capacity(hypotheses.len());
    let mut disqualified: Vec<(String, String)> = Vec::new();
    for hyp in hypotheses {
        let mut m = model.clone();
        for (switch, status) in &hyp.switch_status {
            match &mut m.branch_mut(switch)?.kind {
                BranchKind::Switch(sw) => sw.status = *status,
                _ => {
                    return Err(DiagError::Sim(crate::sim::SimError::UnknownBranch(format!(
                        "{switch} is not a switch"
                    ))))
                }
            }
        }
        m.loads = pseudo_loads
            .iter()
            .map(|(bus, s)| (bus.clone(), LoadModel::ConstantPower(*s)))
            .collect();
        // leaf meters: exactly one conducting branch touches the bus
        let leaf_meters: Vec<String> = meters
            .iter()
            .filter(|meter| {
                if ***meter == m.source.bus {
                    return false;
                }
                let degree = m
                    .branches
                    .iter()
                    .filter(|b| {
                        let conducts = match &b.kind {
                            BranchKind::Switch(s) => s.status == SwitchStatus::Closed,
                            _ => true,
                        };
                        conducts && (b.from_bus() == **meter || b.to_bus() == **meter)
                    })
                    .count();
                degree == 1
            })
            .map(|m| (*m).clone())
            .collect();
        candidates.push((hyp.id.clone(), m, leaf_meters, true));
    }

    let mut votes = vec![0usize; hypotheses.len()];
    for s in 0..n_samples {
        let mut best: Option<(usize, f64)> = None;
        for (ci, (id, m, leaf_meters, alive)) in candidates.iter_mut().enumerate() {
            if !*alive {
                continue;
            }
            // back-infer loads at leaf meters from measured currents
            let mut m_s = m.clone();
            for leaf in leaf_meters.iter() {
                let f = &frames[leaf][s];
                let i = f.current.to_complex();
                m_s.loads
                    .insert(leaf.clone(), LoadModel::ConstantCurrent(CVec3::new(i[0], i[1], i[2])));
            }
            let sol = match solve_power_flow(&m_s) {
                Ok(sol) => sol,
                Err(e) => {
                    *alive = false;
                    disqualified.push((id.clone(), e.to_string()));
                    continue;
                }
            };
            let mut residual = 0.0;
            for meter in &meters {
                let f = &frames[*meter][s];
                let pred = sol.voltage(meter)?;
                let vb = bases[*meter];
                for p in 0..3 {
                    let meas = f.voltage.phase(p);
                    residual += match opts.metric {
                        ResidualMetric::Complex => {
                            ((pred[p] - meas.to_complex()) / vb).norm_sqr()
                        }
                        ResidualMetric::AngleOnly => {
                            let d = angle_diff(pred[p].arg(), meas.angle())?;
                            d * d
                        }
                        ResidualMetric::MagnitudeOnly => {
                            let d = (pred[p].norm() - meas.magnitude()) / vb;
                            d * d
                        }
                    };
                }
            }
            let better = match best {
                None => true,
                Some((_, b)) => residual < b,
            };
            if better {
                best = Some((ci, residual));
            }
        }
        if let Some((ci, _)) = best {
            votes[ci] += 1;
        }
    }

    if candidates.iter().all(|(_, _, _, alive)| !alive) {
        let reasons = disqualified
            .iter()
            .map(|(id, e)| format!("{id}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(DiagError::HypothesesInfeasible(reasons));
    }

    let max_votes = *votes.iter().max().expect("nonempty");
    let winners: Vec<usize> = (0..votes.len()).filter(|&i| votes[i] == max_votes).collect();
    if winners.len() > 1 {
        return Err(DiagError::AmbiguousTopology(
            winners.iter().map(|&i| hypotheses[i].id.clone()).collect(),
        ));
    }
    let total: usize = votes.iter().sum();
    Ok(VotingOutcome {
        winner: hypotheses[winners[0]].id.clone(),
        shares: hypotheses
            .iter()
            .zip(&votes)
            .map(|(h, &v)| (h.id.clone(), v as f64 / total.max(1) as f64))
            .collect(),
        votes: hypotheses
            .iter()
            .zip(&votes)
            .map(|(h, &v)| (h.id.clone(), v))
            .collect(),
        disqualified,
    })
}
