//! Series-impedance estimation from synchronized phasor measurements at the
//! two ends of a line or transformer, by ordinary least squares on the
//! voltage-drop relations.
//!
//! For a line the unknown is the symmetric 3x3 impedance matrix (6 complex
//! entries) of `V1 - V2 = Z * I`; for a delta-grounded-wye transformer the
//! unknown is the diagonal of `A_t * VLN - VLG = Z * I`. The regression only
//! identifies Z when the phase currents are sufficiently distinct over time
//! (cross-phase excitation); the condition number of the stacked regressor
//! gates the solve, and balanced or idle spans are reported as
//! insufficient excitation rather than producing a garbage estimate.

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;

use super::DiagError;
use crate::phasor::Frame;
use crate::sim::{transformer_ratio_matrix, CMat3, CVec3};

/// Which voltage-drop relation the regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationProblem {
    Line,
    /// Diagonal impedance, per-phase independent equations.
    Transformer,
}

#[derive(Debug, Clone)]
pub struct ImpedanceOptions {
    /// Branch identifier carried into the estimate.
    pub branch: String,
    /// Gate: condition metrics above this threshold abort the solve.
    pub condition_threshold: f64,
    /// Ground truth for error reporting, when known.
    pub truth: Option<CMat3>,
    /// Minimum number of synchronized samples.
    pub min_samples: usize,
}

impl Default for ImpedanceOptions {
    fn default() -> Self {
        Self {
            branch: String::new(),
            condition_threshold: 1e6,
            truth: None,
            min_samples: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImpedanceEstimate {
    pub branch: String,
    pub z_hat: CMat3,
    /// Frobenius-norm relative error versus the provided truth.
    pub relative_error_norm: Option<f64>,
    /// Condition number of the stacked regressor.
    pub condition_metric: f64,
}

/// Unknown ordering for the symmetric line problem.
const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Real-valued design matrix of the line problem: 6 rows per sample
/// (re/im of three phase equations), 12 columns (re/im of the six complex
/// unknowns).
fn line_design(currents: &[CVec3]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(currents.len() * 6, 12);
    for (s, i_vec) in currents.iter().enumerate() {
        for p in 0..3 {
            for (u, &(i0, i1)) in PAIRS.iter().enumerate() {
                let coeff = if i0 == p {
                    i_vec[i1]
                } else if i1 == p {
                    i_vec[i0]
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let re_row = s * 6 + p * 2;
                let im_row = re_row + 1;
                // z_u * coeff with z_u = x + jy:
                //   Re += x*Re(c) - y*Im(c);  Im += x*Im(c) + y*Re(c)
                a[(re_row, 2 * u)] = coeff.re;
                a[(re_row, 2 * u + 1)] = -coeff.im;
                a[(im_row, 2 * u)] = coeff.im;
                a[(im_row, 2 * u + 1)] = coeff.re;
            }
        }
    }
    a
}

/// Real-valued design matrix of the transformer problem: 6 rows per sample,
/// 6 columns (re/im of the three diagonal unknowns).
fn transformer_design(currents: &[CVec3]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(currents.len() * 6, 6);
    for (s, i_vec) in currents.iter().enumerate() {
        for p in 0..3 {
            let coeff = i_vec[p];
            let re_row = s * 6 + p * 2;
            let im_row = re_row + 1;
            a[(re_row, 2 * p)] = coeff.re;
            a[(re_row, 2 * p + 1)] = -coeff.im;
            a[(im_row, 2 * p)] = coeff.im;
            a[(im_row, 2 * p + 1)] = coeff.re;
        }
    }
    a
}

fn condition_of(a: &DMatrix<f64>) -> f64 {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= smax * 1e-300 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Condition number of the stacked OLS regressor built from a current
/// series. Estimation gates on this metric; all-zero currents report as
/// infinite.
pub fn excitation_condition(currents: &[CVec3], problem: ExcitationProblem) -> f64 {
    if currents.len() < 2 {
        return f64::INFINITY;
    }
    let a = match problem {
        ExcitationProblem::Line => line_design(currents),
        ExcitationProblem::Transformer => transformer_design(currents),
    };
    condition_of(&a)
}

/// Inner-join two frame series on identical timestamps.
fn join_frames<'a>(a: &'a [Frame], b: &'a [Frame]) -> Vec<(&'a Frame, &'a Frame)> {
    let mut out = Vec::new();
    let mut j = 0usize;
    for fa in a {
        while j < b.len() && b[j].timestamp_ns < fa.timestamp_ns {
            j += 1;
        }
        if j < b.len() && b[j].timestamp_ns == fa.timestamp_ns {
            out.push((fa, &b[j]));
        }
    }
    out
}

fn solve_ols(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    condition_threshold: f64,
) -> Result<(DVector<f64>, f64), DiagError> {
    let cond = condition_of(a);
    if !cond.is_finite() || cond > condition_threshold {
        return Err(DiagError::InsufficientExcitation { condition: cond });
    }
    // thin QR: backward-stable least squares once the gate has passed
    let qr = a.clone().qr();
    let rhs = qr.q().transpose() * b;
    let r = qr.r();
    r.solve_upper_triangular(&rhs)
        .ok_or(DiagError::NumericallySingular)
        .map(|x| (x, cond))
}

fn frobenius(m: &CMat3) -> f64 {
    let mut s = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            s += m[(r, c)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Estimate the symmetric 3x3 series impedance of a line from synchronized
/// frames at its two ends. Currents are taken from the downstream
/// (`frames_end2`) meter, which measures the branch itself.
pub fn estimate_line_impedance(
    frames_end1: &[Frame],
    frames_end2: &[Frame],
    opts: &ImpedanceOptions,
) -> Result<ImpedanceEstimate, DiagError> {
    let joined = join_frames(frames_end1, frames_end2);
    if joined.len() < opts.min_samples {
        return Err(DiagError::InsufficientData {
            need: opts.min_samples,
            got: joined.len(),
        });
    }
    let currents: Vec<CVec3> = joined
        .iter()
        .map(|(_, f2)| {
            let i = f2.current.to_complex();
            CVec3::new(i[0], i[1], i[2])
        })
        .collect();
    let a = line_design(&currents);
    let mut b = DVector::zeros(joined.len() * 6);
    for (s, (f1, f2)) in joined.iter().enumerate() {
        let v1 = f1.voltage.to_complex();
        let v2 = f2.voltage.to_complex();
        for p in 0..3 {
            let lhs = v1[p] - v2[p];
            b[s * 6 + p * 2] = lhs.re;
            b[s * 6 + p * 2 + 1] = lhs.im;
        }
    }
    let (x, cond) = solve_ols(&a, &b, opts.condition_threshold)?;

    let mut z_hat = Matrix3::zeros();
    for (u, &(i0, i1)) in PAIRS.iter().enumerate() {
        let z = Complex64::new(x[2 * u], x[2 * u + 1]);
        z_hat[(i0, i1)] = z;
        z_hat[(i1, i0)] = z;
    }
    let relative_error_norm = opts
        .truth
        .as_ref()
        .map(|t| frobenius(&(z_hat - t)) / frobenius(t));
    Ok(ImpedanceEstimate {
        branch: opts.branch.clone(),
        z_hat,
        relative_error_norm,
        condition_metric: cond,
    })
}

/// Estimate the diagonal low-side impedance of a delta-grounded-wye
/// transformer with known ratio from synchronized frames on both sides.
pub fn estimate_transformer_impedance(
    frames_high: &[Frame],
    frames_low: &[Frame],
    n_t: f64,
    opts: &ImpedanceOptions,
) -> Result<ImpedanceEstimate, DiagError> {
    let a_t = transformer_ratio_matrix(n_t)?;
    let joined = join_frames(frames_high, frames_low);
    if joined.len() < opts.min_samples {
        return Err(DiagError::InsufficientData {
            need: opts.min_samples,
            got: joined.len(),
        });
    }
    let currents: Vec<CVec3> = joined
        .iter()
        .map(|(_, fl)| {
            let i = fl.current.to_complex();
            CVec3::new(i[0], i[1], i[2])
        })
        .collect();
    let a = transformer_design(&currents);
    let mut b = DVector::zeros(joined.len() * 6);
    for (s, (fh, fl)) in joined.iter().enumerate() {
        let vh = fh.voltage.to_complex();
        let vl = fl.voltage.to_complex();
        for p in 0..3 {
            let ideal: Complex64 = (0..3).map(|q| a_t[(p, q)] * vh[q]).sum();
            let lhs = ideal - vl[p];
            b[s * 6 + p * 2] = lhs.re;
            b[s * 6 + p * 2 + 1] = lhs.im;
        }
    }
    let (x, cond) = solve_ols(&a, &b, opts.condition_threshold)?;

    let mut z_hat = Matrix3::zeros();
    for p in 0..3 {
        z_hat[(p, p)] = Complex64::new(x[2 * p], x[2 * p + 1]);
    }
    let relative_error_norm = opts
        .truth
        .as_ref()
        .map(|t| frobenius(&(z_hat - t)) / frobenius(t));
    Ok(ImpedanceEstimate {
        branch: opts.branch.clone(),
        z_hat,
        relative_error_norm,
        condition_metric: cond,
    })
}
