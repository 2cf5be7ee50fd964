//! Built-in distiller kernels and the time-aligned join.
//!
//! Kernels are pure: the output over a chunk is a deterministic function of
//! the input points in `[chunk_start - lag - tol, chunk_end + tol)`. Output
//! timestamps are the primary (first) input's timestamps inside the chunk,
//! so recomputing a chunk can only rewrite values, never orphan points.

use serde::{Deserialize, Serialize};

use crate::phasor::wrap_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// Copy the single input stream.
    Identity,
    /// Wrapped angle difference of two angle streams (radians).
    AngleDiff,
    /// Pearson correlation of two magnitude streams over a trailing window.
    MagnitudeCorrelation { window_ns: i64 },
    /// Per-phase real power Re(V * conj(I)) from
    /// `[V_mag, V_ang, I_mag, I_ang]` of one phase (watts).
    RealPower,
    /// Frequency deviation proxy: least-squares slope of the unwrapped angle
    /// over a trailing window, divided by 2*pi (hertz).
    FreqDeviation { window_ns: i64 },
    /// Test hook: behaves as identity but fails on chunks overlapping
    /// `[start, end)`.
    #[doc(hidden)]
    FailInRange { start: i64, end: i64 },
}

impl Kernel {
    pub fn arity(&self) -> usize {
        match self {
            Kernel::Identity | Kernel::FreqDeviation { .. } | Kernel::FailInRange { .. } => 1,
            Kernel::AngleDiff | Kernel::MagnitudeCorrelation { .. } => 2,
            Kernel::RealPower => 4,
        }
    }

    /// Smallest admissible lookback for this kernel.
    pub fn min_lag_ns(&self) -> i64 {
        match self {
            Kernel::MagnitudeCorrelation { window_ns } | Kernel::FreqDeviation { window_ns } => {
                *window_ns
            }
            _ => 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("kernel failure: {0}")]
pub struct KernelError(pub String);

/// Nearest-timestamp value within `tol`, or None.
fn nearest(series: &[(i64, f64)], t: i64, tol: i64) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let idx = series.partition_point(|p| p.0 < t);
    let mut best: Option<(i64, f64)> = None;
    for cand in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
        if let Some(&(ts, v)) = series.get(cand) {
            let d = (ts - t).abs();
            if d <= tol && best.map(|(bd, _)| d < bd).unwrap_or(true) {
                best = Some((d, v));
            }
        }
    }
    best.map(|(_, v)| v)
}

pub(crate) struct KernelOutput {
    pub points: Vec<(i64, f64)>,
    pub skipped: u64,
}

/// Evaluate `kernel` over one chunk. `inputs[k]` holds the points of input k
/// over the fetched range (chunk plus lookback and tolerance), ascending.
pub(crate) fn eval(
    kernel: &Kernel,
    inputs: &[Vec<(i64, f64)>],
    chunk_start: i64,
    chunk_end: i64,
    tol: i64,
) -> Result<KernelOutput, KernelError> {
    let primary = &inputs[0];
    let lo = primary.partition_point(|p| p.0 < chunk_start);
    let hi = primary.partition_point(|p| p.0 < chunk_end);
    let mut points = Vec::with_capacity(hi - lo);
    let mut skipped = 0u64;

    match kernel {
        Kernel::Identity => {
            points.extend_from_slice(&primary[lo..hi]);
        }
        Kernel::FailInRange { start, end } => {
            if primary[lo..hi].iter().any(|p| p.0 >= *start && p.0 < *end) {
                return Err(KernelError(format!(
                    "scripted failure in [{start}, {end})"
                )));
            }
            points.extend_from_slice(&primary[lo..hi]);
        }
        Kernel::AngleDiff => {
            for &(t, a) in &primary[lo..hi] {
                match nearest(&inputs[1], t, tol) {
                    Some(b) => points.push((
                        t,
                        wrap_angle(a - b).map_err(|e| KernelError(e.to_string()))?,
                    )),
                    None => skipped += 1,
                }
            }
        }
        Kernel::RealPower => {
            for &(t, v_mag) in &primary[lo..hi] {
                let v_ang = nearest(&inputs[1], t, tol);
                let i_mag = nearest(&inputs[2], t, tol);
                let i_ang = nearest(&inputs[3], t, tol);
                match (v_ang, i_mag, i_ang) {
                    (Some(va), Some(im), Some(ia)) => {
                        points.push((t, v_mag * im * (va - ia).cos()));
                    }
                    _ => skipped += 1,
                }
            }
        }
        Kernel::MagnitudeCorrelation { window_ns } => {
            // Join once over the fetched range, then slide the window.
            let mut joined: Vec<(i64, f64, f64)> = Vec::with_capacity(primary.len());
            for &(t, x) in primary.iter() {
                match nearest(&inputs[1], t, tol) {
                    Some(y) => joined.push((t, x, y)),
                    None => {
                        if t >= chunk_start && t < chunk_end {
                            skipped += 1;
                        }
                    }
                }
            }
            for &(t, _, _) in joined.iter() {
                if t < chunk_start || t >= chunk_end {
                    continue;
                }
                let w0 = joined.partition_point(|p| p.0 < t - window_ns);
                let w1 = joined.partition_point(|p| p.0 <= t);
                let window = &joined[w0..w1];
                if window.len() < 3 {
                    continue;
                }
                if let Some(r) = pearson(window.iter().map(|p| (p.1, p.2))) {
                    points.push((t, r));
                }
            }
        }
        Kernel::FreqDeviation { window_ns } => {
            for &(t, _) in &primary[lo..hi] {
                let w0 = primary.partition_point(|p| p.0 < t - window_ns);
                let w1 = primary.partition_point(|p| p.0 <= t);
                let window = &primary[w0..w1];
                if window.len() < 2 {
                    continue;
                }
                // unwrap the angle from the window start, then fit a slope
                let t0 = window[0].0;
                let mut unwrapped = Vec::with_capacity(window.len());
                let mut acc = window[0].1;
                unwrapped.push(((window[0].0 - t0) as f64 * 1e-9, acc));
                for pair in window.windows(2) {
                    let d = wrap_angle(pair[1].1 - pair[0].1)
                        .map_err(|e| KernelError(e.to_string()))?;
                    acc += d;
                    unwrapped.push(((pair[1].0 - t0) as f64 * 1e-9, acc));
                }
                let slope = lsq_slope(&unwrapped);
                points.push((t, slope / (2.0 * std::f64::consts::PI)));
            }
        }
    }
    Ok(KernelOutput { points, skipped })
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let n = pairs.clone().count() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in pairs.clone() {
        sx += x;
        sy += y;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        cxy += (x - mx) * (y - my);
        cxx += (x - mx) * (x - mx);
        cyy += (y - my) * (y - my);
    }
    if cxx <= 0.0 || cyy <= 0.0 {
        return None;
    }
    Some(cxy / (cxx * cyy).sqrt())
}

fn lsq_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(t, v) in pts {
        num += (t - mt) * (v - mv);
        den += (t - mt) * (t - mt);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
