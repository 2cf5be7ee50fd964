//! Change-point detection on a scalar stream (angle-difference or magnitude)
//! via two-sided CUSUM. Stands in for signature-based topology-transition
//! detection: a switch operation shifts the level of the monitored series.

use super::DiagError;

#[derive(Debug, Clone)]
pub struct CusumParams {
    /// Allowance per sample in baseline standard deviations (k).
    pub drift_sigmas: f64,
    /// Alarm threshold in baseline standard deviations (h).
    pub threshold_sigmas: f64,
    /// Samples used to estimate the baseline mean and sigma, and to
    /// re-anchor the baseline after each detection.
    pub baseline_samples: usize,
}

impl Default for CusumParams {
    fn default() -> Self {
        // h = 8 keeps the false-alarm run length around 1e4 samples while a
        // 5-sigma step still alarms within two samples.
        Self {
            drift_sigmas: 0.5,
            threshold_sigmas: 8.0,
            baseline_samples: 50,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Timestamps of detected level shifts. The reported instant is the onset
/// estimate: within the alarm excursion (since the alarming side's statistic
/// last sat at zero), the sample with the largest deviation toward the new
/// level. After each alarm the baseline mean is re-estimated from the
/// following samples and scanning resumes past them.
pub fn detect_switch_transition(
    series: &[(i64, f64)],
    params: &CusumParams,
) -> Result<Vec<i64>, DiagError> {
    if series.len() < 100 {
        return Err(DiagError::InsufficientData {
            need: 100,
            got: series.len(),
        });
    }
    let w = params.baseline_samples.min(series.len());
    let values: Vec<f64> = series.iter().map(|p| p.1).collect();
    let (mut mu, sigma_raw) = mean_std(&values[..w]);
    let sigma = sigma_raw.max(1e-12 * (mu.abs() + 1.0));
    let k = params.drift_sigmas;
    let h = params.threshold_sigmas;

    let mut out = Vec::new();
    let mut s_hi = 0.0f64;
    let mut s_lo = 0.0f64;
    let mut zero_hi = 0usize;
    let mut zero_lo = 0usize;
    let mut i = 0usize;
    while i < series.len() {
        let z = (values[i] - mu) / sigma;
        s_hi = (s_hi + z - k).max(0.0);
        s_lo = (s_lo - z - k).max(0.0);
        if s_hi == 0.0 {
            zero_hi = i;
        }
        if s_lo == 0.0 {
            zero_lo = i;
        }
        if s_hi > h || s_lo > h {
            let upward = s_hi > h;
            let from = if upward { zero_hi } else { zero_lo }.min(i);
            // largest deviation toward the new level marks the step itself
            let mut onset = i;
            let mut best = f64::NEG_INFINITY;
            for j in from..=i {
                let zj = (values[j] - mu) / sigma;
                let dev = if upward { zj } else { -zj };
                if dev > best {
                    best = dev;
                    onset = j;
                }
            }
            out.push(series[onset].0);
            // re-anchor on the post-change level
            let rb_end = (i + 1 + w).min(series.len());
            if i + 1 < rb_end {
                mu = mean_std(&values[i + 1..rb_end]).0;
            }
            s_hi = 0.0;
            s_lo = 0.0;
            i = rb_end;
            zero_hi = i;
            zero_lo = i;
            continue;
        }
        i += 1;
    }
    Ok(out)
}
