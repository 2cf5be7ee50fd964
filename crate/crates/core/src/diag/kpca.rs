//! Event detection by kernel principal component analysis: a statistical
//! model of nominal windows flags anomalies through the feature-space
//! reconstruction error.

use nalgebra::{DMatrix, DVector};

use super::DiagError;
use crate::phasor::{angle_diff, Frame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KpcaKernel {
    /// `exp(-|x - y|^2 / (2 width^2))`. A non-positive width selects the
    /// automatic scale `4 sqrt(d)` for d standardized feature dimensions:
    /// wide enough that fresh in-distribution windows score like training
    /// windows (the training quantile threshold stays meaningful), while
    /// multi-sigma events still drive the kernel to zero.
    Gaussian { width: f64 },
    /// Plain inner product; with enough components the scores coincide with
    /// linear-PCA reconstruction errors.
    Linear,
}

impl KpcaKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KpcaKernel::Gaussian { width } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * width * width)).exp()
            }
            KpcaKernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// A fixed-length feature window over `[start_ns, end_ns)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_ns: i64,
    pub end_ns: i64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventFlag {
    pub start_ns: i64,
    pub end_ns: i64,
    /// Feature-space reconstruction error.
    pub score: f64,
    pub is_anomaly: bool,
}

#[derive(Debug, Clone)]
pub struct KpcaOptions {
    pub kernel: KpcaKernel,
    /// Maximum number of retained components.
    pub n_components: usize,
    /// Threshold quantile of the training scores.
    pub threshold_quantile: f64,
    pub min_train_windows: usize,
    /// Stop adding components once this fraction of the centered kernel
    /// spectrum is explained; `None` always keeps `n_components`. Guards
    /// against memorizing a small training set, which would make fresh
    /// nominal windows score above the training quantile.
    pub energy_cutoff: Option<f64>,
}

impl Default for KpcaOptions {
    fn default() -> Self {
        Self {
            kernel: KpcaKernel::Gaussian { width: 0.0 },
            n_components: 8,
            threshold_quantile: 0.99,
            min_train_windows: 50,
            energy_cutoff: Some(0.9),
        }
    }
}

/// Default windowing: 10 consecutive frames of per-phase voltage magnitude
/// plus the per-phase angle difference to the substation reference,
/// standardized later by the training statistics.
pub fn build_feature_windows(
    meter: &[Frame],
    substation: &[Frame],
    window_len: usize,
) -> Vec<Window> {
    let n = meter.len().min(substation.len());
    let mut out = Vec::new();
    let mut k = 0;
    while k + window_len <= n {
        let mut features = Vec::with_capacity(window_len * 6);
        for i in k..k + window_len {
            for p in 0..3 {
                features.push(meter[i].voltage.phase(p).magnitude());
            }
            for p in 0..3 {
                features.push(
                    angle_diff(
                        meter[i].voltage.phase(p).angle(),
                        substation[i].voltage.phase(p).angle(),
                    )
                    .expect("finite angles"),
                );
            }
        }
        out.push(Window {
            start_ns: meter[k].timestamp_ns,
            end_ns: meter[k + window_len - 1].timestamp_ns + 1,
            features,
        });
        k += window_len;
    }
    out
}

struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(train: &[Window]) -> Self {
        let d = train[0].features.len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for w in train {
            for (m, x) in mean.iter_mut().zip(&w.features) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; d];
        for w in train {
            for j in 0..d {
                let dx = w.features[j] - mean[j];
                std[j] += dx * dx / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    fn apply(&self, w: &Window) -> Vec<f64> {
        w.features
            .iter()
            .enumerate()
            .map(|(j, x)| (x - self.mean[j]) / self.std[j])
            .collect()
    }
}

struct FittedKpca {
    kernel: KpcaKernel,
    train: Vec<Vec<f64>>,
    /// Column means of the training kernel matrix and its grand mean.
    col_mean: DVector<f64>,
    grand_mean: f64,
    /// Component weights: alpha_i = v_i / sqrt(lambda_i), one column each.
    alphas: DMatrix<f64>,
}

impl FittedKpca {
    fn fit(
        train: Vec<Vec<f64>>,
        kernel: KpcaKernel,
        n_components: usize,
        energy_cutoff: Option<f64>,
    ) -> Result<Self, DiagError> {
        let n = train.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&train[i], &train[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let col_mean = DVector::from_iterator(n, (0..n).map(|j| k.column(j).sum() / n as f64));
        let grand_mean = col_mean.sum() / n as f64;
        // centered kernel matrix
        let mut kc = k.clone();
        for i in 0..n {
            for j in 0..n {
                kc[(i, j)] = k[(i, j)] - col_mean[i] - col_mean[j] + grand_mean;
            }
        }
        let eig = kc.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
        });
        let lambda_max = eig.eigenvalues[order[0]];
        if !(lambda_max.is_finite() && lambda_max > 1e-9) {
            return Err(DiagError::DegenerateTraining);
        }
        let positive: Vec<usize> = order
            .into_iter()
            .filter(|&i| eig.eigenvalues[i] > 1e-12 * lambda_max)
            .collect();
        let kept: Vec<usize> = match energy_cutoff {
            None => positive.into_iter().take(n_components).collect(),
            Some(cut) => {
                let total: f64 = positive.iter().map(|&i| eig.eigenvalues[i]).sum();
                let mut acc = 0.0;
                let mut kept = Vec::new();
                for i in positive {
                    if kept.len() >= n_components {
                        break;
                    }
                    let reached = acc >= cut * total && !kept.is_empty();
                    if reached {
                        break;
                    }
                    acc += eig.eigenvalues[i];
                    kept.push(i);
                }
                kept
            }
        };
        if kept.is_empty() {
            return Err(DiagError::DegenerateTraining);
        }
        let mut alphas = DMatrix::zeros(n, kept.len());
        for (c, &i) in kept.iter().enumerate() {
            let scale = 1.0 / eig.eigenvalues[i].sqrt();
            for r in 0..n {
                alphas[(r, c)] = eig.eigenvectors[(r, i)] * scale;
            }
        }
        Ok(Self {
            kernel,
            train,
            col_mean,
            grand_mean,
            alphas,
        })
    }

    /// Feature-space squared reconstruction error of one standardized vector.
    fn score(&self, x: &[f64]) -> f64 {
        let n = self.train.len();
        let kx = DVector::from_iterator(n, self.train.iter().map(|t| self.kernel.eval(x, t)));
        let kx_mean = kx.sum() / n as f64;
        // centered test row and centered self-similarity
        let kc = DVector::from_iterator(
            n,
            (0..n).map(|i| kx[i] - self.col_mean[i] - kx_mean + self.grand_mean),
        );
        let self_sim = self.kernel.eval(x, x) - 2.0 * kx_mean + self.grand_mean;
        let proj = self.alphas.transpose() * &kc;
        (self_sim - proj.norm_squared()).max(0.0)
    }
}

/// Train on nominal windows, score the test windows, and flag those whose
/// reconstruction error exceeds the chosen quantile of the training scores.
pub fn detect_events_kpca(
    train: &[Window],
    test: &[Window],
    opts: &KpcaOptions,
) -> Result<Vec<EventFlag>, DiagError> {
    if train.len() < opts.min_train_windows {
        return Err(DiagError::InsufficientData {
            need: opts.min_train_windows,
            got: train.len(),
        });
    }
    let standardizer = Standardizer::fit(train);
    let x_train: Vec<Vec<f64>> = train.iter().map(|w| standardizer.apply(w)).collect();
    let kernel = match opts.kernel {
        KpcaKernel::Gaussian { width } if width <= 0.0 => KpcaKernel::Gaussian {
            width: 4.0 * (train[0].features.len() as f64).sqrt(),
        },
        k => k,
    };
    let fitted = FittedKpca::fit(
        x_train.clone(),
        kernel,
        opts.n_components,
        opts.energy_cutoff,
    )?;

    // Training scores are computed out-of-fold: a window scored by a model
    // that saw it memorizes it, which would bias the threshold low and flag
    // fresh nominal windows.
    const FOLDS: usize = 5;
    let mut train_scores: Vec<f64> = Vec::with_capacity(x_train.len());
    for fold in 0..FOLDS {
        let held: Vec<&Vec<f64>> = x_train
            .iter()
            .enumerate()
            .filter(|(i, _)| i % FOLDS == fold)
            .map(|(_, x)| x)
            .collect();
        if held.is_empty() {
            continue;
        }
        let rest: Vec<Vec<f64>> = x_train
            .iter()
            .enumerate()
            .filter(|(i, _)| i % FOLDS != fold)
            .map(|(_, x)| x.clone())
            .collect();
        let sub = FittedKpca::fit(rest, kernel, opts.n_components, opts.energy_cutoff)?;
        train_scores.extend(held.iter().map(|x| sub.score(x)));
    }
    train_scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let q = opts.threshold_quantile.clamp(0.0, 1.0);
    let idx = ((train_scores.len() as f64 * q).ceil() as usize)
        .clamp(1, train_scores.len())
        - 1;
    let threshold = train_scores[idx];

    Ok(test
        .iter()
        .map(|w| {
            let score = fitted.score(&standardizer.apply(w));
            EventFlag {
                start_ns: w.start_ns,
                end_ns: w.end_ns,
                score,
                is_anomaly: score > threshold,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(start: i64, features: Vec<f64>) -> Window {
        Window {
            start_ns: start,
            end_ns: start + 1,
            features,
        }
    }

    fn nominal_windows(n: usize, seed: u64) -> Vec<Window> {
        let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(99);
        let mut rand = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        };
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.37;
                window(
                    i as i64,
                    vec![
                        t.sin() + 0.05 * rand(),
                        t.cos() + 0.05 * rand(),
                        0.5 * (2.0 * t).sin() + 0.05 * rand(),
                        0.1 * rand(),
                    ],
                )
            })
            .collect()
    }

    #[test]
    fn training_scores_respect_the_quantile() {
        let train = nominal_windows(200, 5);
        let flags = detect_events_kpca(&train, &train, &KpcaOptions::default()).unwrap();
        let flagged = flags.iter().filter(|f| f.is_anomaly).count() as f64;
        let n = train.len() as f64;
        let bound = (1.0 - 0.99) + 2.0 / n.sqrt();
        assert!(
            flagged / n <= bound,
            "flagged fraction {} above {bound}",
            flagged / n
        );
    }

    #[test]
    fn displaced_windows_are_flagged() {
        let train = nominal_windows(150, 9);
        let mut anomalous = nominal_windows(10, 33);
        for w in &mut anomalous {
            for x in &mut w.features {
                *x += 3.0; // far outside the nominal cloud
            }
        }
        let flags = detect_events_kpca(&train, &anomalous, &KpcaOptions::default()).unwrap();
        assert!(flags.iter().all(|f| f.is_anomaly));
        let nominal = detect_events_kpca(&train, &nominal_windows(30, 77), &KpcaOptions::default())
            .unwrap();
        let fp = nominal.iter().filter(|f| f.is_anomaly).count();
        assert!(fp <= 3, "{fp} false positives in 30 nominal windows");
    }

    #[test]
    fn identical_training_windows_are_degenerate() {
        let train: Vec<Window> = (0..60).map(|i| window(i, vec![1.0, 2.0, 3.0])).collect();
        assert!(matches!(
            detect_events_kpca(&train, &train, &KpcaOptions::default()),
            Err(DiagError::DegenerateTraining)
        ));
    }

    #[test]
    fn short_training_set_is_rejected() {
        let train = nominal_windows(10, 1);
        assert!(matches!(
            detect_events_kpca(&train, &train, &KpcaOptions::default()),
            Err(DiagError::InsufficientData { need: 50, got: 10 })
        ));
    }

    /// Independent oracle: linear-kernel kPCA reconstruction errors must
    /// match plain PCA reconstruction errors computed from the covariance
    /// eigendecomposition.
    #[test]
    fn linear_kernel_matches_pca_oracle() {
        let train = nominal_windows(120, 21);
        let test = nominal_windows(40, 55);
        let d = train[0].features.len();
        let opts = KpcaOptions {
            kernel: KpcaKernel::Linear,
            n_components: 2,
            energy_cutoff: None,
            ..Default::default()
        };
        let flags = detect_events_kpca(&train, &test, &opts).unwrap();

        // PCA oracle on the standardized data
        let standardizer = Standardizer::fit(&train);
        let xs: Vec<Vec<f64>> = train.iter().map(|w| standardizer.apply(w)).collect();
        let n = xs.len();
        let mean: Vec<f64> = (0..d)
            .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let mut cov = DMatrix::zeros(d, d);
        for x in &xs {
            for r in 0..d {
                for c in 0..d {
                    cov[(r, c)] += (x[r] - mean[r]) * (x[c] - mean[c]);
                }
            }
        }
        // kPCA's gram matrix is not scaled by 1/n, so keep the same scale
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb): (f64, f64) = (eig.eigenvalues[a], eig.eigenvalues[b]);
            eb.partial_cmp(&ea).unwrap()
        });
        let dirs: Vec<DVector<f64>> = order
            .iter()
            .take(2)
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        for (flag, w) in flags.iter().zip(&test) {
            let x = standardizer.apply(w);
            let xc = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, m)| a - m));
            let mut err = xc.norm_squared();
            for dir in &dirs {
                let p = dir.dot(&xc);
                err -= p * p;
            }
            assert!(
                (flag.score - err).abs() < 1e-8,
                "kPCA {} vs PCA {err}",
                flag.score
            );
        }

        // full-dimensional case: both residuals agree (and nearly vanish)
        let opts_full = KpcaOptions {
            kernel: KpcaKernel::Linear,
            n_components: d,
            energy_cutoff: None,
            ..Default::default()
        };
        let flags_full = detect_events_kpca(&train, &test, &opts_full).unwrap();
        for (flag, w) in flags_full.iter().zip(&test) {
            let x = standardizer.apply(w);
            let xc = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, m)| a - m));
            let mut err = xc.norm_squared();
            for &i in order.iter().take(d) {
                let dir = eig.eigenvectors.column(i);
                let p = dir.dot(&xc);
                err -= p * p;
            }
            assert!((flag.score - err.max(0.0)).abs() < 1e-8);
        }
    }
}
