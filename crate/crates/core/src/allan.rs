// SPDX-License-Identifier: Apache-2.0

//! Overlapping Allan deviation of IMU logs and the white-noise /
//! bias-random-walk fit read off its log-log plot.
//!
//! White noise of density `σ_w` gives `adev(τ) = σ_w / √τ`, so `σ_w` is the
//! slope −½ line evaluated at τ = 1 s. Rate random walk of intensity `σ_b`
//! gives `adev(τ) = σ_b √(τ/3)`, so `σ_b` is the slope +½ line at τ = 3 s.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllanError {
    #[error("series of {n} samples is too short for cluster size {m} (need at least {need})")]
    SeriesTooShort { n: usize, m: usize, need: usize },
    #[error("averaging time {0} is not positive")]
    NonPositiveTau(f64),
    #[error("sample rate {0} is not positive")]
    NonPositiveRate(f64),
    #[error("axes have different lengths")]
    RaggedAxes,
    #[error("no averaging times inside the {which} fit window [{lo}, {hi}] s")]
    FitRegionEmpty {
        which: &'static str,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllanCurve {
    /// Averaging times in seconds, strictly increasing.
    pub taus: Vec<f64>,
    /// `adev[axis][i]` belongs to `taus[i]`.
    pub adev: Vec<Vec<f64>>,
    pub rate: f64,
    pub n_samples: usize,
}

impl AllanCurve {
    /// Mean deviation across axes at each tau.
    pub fn average(&self) -> Vec<f64> {
        (0..self.taus.len())
            .map(|i| self.adev.iter().map(|a| a[i]).sum::<f64>() / self.adev.len() as f64)
            .collect()
    }

    /// `tau,adev_<axis>...,adev_avg` with the given axis labels.
    pub fn to_csv(&self, labels: &[&str]) -> String {
        let mut out = String::from("tau");
        for l in labels {
            out.push_str(&format!(",adev_{l}"));
        }
        out.push_str(",adev_avg\n");
        let avg = self.average();
        for (i, tau) in self.taus.iter().enumerate() {
            out.push_str(&format!("{tau:.9e}"));
            for a in &self.adev {
                out.push_str(&format!(",{:.9e}", a[i]));
            }
            out.push_str(&format!(",{:.9e}\n", avg[i]));
        }
        out
    }
}

/// Log-spaced averaging times with `per_decade` points from `2/rate` up to
/// the largest cluster size that still leaves one difference term, with
/// duplicate cluster sizes removed.
pub fn tau_grid(n_samples: usize, rate: f64, per_decade: usize) -> Vec<f64> {
    let m_max = n_samples.saturating_sub(1) / 2;
    if m_max < 2 {
        return if m_max == 1 {
            vec![1.0 / rate]
        } else {
            Vec::new()
        };
    }
    let lo = 2f64.log10();
    let hi = (m_max as f64).log10();
    let steps = ((hi - lo) * per_decade as f64).ceil().max(1.0) as usize;
    let mut ms: Vec<usize> = (0..=steps)
        .map(|i| {
            let m = 10f64.powf(lo + (hi - lo) * i as f64 / steps as f64).round() as usize;
            m.clamp(2, m_max)
        })
        .collect();
    ms.dedup();
    ms.into_iter().map(|m| m as f64 / rate).collect()
}

fn cluster_size(tau: f64, rate: f64) -> Result<usize, AllanError> {
    if !(tau > 0.0) {
        return Err(AllanError::NonPositiveTau(tau));
    }
    Ok(((tau * rate).round() as usize).max(1))
}

/// Overlapping Allan variance of one series for cluster size `m`, from
/// prefix sums `cum` (`cum[k]` = sum of the first `k` samples):
/// `1/(2(N−2m)) Σ_{k=0}^{N−2m−1} (ȳ_{k+m} − ȳ_k)²`.
fn avar_from_prefix(cum: &[f64], m: usize) -> f64 {
    let n = cum.len() - 1;
    let terms = n - 2 * m;
    let inv_m = 1.0 / m as f64;
    let mut acc = 0.0;
    for k in 0..terms {
        let d = (cum[k + 2 * m] - 2.0 * cum[k + m] + cum[k]) * inv_m;
        acc += d * d;
    }
    acc / (2.0 * terms as f64)
}

fn prefix_sums(samples: &[f64]) -> Vec<f64> {
    // Centering keeps the running sum small.
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    let mut cum = Vec::with_capacity(samples.len() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for &x in samples {
        acc += x - mean;
        cum.push(acc);
    }
    cum
}

/// Allan deviation of each axis at the requested averaging times. Taus
/// that round to the same cluster size are merged; the returned taus are
/// the exact `m / rate` values.
pub fn allan_deviation(axes: &[&[f64]], rate: f64, taus: &[f64]) -> Result<AllanCurve, AllanError> {
    if !(rate > 0.0) {
        return Err(AllanError::NonPositiveRate(rate));
    }
    let n = axes.first().map_or(0, |a| a.len());
    if axes.iter().any(|a| a.len() != n) {
        return Err(AllanError::RaggedAxes);
    }
    let mut ms = taus
        .iter()
        .map(|&t| cluster_size(t, rate))
        .collect::<Result<Vec<_>, _>>()?;
    ms.sort_unstable();
    ms.dedup();
    if let Some(&m) = ms.last() {
        if n < 2 * m + 1 {
            return Err(AllanError::SeriesTooShort {
                n,
                m,
                need: 2 * m + 1,
            });
        }
    }
    let adev = axes
        .iter()
        .map(|a| {
            let cum = prefix_sums(a);
            ms.par_iter()
                .map(|&m| avar_from_prefix(&cum, m).sqrt())
                .collect()
        })
        .collect();
    Ok(AllanCurve {
        taus: ms.iter().map(|&m| m as f64 / rate).collect(),
        adev,
        rate,
        n_samples: n,
    })
}

/// Fit windows in seconds. `None` bounds default to the curve's extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindows {
    /// Slope −½ region; default `[2/rate, 1]`.
    pub white: (Option<f64>, Option<f64>),
    /// Slope +½ region; default `[100, max τ]`.
    pub random_walk: (Option<f64>, Option<f64>),
}

impl Default for FitWindows {
    fn default() -> Self {
        FitWindows {
            white: (None, Some(1.0)),
            random_walk: (Some(100.0), None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// White-noise density per axis (unit/√Hz).
    pub sigma_w: Vec<f64>,
    /// Bias random-walk intensity per axis (unit/s/√Hz).
    pub sigma_b: Vec<f64>,
    pub sigma_w_avg: f64,
    pub sigma_b_avg: f64,
}

fn window_indices(taus: &[f64], lo: f64, hi: f64) -> Vec<usize> {
    let eps = 1e-9;
    taus.iter()
        .enumerate()
        .filter(|(_, &t)| t >= lo * (1.0 - eps) && t <= hi * (1.0 + eps))
        .map(|(i, _)| i)
        .collect()
}

/// Equivalent degrees of freedom of an overlapping Allan variance estimate
/// at cluster size `m` over `n` rate samples, for the noise type the fit
/// window is assumed to be dominated by.
fn equivalent_dof(noise: NoiseKind, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    match noise {
        NoiseKind::White => {
            (3.0 * (n - 1.0) / (2.0 * m) - 2.0 * (n - 2.0) / n) * 4.0 * m * m / (4.0 * m * m + 5.0)
        }
        NoiseKind::RandomWalk => {
            (n - 2.0) / m * ((n - 1.0).powi(2) - 3.0 * m * (n - 1.0) + 4.0 * m * m)
                / (n - 3.0).powi(2)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum NoiseKind {
    White,
    RandomWalk,
}

/// Fixed-slope line through log10(adev) vs log10(τ), each point weighted
/// by its equivalent degrees of freedom (the inverse variance of log adev
/// up to a constant), evaluated at `tau_eval`. Zero-deviation points have
/// no logarithm and are skipped; `None` when nothing is left.
fn fixed_slope_value(
    curve: &AllanCurve,
    adev: &[f64],
    idx: &[usize],
    slope: f64,
    tau_eval: f64,
    noise: NoiseKind,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut weight = 0.0;
    for &i in idx {
        if adev[i] <= 0.0 || !adev[i].is_finite() {
            continue;
        }
        let tau = curve.taus[i];
        let m = (tau * curve.rate).round() as usize;
        let w = equivalent_dof(noise, curve.n_samples, m).max(1e-6);
        sum += w * (adev[i].log10() - slope * tau.log10());
        weight += w;
    }
    if weight == 0.0 {
        return None;
    }
    let intercept = sum / weight;
    Some(10f64.powf(intercept + slope * tau_eval.log10()))
}

/// Fits σ_w (slope −½ at τ = 1 s) and σ_b (slope +½ at τ = 3 s) per axis
/// and averages them across axes.
pub fn fit_noise_params(
    curve: &AllanCurve,
    windows: &FitWindows,
) -> Result<NoiseParams, AllanError> {
    let max_tau = curve.taus.last().copied().unwrap_or(0.0);
    let white_lo = windows.white.0.unwrap_or(2.0 / curve.rate);
    let white_hi = windows.white.1.unwrap_or(max_tau);
    let walk_lo = windows.random_walk.0.unwrap_or(2.0 / curve.rate);
    let walk_hi = windows.random_walk.1.unwrap_or(max_tau);

    let white_idx = window_indices(&curve.taus, white_lo, white_hi);
    if white_idx.is_empty() {
        return Err(AllanError::FitRegionEmpty {
            which: "white-noise",
            lo: white_lo,
            hi: white_hi,
        });
    }
    let walk_idx = window_indices(&curve.taus, walk_lo, walk_hi);
    if walk_idx.is_empty() {
        return Err(AllanError::FitRegionEmpty {
            which: "random-walk",
            lo: walk_lo,
            hi: walk_hi,
        });
    }

    let mut sigma_w = Vec::new();
    let mut sigma_b = Vec::new();
    for adev in &curve.adev {
        sigma_w.push(
            fixed_slope_value(curve, adev, &white_idx, -0.5, 1.0, NoiseKind::White).ok_or(
                AllanError::FitRegionEmpty {
                    which: "white-noise",
                    lo: white_lo,
                    hi: white_hi,
                },
            )?,
        );
        sigma_b.push(
            fixed_slope_value(curve, adev, &walk_idx, 0.5, 3.0, NoiseKind::RandomWalk).ok_or(
                AllanError::FitRegionEmpty {
                    which: "random-walk",
                    lo: walk_lo,
                    hi: walk_hi,
                },
            )?,
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(NoiseParams {
        sigma_w_avg: mean(&sigma_w),
        sigma_b_avg: mean(&sigma_b),
        sigma_w,
        sigma_b,
    })
}

/// Free-slope least-squares fit of log10(adev) against log10(τ) inside
/// `[lo, hi]`.
pub fn fit_loglog_slope(taus: &[f64], adev: &[f64], lo: f64, hi: f64) -> Result<f64, AllanError> {
    let idx: Vec<usize> = window_indices(taus, lo, hi)
        .into_iter()
        .filter(|&i| adev[i] > 0.0 && adev[i].is_finite())
        .collect();
    if idx.len() < 2 {
        return Err(AllanError::FitRegionEmpty {
            which: "slope",
            lo,
            hi,
        });
    }
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (taus[i].log10(), adev[i].log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// White noise of density `sigma_w` plus a bias random walk of intensity
/// `sigma_b`, sampled at `rate` for `duration` seconds:
/// `x_k = w_k + b_k`, `w_k ~ N(0, σ_w² rate)`, `b_k = b_{k−1} + N(0, σ_b²/rate)`.
///
/// Panics if a parameter is negative or the rate is not positive.
pub fn simulate_imu_noise(
    sigma_w: f64,
    sigma_b: f64,
    rate: f64,
    duration: f64,
    seed: u64,
) -> Vec<f64> {
    assert!(sigma_w >= 0.0 && sigma_b >= 0.0 && rate > 0.0 && duration >= 0.0);
    let n = (duration * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = Normal::new(0.0, sigma_w * rate.sqrt()).unwrap();
    let walk = Normal::new(0.0, sigma_b / rate.sqrt()).unwrap();
    let mut bias = 0.0;
    (0..n)
        .map(|_| {
            let w = white.sample(&mut rng);
            bias += walk.sample(&mut rng);
            w + bias
        })
        .collect()
}
