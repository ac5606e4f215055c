//! Network identification by deconvolution.
//!
//! A Foster stage `r (1 - exp(-t/tau))` has log-time derivative
//! `r w(z - ln tau)` with `z = ln t` and `w(x) = exp(x - e^x)`. The derivative
//! of any step response is therefore the convolution of a time-constant
//! density `R(zeta)` with `w`. This module computes the derivative from a
//! sampled `Zth`, inverts the convolution with multiplicative Bayes
//! (Richardson-Lucy) updates, and counts the spectral peaks to choose a
//! network order.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::heatsolve::ThermalStepResponse;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvConfig {
    pub grid_points_per_decade: usize,
    pub iterations: usize,
    /// Points in the local quadratic smoothing window (odd).
    pub smoothing_window: usize,
    pub peak_threshold_frac: f64,
    /// Peaks closer than this (in units of ln tau) are merged.
    pub min_peak_separation: f64,
    /// Decades added to each side of the data range for the spectrum grid.
    pub extension_decades: f64,
    /// Allowed dip in `Zth`, as a fraction of its maximum, before the input
    /// counts as non-monotone.
    pub monotone_tol: f64,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        DeconvConfig {
            grid_points_per_decade: 40,
            iterations: 1000,
            smoothing_window: 9,
            peak_threshold_frac: 0.05,
            min_peak_separation: 1.0,
            extension_decades: 1.0,
            monotone_tol: 1e-3,
        }
    }
}

impl DeconvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("deconvolution needs at least one iteration".into()));
        }
        if !(self.peak_threshold_frac > 0.0 && self.peak_threshold_frac < 1.0) {
            return Err(Error::Config("peak_threshold_frac must lie in (0, 1)".into()));
        }
        if self.grid_points_per_decade < 3 {
            return Err(Error::Config("grid_points_per_decade must be at least 3".into()));
        }
        if self.smoothing_window < 3 || self.smoothing_window.is_multiple_of(2) {
            return Err(Error::Config("smoothing_window must be odd and >= 3".into()));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        LN_10 / self.grid_points_per_decade as f64
    }
}

/// `w(x) = exp(x - e^x)`; integrates to one over the real line.
pub fn kernel(x: f64) -> f64 {
    if x > 40.0 {
        0.0
    } else {
        (x - x.exp()).exp()
    }
}

/// `dZth/dln t` on a uniform grid in `z = ln(t / 1 s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDerivative {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
}

impl LogDerivative {
    pub fn step(&self) -> f64 {
        if self.z.len() < 2 {
            0.0
        } else {
            self.z[1] - self.z[0]
        }
    }

    /// Trapezoid-free sum `sum a dz`, the total resistance the derivative carries.
    pub fn integral(&self) -> f64 {
        self.a.iter().sum::<f64>() * self.step()
    }
}

/// Density of thermal resistance over `zeta = ln(tau / 1 s)`, K/W per unit zeta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeConstantSpectrum {
    pub zeta: Vec<f64>,
    pub density: Vec<f64>,
    pub bin_width: f64,
}

impl TimeConstantSpectrum {
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    /// Mass inside `[lo, hi]` in zeta.
    pub fn integral_between(&self, lo: f64, hi: f64) -> f64 {
        self.zeta.iter().zip(&self.density).filter(|(z, _)| **z >= lo && **z <= hi).map(|(_, d)| d).sum::<f64>() * self.bin_width
    }

    /// Forward model `c(z) = sum_i w(z - zeta_i) R_i dzeta`.
    pub fn convolve(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&zj| self.zeta.iter().zip(&self.density).map(|(&zi, &r)| kernel(zj - zi) * r).sum::<f64>() * self.bin_width).collect()
    }
}

/// Monotone cubic (Fritsch-Carlson) interpolant.
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![delta[0]; 2];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Pchip { x, y, d }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = ((t - self.x[i]) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Least-squares quadratic through `window` points around each sample, evaluated at it.
fn smooth_quadratic(y: &[f64], window: usize) -> Vec<f64> {
    let n = y.len();
    if n < window {
        return y.to_vec();
    }
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half).min(n - window);
            let xs = (lo..lo + window).map(|j| j as f64 - i as f64);
            // Normal equations for c0 + c1 x + c2 x^2.
            let mut m = [[0.0f64; 3]; 3];
            let mut v = [0.0f64; 3];
            for (x, &yy) in xs.zip(&y[lo..lo + window]) {
                let p = [1.0, x, x * x];
                for r in 0..3 {
                    v[r] += p[r] * yy;
                    for c in 0..3 {
                        m[r][c] += p[r] * p[c];
                    }
                }
            }
            let mat = nalgebra::Matrix3::from_fn(|r, c| m[r][c]);
            let rhs = nalgebra::Vector3::from_column_slice(&v);
            mat.lu().solve(&rhs).map(|c| c[0]).unwrap_or(y[i])
        })
        .collect()
}

/// Resamples `Zth` onto a uniform `ln t` grid, smooths it and differentiates.
pub fn log_derivative(resp: &ThermalStepResponse, cfg: &DeconvConfig) -> Result<LogDerivative> {
    cfg.validate()?;
    resp.validate()?;
    let decades = resp.decades();
    if decades <= 0.0 || (resp.times.len() as f64) < 3.0 * decades {
        return Err(Error::Config(format!("need at least 3 samples per decade, got {} over {decades:.2} decades", resp.times.len())));
    }
    let peak = resp.zth.iter().copied().fold(0.0, f64::max);
    let tol = cfg.monotone_tol * peak;
    let mut running = resp.zth[0];
    for (t, &z) in resp.times.iter().zip(&resp.zth) {
        if z < running - tol {
            return Err(Error::Invariant(format!("Zth decreases by more than the noise tolerance near t = {t:e} s")));
        }
        running = running.max(z);
    }

    let lx: Vec<f64> = resp.times.iter().map(|t| t.ln()).collect();
    let h = cfg.step();
    let (z0, z1) = (lx[0], lx[lx.len() - 1]);
    let n = ((z1 - z0) / h + 1e-9).floor() as usize + 1;
    let z: Vec<f64> = (0..n).map(|i| z0 + i as f64 * h).collect();
    let interp = Pchip::new(lx, resp.zth.clone());
    let sampled: Vec<f64> = z.iter().map(|&zi| interp.eval(zi)).collect();
    let smooth = smooth_quadratic(&sampled, cfg.smoothing_window);

    // Round-off in the smoothed curve shows up as derivative noise of order
    // 1e-15 Zth; anything below this floor is treated as zero.
    let eps = 1e-10 * peak.max(f64::MIN_POSITIVE);
    let mut a = vec![0.0; n];
    if n >= 2 {
        for i in 0..n {
            let d = if i == 0 {
                (smooth[1] - smooth[0]) / h
            } else if i == n - 1 {
                (smooth[n - 1] - smooth[n - 2]) / h
            } else {
                (smooth[i + 1] - smooth[i - 1]) / (2.0 * h)
            };
            a[i] = if d <= eps { 0.0 } else { d };
        }
    }
    Ok(LogDerivative { z, a })
}

/// Output of [`bayes_deconvolve_traced`]: the spectrum plus the RMS misfit
/// `||a - R_k * w||` before each update.
#[derive(Debug, Clone)]
pub struct DeconvTrace {
    pub spectrum: TimeConstantSpectrum,
    pub residuals: Vec<f64>,
}

/// Inverts `a = R * w` by iterative Bayes updates.
pub fn bayes_deconvolve(deriv: &LogDerivative, cfg: &DeconvConfig) -> Result<TimeConstantSpectrum> {
    bayes_deconvolve_traced(deriv, cfg).map(|t| t.spectrum)
}

pub fn bayes_deconvolve_traced(deriv: &LogDerivative, cfg: &DeconvConfig) -> Result<DeconvTrace> {
    cfg.validate()?;
    if deriv.a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Invariant("log-derivative must be finite and non-negative".into()));
    }
    let nz = deriv.z.len();
    if nz < 2 {
        return Err(Error::Config("log-derivative needs at least two samples".into()));
    }
    let h = deriv.step();
    let ext = (cfg.extension_decades * LN_10 / h).round() as usize;
    let nzeta = nz + 2 * ext;
    let zeta0 = deriv.z[0] - ext as f64 * h;
    let zeta: Vec<f64> = (0..nzeta).map(|i| zeta0 + i as f64 * h).collect();

    let mass = deriv.integral();
    if mass <= 0.0 {
        return Ok(DeconvTrace { spectrum: TimeConstantSpectrum { zeta, density: vec![0.0; nzeta], bin_width: h }, residuals: Vec::new() });
    }

    // Kernel rows in z, columns in zeta. Columns far from a row are dropped.
    let w: Vec<f64> = (0..nz)
        .flat_map(|j| {
            let zj = deriv.z[j];
            zeta.iter().map(move |&zi| kernel(zj - zi))
        })
        .collect();
    let norm: Vec<f64> = (0..nzeta).map(|i| (0..nz).map(|j| w[j * nzeta + i]).sum()).collect();

    let mut r = vec![mass / (nzeta as f64 * h); nzeta];
    let mut c = vec![0.0; nz];
    let mut ratio = vec![0.0; nz];
    let mut residuals = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut sq = 0.0;
        for j in 0..nz {
            let row = &w[j * nzeta..(j + 1) * nzeta];
            let cj: f64 = row.iter().zip(&r).map(|(k, v)| k * v).sum::<f64>() * h;
            c[j] = cj;
            ratio[j] = if cj > 0.0 { deriv.a[j] / cj } else { 0.0 };
            sq += (deriv.a[j] - cj).powi(2);
        }
        residuals.push((sq / nz as f64).sqrt());
        let mut back = vec![0.0; nzeta];
        for j in 0..nz {
            let row = &w[j * nzeta..(j + 1) * nzeta];
            let q = ratio[j];
            if q != 0.0 {
                for (b, k) in back.iter_mut().zip(row) {
                    *b += k * q;
                }
            }
        }
        for i in 0..nzeta {
            r[i] = if norm[i] > 0.0 { r[i] * back[i] / norm[i] } else { 0.0 };
        }
    }
    Ok(DeconvTrace { spectrum: TimeConstantSpectrum { zeta, density: r, bin_width: h }, residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub zeta: f64,
    pub tau_s: f64,
    pub height: f64,
}

/// Detected peaks, ascending in zeta; `order` is their count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub order: usize,
    pub peaks: Vec<Peak>,
}

/// Counts interior local maxima above the threshold, merging close neighbours.
pub fn detect_order(spec: &TimeConstantSpectrum, cfg: &DeconvConfig) -> OrderReport {
    let d = &spec.density;
    let max = d.iter().copied().fold(0.0, f64::max);
    if d.len() < 3 || max <= 0.0 {
        return OrderReport { order: 0, peaks: Vec::new() };
    }
    let floor = cfg.peak_threshold_frac * max;
    let mut candidates: Vec<Peak> = Vec::new();
    let mut i = 1;
    while i + 1 < d.len() {
        if d[i] > d[i - 1] && d[i] >= floor {
            // Walk across a flat top.
            let mut k = i;
            while k + 1 < d.len() && d[k + 1] == d[i] {
                k += 1;
            }
            if k + 1 < d.len() && d[k + 1] < d[i] {
                let zeta = 0.5 * (spec.zeta[i] + spec.zeta[k]);
                candidates.push(Peak { zeta, tau_s: zeta.exp(), height: d[i] });
            }
            i = k + 1;
        } else {
            i += 1;
        }
    }
    let mut peaks: Vec<Peak> = Vec::new();
    for p in candidates {
        match peaks.last_mut() {
            Some(last) if p.zeta - last.zeta < cfg.min_peak_separation => {
                if p.height > last.height {
                    *last = p;
                }
            }
            _ => peaks.push(p),
        }
    }
    OrderReport { order: peaks.len(), peaks }
}
