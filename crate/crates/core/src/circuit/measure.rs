//! Delay, edge-time and oscillation metrics from transient waveforms.

use serde::{Deserialize, Serialize};

use super::TranResult;
use crate::{Error, Result};

/// Times where `v` crosses `level`, linearly interpolated, with `true` for rising.
pub fn crossings(t: &[f64], v: &[f64], level: f64) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    for k in 0..v.len().saturating_sub(1) {
        let (a, b) = (v[k], v[k + 1]);
        let rising = a < level && b >= level;
        let falling = a >= level && b < level;
        if rising || falling {
            let f = (level - a) / (b - a);
            out.push((t[k] + f * (t[k + 1] - t[k]), rising));
        }
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Input 50% to falling output 50%, s.
    pub t_phl: Option<f64>,
    /// Input 50% to rising output 50%, s.
    pub t_plh: Option<f64>,
    /// Mean of `t_phl` and `t_plh`, s.
    pub t_p: Option<f64>,
    /// Output 10% to 90%, s.
    pub t_r: Option<f64>,
    /// Output 90% to 10%, s.
    pub t_f: Option<f64>,
    pub ro_period: Option<f64>,
    /// Hz.
    pub ro_freq: Option<f64>,
}

/// Percentage change of each metric relative to a baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub t_phl: Option<f64>,
    pub t_plh: Option<f64>,
    pub t_p: Option<f64>,
    pub t_r: Option<f64>,
    pub t_f: Option<f64>,
    pub ro_period: Option<f64>,
    pub ro_freq: Option<f64>,
}

impl Metrics {
    /// `100 (other / self - 1)` per metric.
    pub fn delta_pct(&self, other: &Metrics) -> MetricDeltas {
        let d = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) if a > 0.0 => Some(100.0 * (b / a - 1.0)),
            _ => None,
        };
        MetricDeltas {
            t_phl: d(self.t_phl, other.t_phl),
            t_plh: d(self.t_plh, other.t_plh),
            t_p: d(self.t_p, other.t_p),
            t_r: d(self.t_r, other.t_r),
            t_f: d(self.t_f, other.t_f),
            ro_period: d(self.ro_period, other.ro_period),
            ro_freq: d(self.ro_freq, other.ro_freq),
        }
    }
}

/// Rise and fall times of one waveform, averaged over edges completing after `settle`.
pub fn edge_times(t: &[f64], v: &[f64], v_dd: f64, settle: f64) -> (Option<f64>, Option<f64>) {
    let lo = crossings(t, v, 0.1 * v_dd);
    let hi = crossings(t, v, 0.9 * v_dd);
    let mut rise = Vec::new();
    for &(t9, _) in hi.iter().filter(|c| c.1 && c.0 >= settle) {
        if let Some(&(t1, _)) = lo.iter().rfind(|c| c.1 && c.0 <= t9) {
            rise.push(t9 - t1);
        }
    }
    let mut fall = Vec::new();
    for &(t1, _) in lo.iter().filter(|c| !c.1 && c.0 >= settle) {
        if let Some(&(t9, _)) = hi.iter().rfind(|c| !c.1 && c.0 <= t1) {
            fall.push(t1 - t9);
        }
    }
    (mean(&rise), mean(&fall))
}

/// Propagation delays from `input` to `output` and the output edge times,
/// averaged over events after `settle`.
pub fn measure(res: &TranResult, input: &str, output: &str, v_dd: f64, settle: f64) -> Result<Metrics> {
    let t = &res.time;
    let vin = res.node(input)?;
    let vout = res.node(output)?;
    let half = 0.5 * v_dd;
    let cin: Vec<(f64, bool)> = crossings(t, vin, half).into_iter().filter(|c| c.0 >= settle).collect();
    let cout = crossings(t, vout, half);
    if cin.is_empty() {
        return Err(Error::Numerical(format!("no crossing found on `{input}` after {settle:e} s")));
    }
    if !cout.iter().any(|c| c.0 >= settle) {
        return Err(Error::Numerical(format!("no crossing found on `{output}` after {settle:e} s")));
    }
    let (mut hl, mut lh) = (Vec::new(), Vec::new());
    for (k, &(t_in, _)) in cin.iter().enumerate() {
        let next_in = cin.get(k + 1).map_or(f64::INFINITY, |c| c.0);
        if let Some(&(t_out, rising)) = cout.iter().find(|c| c.0 > t_in && c.0 < next_in) {
            if rising {
                lh.push(t_out - t_in);
            } else {
                hl.push(t_out - t_in);
            }
        }
    }
    let (t_phl, t_plh) = (mean(&hl), mean(&lh));
    let t_p = match (t_phl, t_plh) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        _ => None,
    };
    let (t_r, t_f) = edge_times(t, vout, v_dd, settle);
    Ok(Metrics { t_phl, t_plh, t_p, t_r, t_f, ro_period: None, ro_freq: None })
}

/// Ring-oscillator metrics: stage delay from `input` to `output` and the
/// period from rising mid-rail crossings of `input`.
pub fn measure_ro(res: &TranResult, input: &str, output: &str, v_dd: f64, settle: f64) -> Result<Metrics> {
    let mut m = measure(res, input, output, v_dd, settle)?;
    let rising: Vec<f64> = crossings(&res.time, res.node(input)?, 0.5 * v_dd).into_iter().filter(|c| c.1 && c.0 >= settle).map(|c| c.0).collect();
    if rising.len() < 2 {
        return Err(Error::Numerical(format!("`{input}` completes fewer than one period after {settle:e} s")));
    }
    let period = (rising[rising.len() - 1] - rising[0]) / (rising.len() - 1) as f64;
    m.ro_period = Some(period);
    m.ro_freq = Some(1.0 / period);
    Ok(m)
}
