//! Two-phase parameter extraction: isothermal electrical parameters first,
//! then the temperature coefficients from self-heated curves.

use super::{CompactModelParams, IvCurveSet, IvPoint, SampleTemp, KB_OVER_Q};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::{Error, Result};

const FIXED_POINT_TOL: f64 = 1e-3;
const FIXED_POINT_ITERS: usize = 100;
const FIXED_POINT_DAMPING: f64 = 0.6;

#[derive(Debug, Clone)]
pub struct IsoFit {
    pub params: CompactModelParams,
    /// RMS relative current error over all points.
    pub rmse: f64,
    /// Staged estimate before the global refinement.
    pub initial: CompactModelParams,
}

#[derive(Debug, Clone)]
pub struct ThermalFit {
    pub params: CompactModelParams,
    pub rmse: f64,
}

/// Relative error with a denominator floor far below any resolved current.
fn rel_err(model: f64, meas: f64, floor: f64) -> f64 {
    (model - meas) / meas.max(floor)
}

fn current_floor(curves: &IvCurveSet) -> f64 {
    1e-12 * curves.points.iter().map(|p| p.i_ds).fold(0.0, f64::max)
}

/// Points sharing one drain bias, sorted by gate bias.
fn transfer_groups(points: &[IvPoint]) -> Vec<(f64, Vec<IvPoint>)> {
    group_by(points, |p| p.v_ds, |p| p.v_gs)
}

/// Points sharing one gate bias, sorted by drain bias.
fn output_groups(points: &[IvPoint]) -> Vec<(f64, Vec<IvPoint>)> {
    group_by(points, |p| p.v_gs, |p| p.v_ds)
}

fn group_by(points: &[IvPoint], key: impl Fn(&IvPoint) -> f64, sort: impl Fn(&IvPoint) -> f64) -> Vec<(f64, Vec<IvPoint>)> {
    let mut groups: Vec<(f64, Vec<IvPoint>)> = Vec::new();
    for p in points {
        let k = key(p);
        match groups.iter_mut().find(|(g, _)| (g - k).abs() < 1e-9) {
            Some((_, v)) => v.push(*p),
            None => groups.push((k, vec![*p])),
        }
    }
    for (_, v) in groups.iter_mut() {
        v.sort_by(|a, b| sort(a).total_cmp(&sort(b)));
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
}

/// Gate bias at which a sorted transfer curve crosses `level`, by log interpolation.
fn crossing(curve: &[IvPoint], level: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if a.i_ds > 0.0 && a.i_ds <= level && b.i_ds >= level {
            let f = (level.ln() - a.i_ds.ln()) / (b.i_ds.ln() - a.i_ds.ln());
            Some(a.v_gs + f * (b.v_gs - a.v_gs))
        } else {
            None
        }
    })
}

fn uniform_temperature(curves: &IvCurveSet) -> Result<f64> {
    let mut temp = None;
    for p in &curves.points {
        match p.temp {
            SampleTemp::Kelvin(t) => match temp {
                None => temp = Some(t),
                Some(t0) if (t0 - t).abs() > 1e-9 => return Err(Error::Config("isothermal extraction needs a single temperature".into())),
                _ => {}
            },
            SampleTemp::SelfHeated => return Err(Error::Config("isothermal extraction got self-heated points".into())),
        }
    }
    temp.ok_or_else(|| Error::Config("no IV points".into()))
}

/// Staged estimate of `vth0`, `n_ss`, `k_g`, `dibl` and `lambda`, then a
/// simplex refinement of all five on RMS relative current error.
///
/// `start` supplies polarity, temperature coefficients and capacitances.
pub fn extract_isothermal(curves: &IvCurveSet, start: &CompactModelParams) -> Result<IsoFit> {
    curves.validate()?;
    let temp = uniform_temperature(curves)?;
    let vt = KB_OVER_Q * temp;
    let transfer: Vec<(f64, Vec<IvPoint>)> = transfer_groups(&curves.points).into_iter().filter(|(vd, g)| *vd > 0.0 && g.len() >= 5).collect();
    let (vd_lo, low) = transfer.first().cloned().ok_or_else(|| Error::Config("no transfer curve with at least 5 gate biases".into()))?;

    // Subthreshold slope. There v_ds >> q_i, so the current goes as q_i^2.
    let imax = low.iter().map(|p| p.i_ds).fold(0.0, f64::max);
    let sub: Vec<&IvPoint> = low.iter().filter(|p| p.i_ds > 0.0 && p.i_ds <= 1e-2 * imax).collect();
    let span = sub.iter().map(|p| p.i_ds).fold(0.0, f64::max) / sub.iter().map(|p| p.i_ds).fold(f64::INFINITY, f64::min);
    if sub.len() < 3 || !(span >= 10.0) {
        return Err(Error::Config("curves missing subthreshold decade".into()));
    }
    let (sx, sy): (Vec<f64>, Vec<f64>) = sub.iter().map(|p| (p.v_gs, p.i_ds.ln())).unzip();
    let slope = linear_slope(&sx, &sy);
    let n0 = (2.0 / (slope * vt)).max(1.0);

    // Maximum-transconductance extrapolation on the low-drain curve.
    let (mut gm_best, mut k_best) = (0.0, 0);
    for k in 1..low.len() - 1 {
        let gm = (low[k + 1].i_ds - low[k - 1].i_ds) / (low[k + 1].v_gs - low[k - 1].v_gs);
        if gm > gm_best {
            gm_best = gm;
            k_best = k;
        }
    }
    if gm_best <= 0.0 {
        return Err(Error::Config("transfer curve has no rising section".into()));
    }
    let v_ext = low[k_best].v_gs - low[k_best].i_ds / gm_best;
    let thermal = (temp / start.t0).powf(-start.beta_mu);

    // DIBL from the constant-current gate shift between low and high drain bias.
    let mut dibl0 = start.dibl;
    if let Some((vd_hi, high)) = transfer.last().filter(|(vd, _)| *vd > vd_lo + 0.1) {
        let level = (sub.iter().map(|p| p.i_ds.ln()).sum::<f64>() / sub.len() as f64).exp();
        if let (Some(a), Some(b)) = (crossing(&low, level), crossing(high, level)) {
            dibl0 = ((a - b) / (vd_hi - vd_lo)).clamp(0.0, 0.3);
        }
    }
    let vth00 = v_ext + dibl0 * vd_lo - start.alpha_vt * (temp - start.t0);
    let k0 = gm_best / (vd_lo * thermal);

    // Output conductance at the highest gate bias.
    let mut lambda0 = start.lambda;
    if let Some((_, out)) = output_groups(&curves.points).into_iter().rfind(|(_, g)| g.len() >= 4) {
        let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
        if b.v_ds > a.v_ds && b.i_ds > 0.0 {
            lambda0 = ((b.i_ds - a.i_ds) / (b.v_ds - a.v_ds) / b.i_ds).clamp(0.0, 0.5);
        }
    }

    let initial = CompactModelParams { vth0: vth00, n_ss: n0, k_g: k0, dibl: dibl0, lambda: lambda0, ..start.clone() };
    let floor = current_floor(curves);
    let pack = |p: &CompactModelParams| vec![p.vth0, p.n_ss, p.k_g.ln(), p.dibl, p.lambda];
    let unpack = |x: &[f64]| CompactModelParams { vth0: x[0], n_ss: x[1], k_g: x[2].exp(), dibl: x[3], lambda: x[4], ..start.clone() };
    let objective = |x: &[f64]| {
        if x[1] < 1.0 || x[4] < 0.0 {
            return f64::INFINITY;
        }
        let p = unpack(x);
        iso_rmse(&p, &curves.points, temp, floor)
    };
    let mut x = pack(&initial);
    let mut best = objective(&x);
    let opts = SimplexOptions { max_evals: 4000, ..Default::default() };
    for round in 0..4 {
        let scale = 0.5f64.powi(round);
        let step = [0.02 * scale, 0.05 * scale, 0.1 * scale, 0.01 * scale, 0.01 * scale];
        let res = nelder_mead(objective, &x, &step, &opts);
        if res.f <= best {
            best = res.f;
            x = res.x;
        }
    }
    let params = unpack(&x);
    params.validate()?;
    Ok(IsoFit { params, rmse: best, initial })
}

fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn iso_rmse(p: &CompactModelParams, points: &[IvPoint], temp: f64, floor: f64) -> f64 {
    let sq: f64 = points.iter().map(|pt| rel_err(p.ids_magnitude(pt.v_gs, pt.v_ds, temp).ids, pt.i_ds, floor).powi(2)).sum();
    (sq / points.len() as f64).sqrt()
}

/// Solves `T = T0 + rth i_ds(T) v_ds` by damped fixed-point iteration.
pub fn self_consistent_temperature(p: &CompactModelParams, v_gs: f64, v_ds: f64, rth: f64, ambient: f64) -> Result<f64> {
    let mut t = ambient;
    for _ in 0..FIXED_POINT_ITERS {
        let target = ambient + rth * p.ids_magnitude(v_gs, v_ds, t).ids * v_ds;
        let next = t + FIXED_POINT_DAMPING * (target - t);
        if !next.is_finite() || next <= 0.0 {
            break;
        }
        if (next - t).abs() < FIXED_POINT_TOL {
            return Ok(next);
        }
        t = next;
    }
    Err(Error::NoConvergence { what: format!("self-heating fixed point at v_gs={v_gs} V, v_ds={v_ds} V"), residual: t })
}

/// RMS relative error of `p` on a mixed set: fixed-temperature points at
/// their temperature, self-heated points at their self-consistent temperature.
pub fn iv_rmse(p: &CompactModelParams, curves: &IvCurveSet, rth: f64) -> Result<f64> {
    let floor = current_floor(curves);
    let mut sq = 0.0;
    for pt in &curves.points {
        let t = match pt.temp {
            SampleTemp::Kelvin(t) => t,
            SampleTemp::SelfHeated => self_consistent_temperature(p, pt.v_gs, pt.v_ds, rth, p.t0)?,
        };
        sq += rel_err(p.ids_magnitude(pt.v_gs, pt.v_ds, t).ids, pt.i_ds, floor).powi(2);
    }
    Ok((sq / curves.points.len() as f64).sqrt())
}

/// Fits `alpha_vt` and `beta_mu` with the isothermal parameters held fixed.
///
/// `rth` is the device's steady self thermal resistance, K/W.
pub fn extract_thermal(curves: &IvCurveSet, iso: &CompactModelParams, rth: f64) -> Result<ThermalFit> {
    curves.validate()?;
    iso.validate()?;
    if !(rth > 0.0) {
        return Err(Error::Config("thermal resistance is zero: temperature coefficients are unidentifiable from self-heated curves".into()));
    }
    if !curves.points.iter().any(|p| p.temp == SampleTemp::SelfHeated) {
        return Err(Error::Config("thermal extraction needs self-heated points".into()));
    }
    let with = |x: &[f64]| CompactModelParams { alpha_vt: x[0] * 1e-3, beta_mu: x[1], ..iso.clone() };
    // Surface fixed-point failures at the starting point; later failures just
    // mark that candidate as infeasible.
    let start = [iso.alpha_vt * 1e3, iso.beta_mu];
    let f0 = iv_rmse(&with(&start), curves, rth)?;
    let objective = |x: &[f64]| if x[1] < 0.0 { f64::INFINITY } else { iv_rmse(&with(x), curves, rth).unwrap_or(f64::INFINITY) };
    let mut x = start.to_vec();
    let mut best = f0;
    let opts = SimplexOptions { max_evals: 1500, ..Default::default() };
    for round in 0..3 {
        let scale = 0.5f64.powi(round);
        let res = nelder_mead(objective, &x, &[0.1 * scale, 0.2 * scale], &opts);
        if res.f <= best {
            best = res.f;
            x = res.x;
        }
    }
    let params = with(&x);
    // Re-run once so a fixed-point failure at the answer is reported by bias.
    let rmse = iv_rmse(&params, curves, rth)?;
    Ok(ThermalFit { params, rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Device, Flavor};

    pub(crate) fn synth(p: &CompactModelParams, temp: SampleTemp, rth: f64) -> IvCurveSet {
        let mut points = Vec::new();
        let mut push = |vg: f64, vd: f64| {
            let t = match temp {
                SampleTemp::Kelvin(t) => t,
                SampleTemp::SelfHeated => self_consistent_temperature(p, vg, vd, rth, p.t0).unwrap(),
            };
            points.push(IvPoint { v_gs: vg, v_ds: vd, temp, i_ds: p.ids_magnitude(vg, vd, t).ids });
        };
        for k in 0..=28 {
            let vg = 0.025 * k as f64;
            push(vg, 0.05);
            push(vg, 0.7);
        }
        for vg in [0.3, 0.45, 0.6, 0.7] {
            for k in 1..=14 {
                push(vg, 0.05 * k as f64);
            }
        }
        IvCurveSet { device: p.polarity, label: "golden".into(), v_dd: 0.7, points }
    }

    #[test]
    fn isothermal_round_trip() {
        for d in Device::BOTH {
            let mut golden = CompactModelParams::calibrated(Flavor::Nsfet, d);
            golden.vth0 += 0.013;
            golden.lambda *= 1.3;
            let curves = synth(&golden, SampleTemp::Kelvin(300.0), 0.0);
            let fit = extract_isothermal(&curves, &CompactModelParams::base(d)).unwrap();
            let p = &fit.params;
            for (name, a, b) in [
                ("vth0", p.vth0, golden.vth0),
                ("n_ss", p.n_ss, golden.n_ss),
                ("k_g", p.k_g, golden.k_g),
                ("dibl", p.dibl, golden.dibl),
                ("lambda", p.lambda, golden.lambda),
            ] {
                assert!((a / b - 1.0).abs() < 0.03, "{d} {name}: {a} vs {b}");
            }
            assert!(fit.rmse < 0.01);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let golden = CompactModelParams::calibrated(Flavor::Cfet, Device::N);
        let curves = synth(&golden, SampleTemp::Kelvin(300.0), 0.0);
        let a = extract_isothermal(&curves, &CompactModelParams::base(Device::N)).unwrap();
        let b = extract_isothermal(&curves.clone(), &CompactModelParams::base(Device::N)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn missing_subthreshold_rejected() {
        let golden = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        let mut curves = synth(&golden, SampleTemp::Kelvin(300.0), 0.0);
        curves.points.retain(|p| p.v_gs >= 0.45);
        let err = extract_isothermal(&curves, &golden).unwrap_err();
        assert!(err.to_string().contains("subthreshold"));
    }

    #[test]
    fn thermal_round_trip() {
        let rth = 2.4e6;
        for d in Device::BOTH {
            let golden = CompactModelParams::calibrated(Flavor::Nsfet, d);
            let curves = synth(&golden, SampleTemp::SelfHeated, rth);
            let start = CompactModelParams { alpha_vt: golden.alpha_vt * 0.5, beta_mu: golden.beta_mu * 0.6, ..golden.clone() };
            let fit = extract_thermal(&curves, &start, rth).unwrap();
            assert!((fit.params.alpha_vt / golden.alpha_vt - 1.0).abs() < 0.05, "{d} alpha {}", fit.params.alpha_vt);
            assert!((fit.params.beta_mu / golden.beta_mu - 1.0).abs() < 0.05, "{d} beta {}", fit.params.beta_mu);
        }
    }

    #[test]
    fn zero_rth_rejected() {
        let golden = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        let curves = synth(&golden, SampleTemp::SelfHeated, 1e6);
        assert!(extract_thermal(&curves, &golden, 0.0).is_err());
    }

    #[test]
    fn self_heating_lowers_strong_inversion_current() {
        let p = CompactModelParams::calibrated(Flavor::Cfet, Device::P);
        let t = self_consistent_temperature(&p, 0.7, 0.7, 2.9e6, 300.0).unwrap();
        assert!(t > 300.0);
        assert!(p.ids_magnitude(0.7, 0.7, t).ids <= p.ids_magnitude(0.7, 0.7, 300.0).ids);
    }
}
