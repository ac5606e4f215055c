//! Reference IV generator standing in for device-simulator curves.
//!
//! It extends the surrogate with source/drain series resistance, vertical
//! field mobility degradation and a softer saturation knee, so extraction
//! against it is a fit to a different model rather than a round trip.

use serde::{Deserialize, Serialize};

use super::{CompactModelParams, IvCurveSet, IvPoint, SampleTemp, KB_OVER_Q};
use crate::{Device, Error, Flavor, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDevice {
    pub core: CompactModelParams,
    /// Series resistance at each of source and drain, ohm.
    pub r_series: f64,
    /// Mobility degradation per volt of inversion charge, 1/V.
    pub theta: f64,
    /// Saturation knee exponent.
    pub knee: f64,
}

impl ReferenceDevice {
    /// Reference device for a flavor, gain rescaled so it dissipates the
    /// flavor's calibration power at full bias.
    pub fn for_flavor(flavor: Flavor, d: Device) -> Self {
        let core = CompactModelParams::calibrated(flavor, d);
        let mut dev = ReferenceDevice { core, r_series: 600.0, theta: 0.3, knee: 3.0 };
        let target = super::device_power(flavor, d) / super::VDD;
        // Series resistance makes current sublinear in gain, so iterate the rescale.
        for _ in 0..50 {
            let have = dev.current(super::VDD, super::VDD, dev.core.t0);
            if (have / target - 1.0).abs() < 1e-9 {
                break;
            }
            dev.core.k_g *= (target / have).powf(1.5);
        }
        dev
    }

    fn intrinsic(&self, v_gs: f64, v_ds: f64, temp: f64) -> f64 {
        let p = &self.core;
        let nvt = p.n_ss * KB_OVER_Q * temp;
        let x = (v_gs - p.vth(v_ds, temp)) / nvt;
        let q = nvt * if x > 30.0 { x } else { x.exp().ln_1p() };
        if q == 0.0 || v_ds <= 0.0 {
            return 0.0;
        }
        let vdse = v_ds / (1.0 + (v_ds / q).powf(self.knee)).powf(1.0 / self.knee);
        p.k_g * (temp / p.t0).powf(-p.beta_mu) * q * vdse * (1.0 + p.lambda * v_ds) / (1.0 + self.theta * q)
    }

    /// Drain current magnitude with series resistance, for `v_ds >= 0`.
    pub fn current(&self, v_gs: f64, v_ds: f64, temp: f64) -> f64 {
        let upper = self.intrinsic(v_gs, v_ds, temp);
        let (mut lo, mut hi) = (0.0, upper);
        // i - f(v_gs - i R, v_ds - 2 i R) increases with i, so bisect.
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let r = self.r_series;
            let g = mid - self.intrinsic(v_gs - mid * r, (v_ds - 2.0 * mid * r).max(0.0), temp);
            if g > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Temperature with the device's own dissipation through `rth`.
    pub fn self_heated_temperature(&self, v_gs: f64, v_ds: f64, rth: f64) -> Result<f64> {
        let ambient = self.core.t0;
        let mut t = ambient;
        for _ in 0..200 {
            let next = t + 0.6 * (ambient + rth * self.current(v_gs, v_ds, t) * v_ds - t);
            if (next - t).abs() < 1e-6 {
                return Ok(next);
            }
            t = next;
        }
        Err(Error::NoConvergence { what: format!("reference self-heating at v_gs={v_gs} v_ds={v_ds}"), residual: t })
    }
}

/// Transfer curves at low and full drain bias plus output curves, on a
/// 25 mV gate grid and 50 mV drain grid. With `rth = Some(_)` every point is
/// self-heated; otherwise all points are at the reference temperature.
pub fn reference_curves(dev: &ReferenceDevice, rth: Option<f64>) -> Result<IvCurveSet> {
    let v_dd = super::VDD;
    let mut points = Vec::new();
    let mut push = |vg: f64, vd: f64| -> Result<()> {
        let (temp, t) = match rth {
            Some(r) => (SampleTemp::SelfHeated, dev.self_heated_temperature(vg, vd, r)?),
            None => (SampleTemp::Kelvin(dev.core.t0), dev.core.t0),
        };
        points.push(IvPoint { v_gs: vg, v_ds: vd, temp, i_ds: dev.current(vg, vd, t) });
        Ok(())
    };
    for k in 0..=28 {
        let vg = 0.025 * k as f64;
        push(vg, 0.05)?;
        push(vg, v_dd)?;
    }
    for vg in [0.3, 0.4, 0.5, 0.6, 0.7] {
        for k in 1..=14 {
            push(vg, 0.05 * k as f64)?;
        }
    }
    let label = format!("reference-{}", if rth.is_some() { "she" } else { "iso" });
    Ok(IvCurveSet { device: dev.core.polarity, label, v_dd, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_hits_calibration_power() {
        for f in Flavor::BOTH {
            for d in Device::BOTH {
                let dev = ReferenceDevice::for_flavor(f, d);
                let p = dev.current(0.7, 0.7, 300.0) * 0.7;
                assert!((p / super::super::device_power(f, d) - 1.0).abs() < 1e-3, "{f} {d}: {p}");
            }
        }
    }

    #[test]
    fn series_resistance_lowers_current() {
        let mut dev = ReferenceDevice::for_flavor(Flavor::Nsfet, Device::N);
        let with = dev.current(0.7, 0.7, 300.0);
        dev.r_series = 0.0;
        assert!(dev.current(0.7, 0.7, 300.0) > with);
    }

    #[test]
    fn self_heated_curves_sit_below_isothermal_at_full_bias() {
        let dev = ReferenceDevice::for_flavor(Flavor::Nsfet, Device::N);
        let iso = reference_curves(&dev, None).unwrap();
        let she = reference_curves(&dev, Some(2.4e6)).unwrap();
        let pick = |s: &IvCurveSet| s.points.iter().find(|p| (p.v_gs - 0.7).abs() < 1e-9 && (p.v_ds - 0.7).abs() < 1e-9).unwrap().i_ds;
        assert!(pick(&she) < pick(&iso));
    }
}
