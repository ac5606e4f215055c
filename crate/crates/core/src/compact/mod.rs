//! Temperature-dependent surrogate transistor model.
//!
//! ```text
//! vth  = vth0 + alpha_vt (T - T0) - dibl v_ds
//! q_i  = n v_t ln(1 + exp((v_gs - vth) / (n v_t)))
//! vdse = v_ds / (1 + (v_ds / q_i)^4)^(1/4)
//! i_ds = k_g (T / T0)^(-beta_mu) q_i vdse (1 + lambda v_ds)
//! ```
//!
//! Negative `v_ds` swaps source and drain. PFETs are evaluated on mirrored
//! biases, so every parameter is in magnitude convention.

mod extract;
mod reference;

pub use extract::{extract_isothermal, extract_thermal, iv_rmse, self_consistent_temperature, IsoFit, ThermalFit};
pub use reference::{reference_curves, ReferenceDevice};

use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, Table};
use crate::{Device, Error, Flavor, Result};

/// Boltzmann constant over elementary charge, V/K.
pub const KB_OVER_Q: f64 = 8.617_333_262e-5;
/// Supply voltage of the default cards, V.
pub const VDD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactModelParams {
    pub polarity: Device,
    /// V.
    pub vth0: f64,
    pub n_ss: f64,
    /// Gain factor at `t0`, A/V^2.
    pub k_g: f64,
    /// V/V.
    pub dibl: f64,
    /// 1/V.
    pub lambda: f64,
    /// V/K; negative means the threshold magnitude falls with temperature.
    pub alpha_vt: f64,
    pub beta_mu: f64,
    /// K.
    pub t0: f64,
    /// F.
    pub c_gs: f64,
    /// F.
    pub c_gd: f64,
}

/// Current and its bias derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdsEval {
    pub ids: f64,
    pub d_vgs: f64,
    pub d_vds: f64,
}

impl CompactModelParams {
    /// Uncalibrated defaults; `k_g` is set by [`Self::calibrated`].
    pub fn base(polarity: Device) -> Self {
        let (vth0, n_ss, dibl, lambda, alpha_vt, beta_mu) = match polarity {
            Device::N => (0.25, 1.2, 0.04, 0.05, -0.5e-3, 1.5),
            Device::P => (0.27, 1.25, 0.05, 0.06, -0.35e-3, 1.6),
        };
        CompactModelParams { polarity, vth0, n_ss, k_g: 1e-4, dibl, lambda, alpha_vt, beta_mu, t0: 300.0, c_gs: 0.1e-15, c_gd: 0.1e-15 }
    }

    /// Default card with `k_g` scaled so `I_on V_DD` equals the flavor's device power.
    pub fn calibrated(flavor: Flavor, polarity: Device) -> Self {
        let mut p = Self::base(polarity);
        p.calibrate_power(VDD, device_power(flavor, polarity));
        p
    }

    /// Rescales `k_g` so the isothermal on-current at `v_gs = v_ds = v_dd` dissipates `power`.
    pub fn calibrate_power(&mut self, v_dd: f64, power: f64) {
        let unit = CompactModelParams { k_g: 1.0, ..self.clone() };
        let i = unit.ids_magnitude(v_dd, v_dd, unit.t0).ids;
        self.k_g = power / (v_dd * i);
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k_g > 0.0
            && self.n_ss >= 1.0
            && self.beta_mu >= 0.0
            && self.t0 > 0.0
            && self.lambda >= 0.0
            && self.c_gs >= 0.0
            && self.c_gd >= 0.0
            && [self.vth0, self.dibl, self.alpha_vt].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid compact model parameters: {self:?}")))
        }
    }

    /// Drain current in terminal convention: positive into the drain of an
    /// NFET, negative for a conducting PFET.
    pub fn ids(&self, v_gs: f64, v_ds: f64, temp: f64) -> IdsEval {
        match self.polarity {
            Device::N => self.ids_magnitude(v_gs, v_ds, temp),
            Device::P => {
                let e = self.ids_magnitude(-v_gs, -v_ds, temp);
                IdsEval { ids: -e.ids, d_vgs: e.d_vgs, d_vds: e.d_vds }
            }
        }
    }

    /// NFET-form evaluation with source/drain swap for negative `v_ds`.
    pub fn ids_magnitude(&self, v_gs: f64, v_ds: f64, temp: f64) -> IdsEval {
        if v_ds >= 0.0 {
            self.forward(v_gs, v_ds, temp)
        } else {
            let f = self.forward(v_gs - v_ds, -v_ds, temp);
            IdsEval { ids: -f.ids, d_vgs: -f.d_vgs, d_vds: f.d_vgs + f.d_vds }
        }
    }

    fn forward(&self, v_gs: f64, v_ds: f64, temp: f64) -> IdsEval {
        let vt = KB_OVER_Q * temp;
        let nvt = self.n_ss * vt;
        let vth = self.vth0 + self.alpha_vt * (temp - self.t0) - self.dibl * v_ds;
        let x = (v_gs - vth) / nvt;
        let q = nvt * softplus(x);
        let sig = sigmoid(x);
        let (h, hp, uhp) = saturation(v_ds, q);
        let vdse = q * h;
        let dq_dvgs = sig;
        let dq_dvds = sig * self.dibl;
        // d vdse / d q at fixed v_ds, and d vdse / d v_ds at fixed q.
        let dvdse_dq = h - uhp;
        let dvdse_dvds = hp;
        let kt = self.k_g * (temp / self.t0).powf(-self.beta_mu);
        let clm = 1.0 + self.lambda * v_ds;
        let core = q * vdse;
        let dcore_dvgs = dq_dvgs * vdse + q * dvdse_dq * dq_dvgs;
        let dcore_dvds = dq_dvds * vdse + q * (dvdse_dvds + dvdse_dq * dq_dvds);
        IdsEval { ids: kt * core * clm, d_vgs: kt * dcore_dvgs * clm, d_vds: kt * (dcore_dvds * clm + core * self.lambda) }
    }

    /// Threshold voltage magnitude at `temp` and `v_ds`.
    pub fn vth(&self, v_ds: f64, temp: f64) -> f64 {
        self.vth0 + self.alpha_vt * (temp - self.t0) - self.dibl * v_ds
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// With `u = v_ds / q`: `h = u (1 + u^4)^(-1/4)`, `h' = (1 + u^4)^(-5/4)` and `u h'`.
fn saturation(v_ds: f64, q: f64) -> (f64, f64, f64) {
    if v_ds <= q {
        if q == 0.0 {
            return (0.0, 1.0, 0.0);
        }
        let u = v_ds / q;
        let s = 1.0 + u.powi(4);
        let hp = s.powf(-1.25);
        (u * s.powf(-0.25), hp, u * hp)
    } else {
        // Large u: rewrite in w = 1/u so a vanishing q stays finite.
        let w = q / v_ds;
        let w4 = w.powi(4);
        let s = 1.0 + w4;
        (s.powf(-0.25), w4 * w * s.powf(-1.25), w4 * s.powf(-1.25))
    }
}

/// Device power used for calibration, W.
pub fn device_power(flavor: Flavor, d: Device) -> f64 {
    match (flavor, d) {
        (Flavor::Nsfet, Device::N) => 56e-6,
        (Flavor::Nsfet, Device::P) => 50.5e-6,
        (Flavor::Cfet, Device::N) => 95.4e-6,
        (Flavor::Cfet, Device::P) => 86.6e-6,
    }
}

/// `v_gs*` at which the drain current is first-order insensitive to temperature.
pub fn ztc_point(params: &CompactModelParams, v_ds: f64, v_max: f64) -> Result<f64> {
    let t = params.t0;
    let slope = |vg: f64| params.ids_magnitude(vg, v_ds, t + 0.5).ids - params.ids_magnitude(vg, v_ds, t - 0.5).ids;
    let n = 200;
    let grid: Vec<f64> = (0..=n).map(|k| v_max * k as f64 / n as f64).collect();
    let mut bracket = None;
    for w in grid.windows(2) {
        let (a, b) = (slope(w[0]), slope(w[1]));
        if a > 0.0 && b <= 0.0 {
            bracket = Some((w[0], w[1]));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| Error::Numerical("no ZTC in range".into()))?;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Temperature of an IV sample: a fixed value or self-heated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleTemp {
    Kelvin(f64),
    SelfHeated,
}

/// One bias point in magnitude convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvPoint {
    pub v_gs: f64,
    pub v_ds: f64,
    pub temp: SampleTemp,
    pub i_ds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvCurveSet {
    pub device: Device,
    pub label: String,
    pub v_dd: f64,
    pub points: Vec<IvPoint>,
}

impl IvCurveSet {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config(format!("IV set `{}` is empty", self.label)));
        }
        for p in &self.points {
            if !(p.i_ds >= 0.0 && p.i_ds.is_finite() && p.v_gs.is_finite() && p.v_ds.is_finite()) {
                return Err(Error::Config(format!("IV set `{}` has an invalid point {p:?}", self.label)));
            }
        }
        Ok(())
    }

    /// `v_gs,v_ds,temp_K,i_ds_A` with device, label and supply in a comment row.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["v_gs", "v_ds", "temp_K", "i_ds_A"]);
        t.comments.push(format!("device={} label={} v_dd={}", self.device.tag(), self.label, fmt_f64(self.v_dd)));
        for p in &self.points {
            let temp = match p.temp {
                SampleTemp::Kelvin(k) => fmt_f64(k),
                SampleTemp::SelfHeated => "she".to_string(),
            };
            t.push_row(vec![fmt_f64(p.v_gs), fmt_f64(p.v_ds), temp, fmt_f64(p.i_ds)]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let device = t.comment_value("device").unwrap_or("n").parse::<Device>()?;
        let v_dd = match t.comment_value("v_dd") {
            Some(v) => v.parse::<f64>().map_err(|_| Error::Parse(format!("bad v_dd `{v}`")))?,
            None => VDD,
        };
        let label = t.comment_value("label").unwrap_or("iv").to_string();
        let vg = t.column("v_gs")?;
        let vd = t.column("v_ds")?;
        let id = t.column("i_ds_A")?;
        let temps = t.column_str("temp_K")?;
        let mut points = Vec::with_capacity(vg.len());
        for (k, s) in temps.iter().enumerate() {
            let temp = if s.trim().eq_ignore_ascii_case("she") {
                SampleTemp::SelfHeated
            } else {
                SampleTemp::Kelvin(s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad temperature `{s}`", k + 1)))?)
            };
            points.push(IvPoint { v_gs: vg[k].abs(), v_ds: vd[k].abs(), temp, i_ds: id[k].abs() });
        }
        let set = IvCurveSet { device, label, v_dd, points };
        set.validate()?;
        Ok(set)
    }
}

/// Model card as emitted to JSON, with the self-heating switch the simulator reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    #[serde(flatten)]
    pub params: CompactModelParams,
    pub shmod: u8,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(p: &CompactModelParams, vg: f64, vd: f64, t: f64) {
        let e = p.ids(vg, vd, t);
        let h = 1e-6;
        let dg = (p.ids(vg + h, vd, t).ids - p.ids(vg - h, vd, t).ids) / (2.0 * h);
        let dd = (p.ids(vg, vd + h, t).ids - p.ids(vg, vd - h, t).ids) / (2.0 * h);
        let scale_g = e.d_vgs.abs().max(dg.abs()).max(1e-30);
        let scale_d = e.d_vds.abs().max(dd.abs()).max(1e-30);
        // Absolute floor well below any current the simulator resolves.
        assert!((e.d_vgs - dg).abs() <= 1e-6 * scale_g + 1e-16, "d_vgs at ({vg},{vd}): {} vs {dg}", e.d_vgs);
        assert!((e.d_vds - dd).abs() <= 1e-6 * scale_d + 1e-16, "d_vds at ({vg},{vd}): {} vs {dd}", e.d_vds);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for d in Device::BOTH {
            let p = CompactModelParams::calibrated(Flavor::Nsfet, d);
            let s = if d == Device::N { 1.0 } else { -1.0 };
            for i in 0..20 {
                for j in 0..20 {
                    let vg = s * (0.013 + 0.7 * i as f64 / 19.0);
                    let vd = s * (0.011 + 0.7 * j as f64 / 19.0);
                    fd_check(&p, vg, vd, 300.0);
                    fd_check(&p, vg, -vd, 360.0);
                }
            }
        }
    }

    #[test]
    fn zero_drain_bias_gives_zero_current() {
        let p = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        assert_eq!(p.ids(0.7, 0.0, 300.0).ids, 0.0);
    }

    #[test]
    fn linear_region_limit() {
        let p = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        let (vg, vd, t) = (1.5, 1e-4, 330.0);
        let want = p.k_g * (t / p.t0).powf(-p.beta_mu) * (vg - p.vth(vd, t)) * vd;
        let got = p.ids(vg, vd, t).ids;
        assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn calibration_hits_target_power() {
        for f in Flavor::BOTH {
            for d in Device::BOTH {
                let p = CompactModelParams::calibrated(f, d);
                let s = if d == Device::N { 1.0 } else { -1.0 };
                let pw = p.ids(s * VDD, s * VDD, 300.0).ids.abs() * VDD;
                assert!((pw / device_power(f, d) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pfet_mirrors_nfet() {
        let n = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        let p = CompactModelParams { polarity: Device::P, ..n.clone() };
        for &(vg, vd) in &[(0.4, 0.3), (0.7, 0.05), (0.1, 0.7), (0.5, -0.2)] {
            let a = n.ids(vg, vd, 310.0);
            let b = p.ids(-vg, -vd, 310.0);
            assert!((a.ids + b.ids).abs() <= 1e-15 * a.ids.abs().max(1e-30));
            assert!((a.d_vgs - b.d_vgs).abs() <= 1e-12 * a.d_vgs.abs().max(1e-30));
        }
    }

    #[test]
    fn monotone_in_both_biases() {
        let p = CompactModelParams::calibrated(Flavor::Cfet, Device::N);
        for i in 0..60 {
            for j in 0..60 {
                let (vg, vd) = (i as f64 * 0.0125, j as f64 * 0.0125);
                let e = p.ids(vg, vd, 300.0);
                assert!(e.d_vgs >= 0.0 && e.d_vds >= 0.0, "({vg},{vd})");
            }
        }
    }

    #[test]
    fn ztc_exists_and_pfet_is_lower() {
        let n = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        let p = CompactModelParams::calibrated(Flavor::Nsfet, Device::P);
        let vn = ztc_point(&n, VDD, VDD).unwrap();
        let vp = ztc_point(&p, VDD, VDD).unwrap();
        assert!(vn > 0.0 && vn < VDD && vp > 0.0 && vp < VDD);
        assert!(vp < vn, "{vp} vs {vn}");
        // Brute-force scan of the 300 K / 320 K current change.
        let rel = |vg: f64| (n.ids(vg, VDD, 320.0).ids - n.ids(vg, VDD, 300.0).ids) / n.ids(vg, VDD, 300.0).ids;
        assert!(rel(vn).abs() < 0.005);
        assert!(rel(vn - 0.1) > 0.0 && rel(vn + 0.1) < 0.0);
    }

    #[test]
    fn no_mobility_term_means_no_ztc() {
        let mut n = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        n.beta_mu = 0.0;
        assert!(ztc_point(&n, VDD, VDD).is_err());
    }

    #[test]
    fn tiny_input_steps_give_tiny_current_steps() {
        let p = CompactModelParams::calibrated(Flavor::Nsfet, Device::N);
        let mut worst: f64 = 0.0;
        for k in -700..=700 {
            let v = k as f64 * 1e-3;
            let a = p.ids(0.7, v, 300.0).ids;
            let b = p.ids(0.7, v + 1e-6, 300.0).ids;
            worst = worst.max((a - b).abs());
        }
        // 1 uV times the largest output conductance, with margin.
        assert!(worst < 1e-6 * 1e-3, "{worst}");
    }

    #[test]
    fn iv_csv_round_trip() {
        let set = IvCurveSet {
            device: Device::P,
            label: "ref".into(),
            v_dd: 0.7,
            points: vec![
                IvPoint { v_gs: 0.7, v_ds: 0.05, temp: SampleTemp::Kelvin(300.0), i_ds: 1e-5 },
                IvPoint { v_gs: 0.7, v_ds: 0.7, temp: SampleTemp::SelfHeated, i_ds: 7e-5 },
            ],
        };
        let text = set.to_table().to_string_pretty().unwrap();
        assert!(text.contains(",she,"));
        assert_eq!(IvCurveSet::from_table(&Table::parse(&text).unwrap()).unwrap(), set);
    }

    #[test]
    fn card_json_carries_shmod() {
        let card = ModelCard { params: CompactModelParams::calibrated(Flavor::Nsfet, Device::N), shmod: 1 };
        let v = serde_json::to_value(&card).unwrap();
        assert_eq!(v["shmod"], 1);
        assert_eq!(v["polarity"], "n");
        let back: ModelCard = serde_json::from_value(v).unwrap();
        assert_eq!(back, card);
    }
}
