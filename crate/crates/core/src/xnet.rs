//! Cross-coupled thermal network of an N/P device pair.
//!
//! Four Foster ladders describe the pair: `z_ab` is the temperature rise at
//! device `b` per watt dissipated in device `a`. Each ladder is driven by the
//! full power of its heating device and the rises add by superposition, so no
//! explicit power-splitting branch is needed.

use serde::{Deserialize, Serialize};

use crate::fosterfit::{ga_fit, FitResult, FosterNetwork, FosterStage, GaConfig, MAX_ORDER};
use crate::heatsolve::ThermalStepResponse;
use crate::{Device, Error, Result};

/// Largest fit error accepted during assembly.
pub const MAX_FIT_RMSE: f64 = 0.05;

/// Ladder slots in the order nn, np, pn, pp.
pub const PAIRS: [(Device, Device); 4] = [(Device::N, Device::N), (Device::N, Device::P), (Device::P, Device::N), (Device::P, Device::P)];

fn slot(heater: Device, monitor: Device) -> usize {
    2 * heater.index() + monitor.index()
}

fn pair_name(heater: Device, monitor: Device) -> String {
    format!("{}{}", heater.tag(), monitor.tag())
}

/// The four step responses of a pair, indexed by (heater, monitor).
#[derive(Debug, Clone)]
pub struct PairResponses {
    curves: [ThermalStepResponse; 4],
}

impl PairResponses {
    /// From one heater-N and one heater-P run, each indexed by monitor.
    pub fn from_runs(n_heated: [ThermalStepResponse; 2], p_heated: [ThermalStepResponse; 2]) -> Result<Self> {
        let [nn, np] = n_heated;
        let [pn, pp] = p_heated;
        let curves = [nn, np, pn, pp];
        for (c, (h, m)) in curves.iter().zip(PAIRS) {
            if c.heater != h || c.monitor != m {
                return Err(Error::Config(format!("expected the {} response, got heater {} monitor {}", pair_name(h, m), c.heater, c.monitor)));
            }
        }
        Ok(PairResponses { curves })
    }

    pub fn get(&self, heater: Device, monitor: Device) -> &ThermalStepResponse {
        &self.curves[slot(heater, monitor)]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ThermalStepResponse> {
        self.curves.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevicePairThermalModel {
    ladders: [FosterNetwork; 4],
    /// Ambient, K.
    pub t0: f64,
}

impl DevicePairThermalModel {
    pub fn new(z_nn: FosterNetwork, z_np: FosterNetwork, z_pn: FosterNetwork, z_pp: FosterNetwork, t0: f64) -> Result<Self> {
        let m = DevicePairThermalModel { ladders: [z_nn, z_np, z_pn, z_pp], t0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::Config(format!("ambient must be positive, got {}", self.t0)));
        }
        for heater in Device::BOTH {
            let own = self.ladder(heater, heater).total_resistance();
            let cross = self.ladder(heater, heater.other()).total_resistance();
            if cross > own {
                return Err(Error::Invariant(format!(
                    "cross ladder {} ({cross:e} K/W) exceeds self ladder {} ({own:e} K/W)",
                    pair_name(heater, heater.other()),
                    pair_name(heater, heater)
                )));
            }
        }
        Ok(())
    }

    pub fn ladder(&self, heater: Device, monitor: Device) -> &FosterNetwork {
        &self.ladders[slot(heater, monitor)]
    }

    /// Steady rise at `monitor` per watt in `heater`, K/W.
    pub fn rth(&self, heater: Device, monitor: Device) -> f64 {
        self.ladder(heater, monitor).total_resistance()
    }

    /// Steady temperatures `(T_n, T_p)` under constant powers.
    pub fn steady_temperatures(&self, p_n: f64, p_p: f64) -> (f64, f64) {
        let t_n = self.t0 + p_n * self.rth(Device::N, Device::N) + p_p * self.rth(Device::P, Device::N);
        let t_p = self.t0 + p_p * self.rth(Device::P, Device::P) + p_n * self.rth(Device::N, Device::P);
        (t_n, t_p)
    }

    pub fn to_json(&self) -> ModelJson {
        let conv = |n: &FosterNetwork| n.stages().iter().map(|s| LadderStage { r: s.r, c: s.c, tau: s.tau() }).collect::<Vec<_>>();
        ModelJson {
            t0_K: self.t0,
            ladders: Ladders { nn: conv(&self.ladders[0]), np: conv(&self.ladders[1]), pn: conv(&self.ladders[2]), pp: conv(&self.ladders[3]) },
        }
    }

    pub fn from_json(j: &ModelJson) -> Result<Self> {
        let conv = |v: &[LadderStage]| FosterNetwork::new(v.iter().map(|s| FosterStage { r: s.r, c: s.c }).collect());
        let l = &j.ladders;
        Self::new(conv(&l.nn)?, conv(&l.np)?, conv(&l.pn)?, conv(&l.pp)?, j.t0_K)
    }
}

/// Serialized model: `{t0_K, ladders:{nn,np,pn,pp}:[{r,c,tau}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ModelJson {
    pub t0_K: f64,
    pub ladders: Ladders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladders {
    pub nn: Vec<LadderStage>,
    pub np: Vec<LadderStage>,
    pub pn: Vec<LadderStage>,
    pub pp: Vec<LadderStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStage {
    pub r: f64,
    pub c: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyConfig {
    pub ga: GaConfig,
    /// Error floor for self curves, as a fraction of the final value.
    pub self_floor: f64,
    /// Error floor for cross curves. A cross response starts after a
    /// diffusion delay that no positive Foster ladder reproduces, so pointwise
    /// relative error there rewards a ladder that is far too slow; the default
    /// of one normalises errors by the steady value instead.
    pub cross_floor: f64,
    /// Stages are added beyond the spectrum order while the fit error exceeds this.
    pub target_rmse: Option<f64>,
    /// Ambient, K.
    pub ambient: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig { ga: GaConfig::default(), self_floor: 1e-3, cross_floor: 1.0, target_rmse: Some(0.035), ambient: 300.0 }
    }
}

impl AssemblyConfig {
    pub fn floor(&self, heater: Device, monitor: Device) -> f64 {
        if heater == monitor {
            self.self_floor
        } else {
            self.cross_floor
        }
    }

    pub fn ga_for(&self, heater: Device, monitor: Device) -> GaConfig {
        GaConfig { relative_floor: self.floor(heater, monitor), ..self.ga.clone() }
    }
}

/// Fits one curve starting at `order`, adding stages while the error is above target.
pub fn fit_curve(resp: &ThermalStepResponse, order: usize, cfg: &AssemblyConfig) -> Result<FitResult> {
    let ga = cfg.ga_for(resp.heater, resp.monitor);
    let mut n = order.max(1);
    let mut best = ga_fit(resp, n, &ga)?;
    while let Some(target) = cfg.target_rmse {
        if best.rmse <= target || n >= MAX_ORDER {
            break;
        }
        n += 1;
        let next = ga_fit(resp, n, &ga)?;
        if next.rmse < best.rmse {
            best = next;
        }
    }
    Ok(best)
}

/// Fits all four ladders. `orders` follow the nn, np, pn, pp slot order.
pub fn assemble(responses: &PairResponses, orders: [usize; 4], cfg: &AssemblyConfig) -> Result<(DevicePairThermalModel, [FitResult; 4])> {
    for heater in Device::BOTH {
        let own = responses.get(heater, heater).final_value();
        let cross = responses.get(heater, heater.other()).final_value();
        if cross > own {
            return Err(Error::Invariant(format!(
                "cross response {} ends above self response {} ({cross:e} > {own:e} K/W)",
                pair_name(heater, heater.other()),
                pair_name(heater, heater)
            )));
        }
    }
    let mut fits = Vec::with_capacity(4);
    for ((h, m), order) in PAIRS.into_iter().zip(orders) {
        let fit = fit_curve(responses.get(h, m), order, cfg)?;
        if fit.rmse > MAX_FIT_RMSE {
            return Err(Error::NoConvergence { what: format!("Foster fit of pair {}", pair_name(h, m)), residual: fit.rmse });
        }
        fits.push(fit);
    }
    let fits: [FitResult; 4] = fits.try_into().expect("four fits");
    let model =
        DevicePairThermalModel::new(fits[0].network.clone(), fits[1].network.clone(), fits[2].network.clone(), fits[3].network.clone(), cfg.ambient)?;
    Ok((model, fits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Exact for power held constant over the step.
    #[default]
    Exact,
    BackwardEuler,
}

/// Stage temperatures above ambient for each ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalState {
    theta: [Vec<f64>; 4],
}

impl ThermalState {
    /// All stages at ambient.
    pub fn new(model: &DevicePairThermalModel) -> Self {
        ThermalState { theta: std::array::from_fn(|i| vec![0.0; model.ladders[i].order()]) }
    }

    pub fn stage_temperatures(&self, heater: Device, monitor: Device) -> &[f64] {
        &self.theta[slot(heater, monitor)]
    }

    /// Current `(T_n, T_p)`.
    pub fn temperatures(&self, model: &DevicePairThermalModel) -> (f64, f64) {
        let sum = |h, m| self.stage_temperatures(h, m).iter().sum::<f64>();
        (model.t0 + sum(Device::N, Device::N) + sum(Device::P, Device::N), model.t0 + sum(Device::P, Device::P) + sum(Device::N, Device::P))
    }

    /// Advances by `dt` with powers held constant, returning the new `(T_n, T_p)`.
    pub fn advance(&mut self, model: &DevicePairThermalModel, p_n: f64, p_p: f64, dt: f64) -> (f64, f64) {
        self.advance_with(model, p_n, p_p, dt, Integrator::Exact)
    }

    pub fn advance_with(&mut self, model: &DevicePairThermalModel, p_n: f64, p_p: f64, dt: f64, method: Integrator) -> (f64, f64) {
        for (i, (h, _)) in PAIRS.into_iter().enumerate() {
            let p = match h {
                Device::N => p_n,
                Device::P => p_p,
            };
            for (th, st) in self.theta[i].iter_mut().zip(model.ladders[i].stages()) {
                let tau = st.tau();
                *th = match method {
                    Integrator::Exact => {
                        let decay = (-dt / tau).exp();
                        *th * decay + p * st.r * -(-dt / tau).exp_m1()
                    }
                    Integrator::BackwardEuler => (*th + dt * p / st.c) / (1.0 + dt / tau),
                };
            }
        }
        self.temperatures(model)
    }
}

/// `(dT_pn/P_p + dT_np/P_n) / (dT_jp/P_p + dT_jn/P_n)`.
pub fn crosstalk_coefficient(dt_pn: f64, dt_np: f64, dt_jp: f64, dt_jn: f64, p_p: f64, p_n: f64) -> Result<f64> {
    if !(p_p > 0.0 && p_n > 0.0) {
        return Err(Error::Config(format!("crosstalk needs positive powers, got P_p={p_p} P_n={p_n}")));
    }
    if !(dt_jp > 0.0 && dt_jn > 0.0) {
        return Err(Error::Numerical(format!("crosstalk needs positive self-heating, got dT_jp={dt_jp} dT_jn={dt_jn}")));
    }
    Ok((dt_pn / p_p + dt_np / p_n) / (dt_jp / p_p + dt_jn / p_n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CrosstalkReport {
    /// NFET rise caused by PFET power, K.
    pub dT_pn: f64,
    /// PFET rise caused by NFET power, K.
    pub dT_np: f64,
    pub dT_jp: f64,
    pub dT_jn: f64,
    pub P_p: f64,
    pub P_n: f64,
    pub rho: f64,
}

impl CrosstalkReport {
    pub fn new(dt_pn: f64, dt_np: f64, dt_jp: f64, dt_jn: f64, p_p: f64, p_n: f64) -> Result<Self> {
        let rho = crosstalk_coefficient(dt_pn, dt_np, dt_jp, dt_jn, p_p, p_n)?;
        Ok(CrosstalkReport { dT_pn: dt_pn, dT_np: dt_np, dT_jp: dt_jp, dT_jn: dt_jn, P_p: p_p, P_n: p_n, rho })
    }

    /// Steady-state report of a model with each device heated alone.
    pub fn from_model(model: &DevicePairThermalModel, p_n: f64, p_p: f64) -> Result<Self> {
        Self::new(
            p_p * model.rth(Device::P, Device::N),
            p_n * model.rth(Device::N, Device::P),
            p_p * model.rth(Device::P, Device::P),
            p_n * model.rth(Device::N, Device::N),
            p_p,
            p_n,
        )
    }
}
