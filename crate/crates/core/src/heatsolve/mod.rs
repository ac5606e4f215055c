//! Finite-volume heat conduction on a [`VoxelGrid`].
//!
//! Cell-centred unknowns, harmonic-mean face conductances, isothermal sinks on
//! the bottom substrate face and the top BEOL face, adiabatic elsewhere. Heat
//! is injected uniformly over a device's channel voxels. Linear systems go
//! through multigrid-preconditioned conjugate gradients; transients use
//! backward Euler on a geometric time grid so that every decade is sampled
//! evenly.

mod mg;
mod stencil;

use serde::{Deserialize, Serialize};

use crate::csvio::Table;
use crate::geometry::VoxelGrid;
use crate::{Device, Error, Result};
use mg::{pcg, Hierarchy};
use stencil::Stencil;

/// Which grid faces are held at ambient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sinks {
    pub bottom: bool,
    pub top: bool,
}

impl Default for Sinks {
    fn default() -> Self {
        Sinks { bottom: true, top: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub steps_per_decade: usize,
    /// Ambient / sink temperature, K.
    pub ambient: f64,
    pub picard_iters: usize,
    /// Picard stops once no voxel moves by more than this many kelvin.
    pub picard_tol: f64,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    pub sinks: Sinks,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_start: 1e-13,
            t_end: 1e-5,
            steps_per_decade: 10,
            ambient: 300.0,
            picard_iters: 5,
            picard_tol: 1e-3,
            linear_tol: 1e-8,
            max_linear_iters: 400,
            sinks: Sinks::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_start > 0.0 && self.t_start < self.t_end) {
            return Err(Error::Config(format!("need 0 < t_start < t_end, got {} and {}", self.t_start, self.t_end)));
        }
        if self.steps_per_decade < 5 {
            return Err(Error::Config(format!("steps_per_decade must be >= 5, got {}", self.steps_per_decade)));
        }
        if !(self.linear_tol > 0.0) || self.max_linear_iters == 0 {
            return Err(Error::Config("linear solver needs tol > 0 and at least one iteration".into()));
        }
        if !(self.ambient > 0.0) {
            return Err(Error::Config("ambient temperature must be positive".into()));
        }
        Ok(())
    }

    /// Sample instants `t_start * 10^(k/steps_per_decade)` up to `t_end`.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let decades = (self.t_end / self.t_start).log10();
        let steps = (decades * self.steps_per_decade as f64).round() as usize;
        if steps + 1 < self.steps_per_decade {
            return Err(Error::Config(format!(
                "time range [{:e}, {:e}] gives {} samples, fewer than steps_per_decade = {}",
                self.t_start,
                self.t_end,
                steps + 1,
                self.steps_per_decade
            )));
        }
        Ok((0..=steps).map(|k| self.t_start * 10f64.powf(k as f64 / self.steps_per_decade as f64)).collect())
    }
}

/// Temperature rise per watt after a power step, sampled on increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalStepResponse {
    pub times: Vec<f64>,
    /// K/W.
    pub zth: Vec<f64>,
    pub heater: Device,
    pub monitor: Device,
    /// W.
    pub power: f64,
}

impl ThermalStepResponse {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.zth.len() || self.times.len() < 2 {
            return Err(Error::Invariant("step response needs matching times/zth with >= 2 points".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) || self.times[0] <= 0.0 {
            return Err(Error::Invariant("step response times must be positive and strictly increasing".into()));
        }
        if self.zth.iter().any(|z| !z.is_finite() || *z < 0.0) {
            return Err(Error::Invariant("step response must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn final_value(&self) -> f64 {
        self.zth.last().copied().unwrap_or(0.0)
    }

    /// `zth_<heater>_<monitor>.csv`.
    pub fn file_name(&self) -> String {
        format!("zth_{}_{}.csv", self.heater.tag(), self.monitor.tag())
    }

    /// CSV form with header `t_s,zth_K_per_W`; heater, monitor and power go in a comment row.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t_s", "zth_K_per_W"]);
        t.comments.push(format!("heater={} monitor={} power_W={}", self.heater.tag(), self.monitor.tag(), crate::csvio::fmt_f64(self.power)));
        for (time, z) in self.times.iter().zip(&self.zth) {
            t.push_numbers(&[*time, *z]);
        }
        t
    }

    /// Inverse of [`Self::to_table`]. Without the comment row, heater and
    /// monitor fall back to `name` when it follows the `zth_<h>_<m>` pattern,
    /// and power defaults to 1 W.
    pub fn from_table(t: &Table, name: Option<&str>) -> Result<Self> {
        let from_name = name.and_then(|n| {
            let stem = n.rsplit('/').next()?.strip_suffix(".csv")?.strip_prefix("zth_")?;
            let (h, m) = stem.split_once('_')?;
            Some((h.parse::<Device>().ok()?, m.parse::<Device>().ok()?))
        });
        let device = |key: &str, pos: usize| -> Result<Device> {
            match t.comment_value(key) {
                Some(v) => v.parse(),
                None => from_name
                    .map(|p| if pos == 0 { p.0 } else { p.1 })
                    .ok_or_else(|| Error::Parse(format!("cannot tell the {key} device of a Zth table"))),
            }
        };
        let power = match t.comment_value("power_W") {
            Some(v) => v.parse::<f64>().map_err(|_| Error::Parse(format!("bad power_W `{v}`")))?,
            None => 1.0,
        };
        let resp = ThermalStepResponse {
            times: t.column("t_s")?,
            zth: t.column("zth_K_per_W")?,
            heater: device("heater", 0)?,
            monitor: device("monitor", 1)?,
            power,
        };
        resp.validate()?;
        Ok(resp)
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let t = Table::read(path)?;
        Self::from_table(&t, path.to_str())
    }

    /// Number of decades spanned by the sample times.
    pub fn decades(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) if *a > 0.0 => (b / a).log10(),
            _ => 0.0,
        }
    }
}

/// Steady temperature rise field for one heater.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Rise above ambient per voxel, K.
    pub rise: Vec<f64>,
    pub heater: Device,
    pub power: f64,
    pub max_rise: f64,
    /// Mean rise over each device's monitor voxels, indexed by [`Device::index`].
    pub monitor_rise: [f64; 2],
    /// Heat leaving through the sink faces, W.
    pub outflow: f64,
    pub linear_iterations: usize,
    pub linear_residual: f64,
}

impl SteadyState {
    pub fn monitor(&self, d: Device) -> f64 {
        self.monitor_rise[d.index()]
    }

    /// Steady thermal impedance heater -> `d`, K/W.
    pub fn zth(&self, d: Device) -> f64 {
        if self.power > 0.0 {
            self.monitor(d) / self.power
        } else {
            0.0
        }
    }
}

/// Relative mismatch between heat leaving through the sinks and heat injected.
/// Zero when no power is applied.
pub fn energy_balance(state: &SteadyState) -> f64 {
    if state.power == 0.0 {
        0.0
    } else {
        (state.outflow - state.power) / state.power
    }
}

fn conductivities(grid: &VoxelGrid, rise: Option<&[f64]>, ambient: f64) -> Vec<f64> {
    let k300: Vec<f64> = grid.materials.0.iter().map(|m| m.k300).collect();
    match rise {
        Some(rise) if grid.materials.0.iter().any(|m| m.k_exponent != 0.0) => {
            grid.region.iter().zip(rise).map(|(&r, &dt)| grid.materials.0[r as usize].conductivity(ambient + dt.max(0.0))).collect()
        }
        _ => grid.region.iter().map(|&r| k300[r as usize]).collect(),
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn assemble(grid: &VoxelGrid, k: &[f64], sinks: Sinks) -> Stencil {
    let [nx, ny, nz] = grid.dims;
    let n = grid.len();
    let [dx, dy, dz] = grid.voxel_size.map(|v| v * 1e-9);
    let (ax, ay, az) = (dy * dz / dx, dx * dz / dy, dx * dy / dz);
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut gz = vec![0.0; n];
    for kz in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * kz);
                if i + 1 < nx {
                    gx[idx] = harmonic(k[idx], k[idx + 1]) * ax;
                }
                if j + 1 < ny {
                    gy[idx] = harmonic(k[idx], k[idx + nx]) * ay;
                }
                if kz + 1 < nz {
                    gz[idx] = harmonic(k[idx], k[idx + nx * ny]) * az;
                }
            }
        }
    }
    let layer = nx * ny;
    let top0 = (nz - 1) * layer;
    let gbot = (0..layer).map(|c| if sinks.bottom { 2.0 * k[c] * az } else { 0.0 }).collect();
    let gtop = (0..layer).map(|c| if sinks.top { 2.0 * k[top0 + c] * az } else { 0.0 }).collect();
    let mut st = Stencil { dims: grid.dims, gx, gy, gz, gbot, gtop, extra: vec![0.0; n], diag: Vec::new() };
    st.refresh_diag();
    st
}

fn heat_vector(grid: &VoxelGrid, heater: Device, power: f64) -> Result<Vec<f64>> {
    let cells = grid.heater(heater);
    if cells.is_empty() {
        return Err(Error::Config(format!("device {heater} has no heater voxels")));
    }
    let mut q = vec![0.0; grid.len()];
    let per = power / cells.len() as f64;
    for &c in cells {
        q[c] = per;
    }
    Ok(q)
}

fn monitor_means(grid: &VoxelGrid, rise: &[f64]) -> [f64; 2] {
    Device::BOTH.map(|d| {
        let m = grid.monitor(d);
        if m.is_empty() {
            0.0
        } else {
            m.iter().map(|&i| rise[i]).sum::<f64>() / m.len() as f64
        }
    })
}

fn outflow(st: &Stencil, rise: &[f64]) -> f64 {
    let layer = st.dims[0] * st.dims[1];
    let top0 = (st.dims[2] - 1) * layer;
    (0..layer).map(|c| st.gbot[c] * rise[c] + st.gtop[c] * rise[top0 + c]).sum()
}

fn check_power(power: f64) -> Result<()> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(Error::Config(format!("power must be finite and non-negative, got {power}")));
    }
    Ok(())
}

fn check_grid(grid: &VoxelGrid, cfg: &SolverConfig) -> Result<()> {
    if grid.is_empty() || grid.region.len() != grid.len() {
        return Err(Error::Config("voxel grid is empty or inconsistent".into()));
    }
    if !cfg.sinks.bottom && !cfg.sinks.top {
        return Err(Error::Numerical("no isothermal face: conduction system is singular".into()));
    }
    Ok(())
}

/// Solves the steady conduction problem with `power` watts in `heater`'s channel.
pub fn steady_state(grid: &VoxelGrid, heater: Device, power: f64, cfg: &SolverConfig) -> Result<SteadyState> {
    check_grid(grid, cfg)?;
    check_power(power)?;
    let q = heat_vector(grid, heater, power)?;
    let n = grid.len();
    let mut rise = vec![0.0; n];
    let nonlinear = grid.materials.0.iter().any(|m| m.k_exponent != 0.0);
    let passes = if nonlinear { cfg.picard_iters.max(1) } else { 1 };
    let mut stats = None;
    let mut st = None;
    for pass in 0..passes {
        let k = conductivities(grid, (pass > 0).then_some(&rise[..]), cfg.ambient);
        let mut h = Hierarchy::new(assemble(grid, &k, cfg.sinks))?;
        let prev = if nonlinear { Some(rise.clone()) } else { None };
        let s = pcg(&mut h, &q, &mut rise, cfg.linear_tol, cfg.max_linear_iters);
        stats = Some(s);
        st = Some(h);
        if let Some(prev) = prev {
            let change = rise.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if pass > 0 && change < cfg.picard_tol {
                break;
            }
        }
    }
    let stats = stats.expect("at least one pass");
    let h = st.expect("at least one pass");
    let out = outflow(h.fine(), &rise);
    Ok(SteadyState {
        max_rise: rise.iter().copied().fold(0.0, f64::max),
        monitor_rise: monitor_means(grid, &rise),
        rise,
        heater,
        power,
        outflow: out,
        linear_iterations: stats.iterations,
        linear_residual: stats.relative_residual,
    })
}

/// Like [`steady_state`] but fails when the linear solve stops short of tolerance.
pub fn steady_state_converged(grid: &VoxelGrid, heater: Device, power: f64, cfg: &SolverConfig) -> Result<SteadyState> {
    let s = steady_state(grid, heater, power, cfg)?;
    if s.linear_residual > cfg.linear_tol {
        return Err(Error::NoConvergence { what: "steady conduction solve".into(), residual: s.linear_residual });
    }
    Ok(s)
}

/// Thermal step responses at both devices for a power step in `heater`,
/// indexed by monitor device.
pub fn step_response(grid: &VoxelGrid, heater: Device, power: f64, cfg: &SolverConfig) -> Result<[ThermalStepResponse; 2]> {
    check_grid(grid, cfg)?;
    check_power(power)?;
    let times = cfg.sample_times()?;
    let q = heat_vector(grid, heater, power)?;
    let n = grid.len();
    let vol = grid.voxel_volume_m3();
    let cap: Vec<f64> = grid.region.iter().map(|&r| grid.materials.0[r as usize].volumetric_heat_capacity() * vol).collect();
    let nonlinear = grid.materials.0.iter().any(|m| m.k_exponent != 0.0);

    let mut rise = vec![0.0; n];
    let mut zth = [Vec::with_capacity(times.len()), Vec::with_capacity(times.len())];
    let mut k = conductivities(grid, None, cfg.ambient);
    let mut base = assemble(grid, &k, cfg.sinks);
    let mut t_prev = 0.0;
    let mut rhs = vec![0.0; n];
    for &t in &times {
        let dt = t - t_prev;
        t_prev = t;
        let old = rise.clone();
        let passes = if nonlinear { cfg.picard_iters.max(1) } else { 1 };
        for pass in 0..passes {
            if nonlinear {
                k = conductivities(grid, Some(&rise), cfg.ambient);
                base = assemble(grid, &k, cfg.sinks);
            }
            let mut st = base.clone();
            for i in 0..n {
                st.extra[i] = cap[i] / dt;
                rhs[i] = q[i] + st.extra[i] * old[i];
            }
            st.refresh_diag();
            let mut h = Hierarchy::new(st)?;
            let before = rise.clone();
            let s = pcg(&mut h, &rhs, &mut rise, cfg.linear_tol, cfg.max_linear_iters);
            if s.relative_residual > cfg.linear_tol {
                return Err(Error::NoConvergence { what: format!("transient step at t = {t:e} s"), residual: s.relative_residual });
            }
            let change = rise.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if pass > 0 && change < cfg.picard_tol {
                break;
            }
        }
        let m = monitor_means(grid, &rise);
        for d in Device::BOTH {
            let z = if power > 0.0 { m[d.index()] / power } else { 0.0 };
            zth[d.index()].push(z.max(0.0));
        }
    }
    // A pure conduction step response is non-decreasing. Dips at the level of
    // the linear tolerance are flattened; anything larger means the solve
    // went wrong.
    for z in zth.iter_mut() {
        let tol = 1e-6 * z.iter().copied().fold(0.0, f64::max);
        for i in 1..z.len() {
            if z[i] < z[i - 1] {
                if z[i - 1] - z[i] > tol {
                    return Err(Error::Numerical(format!("step response decreased at t = {:e} s by {:e} K/W", times[i], z[i - 1] - z[i])));
                }
                z[i] = z[i - 1];
            }
        }
    }
    let [zn, zp] = zth;
    let make = |monitor: Device, zth: Vec<f64>| ThermalStepResponse { times: times.clone(), zth, heater, monitor, power };
    Ok([make(Device::N, zn), make(Device::P, zp)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MaterialProps;

    fn slab(nz: usize, length_nm: f64, k: f64) -> VoxelGrid {
        let h = length_nm / nz as f64;
        let mut g = VoxelGrid::uniform([1, 1, nz], [h, h, h], MaterialProps::new("slab", k, 700.0, 2300.0));
        g.heaters = [(0..nz).collect(), Vec::new()];
        g.monitors = [(0..nz).collect(), Vec::new()];
        g
    }

    #[test]
    fn zero_power_gives_zero_field() {
        let g = slab(20, 100.0, 10.0);
        let s = steady_state(&g, Device::N, 0.0, &SolverConfig::default()).unwrap();
        assert!(s.rise.iter().all(|&t| t == 0.0));
        assert_eq!(energy_balance(&s), 0.0);
    }

    #[test]
    fn uniformly_heated_slab_matches_parabola() {
        let (nz, len_nm, k) = (60, 100.0, 10.0);
        let g = slab(nz, len_nm, k);
        let area = (g.voxel_size[0] * 1e-9).powi(2);
        let len = len_nm * 1e-9;
        let power = 1e-6;
        let q = power / (area * len);
        let s = steady_state(&g, Device::N, power, &SolverConfig::default()).unwrap();
        let analytic = q * len * len / (8.0 * k);
        assert!((s.max_rise - analytic).abs() / analytic < 0.02, "{} vs {analytic}", s.max_rise);
        assert!(energy_balance(&s).abs() < 5e-3);
    }

    #[test]
    fn no_sink_is_singular() {
        let g = slab(10, 50.0, 10.0);
        let cfg = SolverConfig { sinks: Sinks { bottom: false, top: false }, ..Default::default() };
        assert!(steady_state(&g, Device::N, 1e-6, &cfg).is_err());
    }

    #[test]
    fn too_few_samples_rejected() {
        let cfg = SolverConfig { t_start: 1e-9, t_end: 3e-9, ..Default::default() };
        assert!(cfg.sample_times().is_err());
    }

    #[test]
    fn truncated_solve_fails_balance() {
        let mut g = VoxelGrid::uniform([12, 12, 24], [2.0; 3], MaterialProps::new("m", 5.0, 700.0, 2300.0));
        let center: Vec<usize> = (0..g.len())
            .filter(|&i| {
                let [x, y, z] = g.coords(i);
                (5..7).contains(&x) && (5..7).contains(&y) && (11..13).contains(&z)
            })
            .collect();
        g.heaters = [center.clone(), Vec::new()];
        g.monitors = [center, Vec::new()];
        let good = steady_state(&g, Device::N, 1e-6, &SolverConfig::default()).unwrap();
        assert!(energy_balance(&good).abs() < 5e-3);
        let cfg = SolverConfig { max_linear_iters: 1, linear_tol: 1e-14, ..Default::default() };
        let bad = steady_state(&g, Device::N, 1e-6, &cfg).unwrap();
        assert!(energy_balance(&bad).abs() > 5e-3, "{}", energy_balance(&bad));
        assert!(steady_state_converged(&g, Device::N, 1e-6, &cfg).is_err());
    }

    #[test]
    fn cube_transient_settles_on_steady_value() {
        let mut g = VoxelGrid::uniform([10, 10, 10], [2.0; 3], MaterialProps::new("m", 20.0, 700.0, 2300.0));
        let all: Vec<usize> = (0..g.len()).collect();
        g.heaters = [all.clone(), Vec::new()];
        g.monitors = [all, Vec::new()];
        let cfg = SolverConfig { t_start: 1e-13, t_end: 1e-7, ..Default::default() };
        let steady = steady_state(&g, Device::N, 1e-5, &cfg).unwrap();
        let [resp, _] = step_response(&g, Device::N, 1e-5, &cfg).unwrap();
        let late = resp.final_value();
        assert!((late - steady.zth(Device::N)).abs() / steady.zth(Device::N) < 0.02);
        assert!(resp.zth.windows(2).all(|w| w[1] >= w[0]));
        assert!(resp.zth[0] < 0.05 * late);
    }

    #[test]
    fn zero_power_step_is_flat_zero() {
        let g = slab(10, 50.0, 10.0);
        let cfg = SolverConfig { t_end: 1e-9, ..Default::default() };
        let [r, _] = step_response(&g, Device::N, 0.0, &cfg).unwrap();
        assert!(r.zth.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn temperature_dependent_k_raises_peak() {
        let (nz, len) = (40, 100.0);
        let lin = slab(nz, len, 10.0);
        let mut nl = slab(nz, len, 10.0);
        nl.materials.0[0].k_exponent = 1.3;
        let cfg = SolverConfig::default();
        let a = steady_state(&lin, Device::N, 2e-5, &cfg).unwrap();
        let b = steady_state(&nl, Device::N, 2e-5, &cfg).unwrap();
        assert!(a.max_rise > 10.0);
        assert!(b.max_rise > a.max_rise);
        assert!(energy_balance(&b).abs() < 5e-3);
    }
}
