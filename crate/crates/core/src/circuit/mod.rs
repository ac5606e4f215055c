//! Transient circuit simulation by modified nodal analysis, with device
//! temperatures supplied by the pair thermal models.
//!
//! Unknowns are the non-ground node voltages followed by one branch current
//! per voltage source. Capacitors use trapezoidal companions after a
//! backward-Euler first step. Temperatures are held over a step's Newton
//! loop; afterwards each pair's thermal state is advanced with the step's
//! average device powers.

mod cells;
mod measure;
mod scenario;

pub use cells::{cell, ring_oscillator, ro_period_estimate, CellKind, Drive, Stimulus};
pub use measure::{crossings, edge_times, measure, measure_ro, MetricDeltas, Metrics};
pub use scenario::{run_cell, run_ro, scenario_run, FlavorSetup, ReportRow, ScenarioInputs, SweepSpec, REPORT_HEADER};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compact::CompactModelParams;
use crate::csvio::{fmt_f64, Table};
use crate::xnet::{DevicePairThermalModel, ThermalState};
use crate::{Device, Error, Result};

/// Ground is node 0 and is not an unknown.
pub const GROUND: usize = 0;
/// Conductance from every node to ground, S.
const GMIN: f64 = 1e-12;
/// Largest voltage change applied per Newton iteration, V.
const MAX_NEWTON_STEP: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Waveform {
    Dc {
        v: f64,
    },
    /// Piecewise linear in time, optionally repeating with `period`.
    Pwl {
        points: Vec<(f64, f64)>,
        period: Option<f64>,
    },
}

impl Waveform {
    /// Low until `delay`, then a square wave of `period` with linear edges.
    pub fn square(v_high: f64, period: f64, edge: f64, delay: f64) -> Self {
        let half = 0.5 * period;
        Waveform::Pwl {
            points: vec![(0.0, 0.0), (delay, 0.0), (delay + edge, v_high), (delay + half, v_high), (delay + half + edge, 0.0)],
            period: Some(period),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Waveform::Dc { v } => *v,
            Waveform::Pwl { points, period } => {
                let t = match period {
                    Some(p) => t.rem_euclid(*p),
                    None => t,
                };
                let k = points.partition_point(|&(tp, _)| tp <= t);
                if k == 0 {
                    return points[0].1;
                }
                if k == points.len() {
                    return points[k - 1].1;
                }
                let ((t0, v0), (t1, v1)) = (points[k - 1], points[k]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Waveform::Dc { v } if v.is_finite() => Ok(()),
            Waveform::Pwl { points, period } => {
                if points.is_empty() || points.windows(2).any(|w| !(w[1].0 > w[0].0)) || points[0].0 < 0.0 {
                    return Err(Error::Config("PWL points need strictly increasing non-negative times".into()));
                }
                if let Some(p) = period {
                    if !(*p > points[points.len() - 1].0) {
                        return Err(Error::Config("PWL period must exceed its last breakpoint".into()));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Config("non-finite DC source".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Element {
    /// `model` indexes [`Netlist::models`]; `pair` selects the thermal pair.
    Mosfet {
        name: String,
        d: usize,
        g: usize,
        s: usize,
        model: usize,
        pair: usize,
    },
    Capacitor {
        name: String,
        a: usize,
        b: usize,
        c: f64,
    },
    Resistor {
        name: String,
        a: usize,
        b: usize,
        r: f64,
    },
    /// Ideal source from `node` to ground.
    VSource {
        name: String,
        node: usize,
        wave: Waveform,
    },
}

impl Element {
    pub fn name(&self) -> &str {
        match self {
            Element::Mosfet { name, .. } | Element::Capacitor { name, .. } | Element::Resistor { name, .. } | Element::VSource { name, .. } => name,
        }
    }

    fn terminals(&self) -> Vec<usize> {
        match self {
            Element::Mosfet { d, g, s, .. } => vec![*d, *g, *s],
            Element::Capacitor { a, b, .. } | Element::Resistor { a, b, .. } => vec![*a, *b],
            Element::VSource { node, .. } => vec![*node, GROUND],
        }
    }
}

/// Nodes singled out for delay measurement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Probes {
    pub input: Option<usize>,
    pub output: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    /// Node names; index 0 is ground.
    pub nodes: Vec<String>,
    pub models: Vec<CompactModelParams>,
    pub elements: Vec<Element>,
    /// Offsets added to node voltages after the operating point, V.
    #[serde(default)]
    pub initial: Vec<(usize, f64)>,
    #[serde(default)]
    pub probes: Probes,
}

impl Default for Netlist {
    fn default() -> Self {
        Netlist { nodes: vec!["0".into()], models: Vec::new(), elements: Vec::new(), initial: Vec::new(), probes: Probes::default() }
    }
}

impl Netlist {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `name`, adding the node if new. `"0"` and `"gnd"` are ground.
    pub fn node(&mut self, name: &str) -> usize {
        if name == "0" || name.eq_ignore_ascii_case("gnd") {
            return GROUND;
        }
        match self.nodes.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.nodes.push(name.to_string());
                self.nodes.len() - 1
            }
        }
    }

    pub fn find_node(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn add_model(&mut self, m: CompactModelParams) -> usize {
        match self.models.iter().position(|x| *x == m) {
            Some(i) => i,
            None => {
                self.models.push(m);
                self.models.len() - 1
            }
        }
    }

    pub fn mosfet(&mut self, name: &str, d: usize, g: usize, s: usize, model: usize, pair: usize) {
        self.elements.push(Element::Mosfet { name: name.into(), d, g, s, model, pair });
    }

    pub fn capacitor(&mut self, name: &str, a: usize, b: usize, c: f64) {
        self.elements.push(Element::Capacitor { name: name.into(), a, b, c });
    }

    pub fn resistor(&mut self, name: &str, a: usize, b: usize, r: f64) {
        self.elements.push(Element::Resistor { name: name.into(), a, b, r });
    }

    pub fn vsource(&mut self, name: &str, node: usize, wave: Waveform) {
        self.elements.push(Element::VSource { name: name.into(), node, wave });
    }

    /// Replaces the waveform of source `name`.
    pub fn set_source(&mut self, name: &str, wave: Waveform) -> Result<()> {
        for e in &mut self.elements {
            if let Element::VSource { name: n, wave: w, .. } = e {
                if n == name {
                    *w = wave;
                    return Ok(());
                }
            }
        }
        Err(Error::Config(format!("no source named `{name}`")))
    }

    pub fn mosfets(&self) -> impl Iterator<Item = (&str, usize, usize, usize, &CompactModelParams, usize)> {
        self.elements.iter().filter_map(|e| match e {
            Element::Mosfet { name, d, g, s, model, pair } => Some((name.as_str(), *d, *g, *s, &self.models[*model], *pair)),
            _ => None,
        })
    }

    /// Number of thermal pairs referenced by the transistors.
    pub fn pair_count(&self) -> usize {
        self.mosfets().map(|m| m.5 + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.first().map(String::as_str) != Some("0") {
            return Err(Error::Config("node 0 must be ground".into()));
        }
        let n = self.nodes.len();
        let mut names = std::collections::BTreeSet::new();
        for e in &self.elements {
            if !names.insert(e.name()) {
                return Err(Error::Config(format!("duplicate element name `{}`", e.name())));
            }
            if let Some(t) = e.terminals().into_iter().find(|&t| t >= n) {
                return Err(Error::Config(format!("element `{}` uses unknown node {t}", e.name())));
            }
            match e {
                Element::Mosfet { model, name, .. } if *model >= self.models.len() => {
                    return Err(Error::Config(format!("mosfet `{name}` uses unknown model {model}")))
                }
                Element::Capacitor { c, name, .. } if !(*c >= 0.0 && c.is_finite()) => {
                    return Err(Error::Config(format!("capacitor `{name}` has bad value {c}")))
                }
                Element::Resistor { r, name, .. } if !(*r > 0.0 && r.is_finite()) => {
                    return Err(Error::Config(format!("resistor `{name}` has bad value {r}")))
                }
                Element::VSource { wave, .. } => wave.validate()?,
                _ => {}
            }
        }
        for m in &self.models {
            m.validate()?;
        }
        if let Some(&(node, _)) = self.initial.iter().find(|(k, _)| *k == GROUND || *k >= n) {
            return Err(Error::Config(format!("initial condition on invalid node {node}")));
        }
        // Every node must connect to ground through some chain of elements.
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.elements {
            let t = e.terminals();
            for w in t.windows(2) {
                let (a, b) = (root(&mut parent, w[0]), root(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let g = root(&mut parent, GROUND);
        for i in 1..n {
            if root(&mut parent, i) != g {
                return Err(Error::Config(format!("node `{}` is not connected to a source or ground", self.nodes[i])));
            }
        }
        Ok(())
    }
}

/// What a transient run keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaveSpec {
    /// Node names to keep; `None` keeps all.
    pub nodes: Option<Vec<String>>,
    /// Keep per-device temperature, power and current waveforms.
    pub devices: bool,
    /// Keep every `stride`-th step.
    pub stride: usize,
}

impl Default for SaveSpec {
    fn default() -> Self {
        SaveSpec { nodes: None, devices: true, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// 0 pins device temperatures at ambient; 1 couples them to the thermal models.
    pub shmod: u8,
    /// s.
    pub t_stop: f64,
    /// s.
    pub dt: f64,
    /// V.
    pub newton_tol_v: f64,
    /// A.
    pub newton_tol_i: f64,
    pub max_newton: usize,
    /// Number of times a failing step may be halved.
    pub max_halvings: u32,
    /// K.
    pub ambient: f64,
    pub save: SaveSpec,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            shmod: 0,
            t_stop: 30e-9,
            dt: 0.1e-12,
            newton_tol_v: 1e-6,
            newton_tol_i: 1e-9,
            max_newton: 50,
            max_halvings: 3,
            ambient: 300.0,
            save: SaveSpec::default(),
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if self.shmod > 1 {
            return Err(Error::Config(format!("shmod must be 0 or 1, got {}", self.shmod)));
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.dt) && pos(self.t_stop) && pos(self.newton_tol_v) && pos(self.newton_tol_i) && pos(self.ambient)) {
            return Err(Error::Config("dt, t_stop, tolerances and ambient must be positive".into()));
        }
        if self.max_newton == 0 || self.save.stride == 0 {
            return Err(Error::Config("max_newton and save stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranResult {
    pub time: Vec<f64>,
    pub nodes: Vec<String>,
    /// One array per saved node.
    pub voltages: Vec<Vec<f64>>,
    pub devices: Vec<String>,
    /// Device polarity, parallel to `devices`.
    pub polarity: Vec<Device>,
    /// K, per device; empty when device waveforms are not saved.
    pub temps: Vec<Vec<f64>>,
    /// W.
    pub powers: Vec<Vec<f64>>,
    /// Drain current, A.
    pub currents: Vec<Vec<f64>>,
    /// Largest temperature rise reached by each device over the run, K.
    pub peak_rise: Vec<f64>,
    pub ambient: f64,
}

impl TranResult {
    pub fn node(&self, name: &str) -> Result<&[f64]> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .map(|i| self.voltages[i].as_slice())
            .ok_or_else(|| Error::Config(format!("node `{name}` was not saved")))
    }

    /// Peak rise over all devices of one polarity.
    pub fn peak_rise_of(&self, d: Device) -> f64 {
        self.peak_rise.iter().zip(&self.polarity).filter(|(_, p)| **p == d).map(|(r, _)| *r).fold(0.0, f64::max)
    }

    /// Columns `t_s,<node>...,T_<device>_K`.
    pub fn to_table(&self) -> Table {
        let mut header = vec!["t_s".to_string()];
        header.extend(self.nodes.iter().cloned());
        if !self.temps.is_empty() {
            header.extend(self.devices.iter().map(|d| format!("T_{d}_K")));
        }
        let mut t = Table::new(&header);
        for (k, time) in self.time.iter().enumerate() {
            let mut row = vec![fmt_f64(*time)];
            row.extend(self.voltages.iter().map(|v| fmt_f64(v[k])));
            row.extend(self.temps.iter().map(|v| fmt_f64(v[k])));
            t.push_row(row);
        }
        t
    }
}

struct Cap {
    a: usize,
    b: usize,
    c: f64,
    i: f64,
}

struct Mos<'a> {
    d: usize,
    g: usize,
    s: usize,
    p: &'a CompactModelParams,
    pair: usize,
    slot: Device,
}

struct Engine<'a> {
    nv: usize,
    gmin: f64,
    srcs: Vec<(usize, &'a Waveform)>,
    res: Vec<(usize, usize, f64)>,
    caps: Vec<Cap>,
    mos: Vec<Mos<'a>>,
}

/// Integration rule for one Newton solve.
#[derive(Clone, Copy)]
enum Rule {
    Dc,
    BackwardEuler(f64),
    Trapezoidal(f64),
}

fn vol(x: &DVector<f64>, node: usize) -> f64 {
    if node == GROUND {
        0.0
    } else {
        x[node - 1]
    }
}

impl<'a> Engine<'a> {
    fn new(net: &'a Netlist) -> Self {
        let mut e = Engine { nv: net.nodes.len() - 1, gmin: GMIN, srcs: Vec::new(), res: Vec::new(), caps: Vec::new(), mos: Vec::new() };
        for el in &net.elements {
            match el {
                Element::Mosfet { d, g, s, model, pair, .. } => {
                    let p = &net.models[*model];
                    e.mos.push(Mos { d: *d, g: *g, s: *s, p, pair: *pair, slot: p.polarity });
                    for (other, c) in [(*s, p.c_gs), (*d, p.c_gd)] {
                        if c > 0.0 {
                            e.caps.push(Cap { a: *g, b: other, c, i: 0.0 });
                        }
                    }
                }
                Element::Capacitor { a, b, c, .. } => e.caps.push(Cap { a: *a, b: *b, c: *c, i: 0.0 }),
                Element::Resistor { a, b, r, .. } => e.res.push((*a, *b, 1.0 / r)),
                Element::VSource { node, wave, .. } => e.srcs.push((*node, wave)),
            }
        }
        e
    }

    fn size(&self) -> usize {
        self.nv + self.srcs.len()
    }

    /// Residual and Jacobian at `x` for time `t`.
    fn assemble(&self, x: &DVector<f64>, prev: &DVector<f64>, t: f64, rule: Rule, temps: &[f64], src_scale: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.size();
        let mut f = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, n);
        let idx = |node: usize| if node == GROUND { None } else { Some(node - 1) };
        for k in 0..self.nv {
            f[k] += self.gmin * x[k];
            j[(k, k)] += self.gmin;
        }
        let stamp_g = |f: &mut DVector<f64>, j: &mut DMatrix<f64>, a: usize, b: usize, g: f64, i: f64| {
            if let Some(ia) = idx(a) {
                f[ia] += i;
                j[(ia, ia)] += g;
                if let Some(ib) = idx(b) {
                    j[(ia, ib)] -= g;
                }
            }
            if let Some(ib) = idx(b) {
                f[ib] -= i;
                j[(ib, ib)] += g;
                if let Some(ia) = idx(a) {
                    j[(ib, ia)] -= g;
                }
            }
        };
        for &(a, b, g) in &self.res {
            let i = g * (vol(x, a) - vol(x, b));
            stamp_g(&mut f, &mut j, a, b, g, i);
        }
        for c in &self.caps {
            let (g, i) = match rule {
                Rule::Dc => continue,
                Rule::BackwardEuler(h) => {
                    let g = c.c / h;
                    (g, g * ((vol(x, c.a) - vol(x, c.b)) - (vol(prev, c.a) - vol(prev, c.b))))
                }
                Rule::Trapezoidal(h) => {
                    let g = 2.0 * c.c / h;
                    (g, g * ((vol(x, c.a) - vol(x, c.b)) - (vol(prev, c.a) - vol(prev, c.b))) - c.i)
                }
            };
            stamp_g(&mut f, &mut j, c.a, c.b, g, i);
        }
        for (m, temp) in self.mos.iter().zip(temps) {
            let (vd, vg, vs) = (vol(x, m.d), vol(x, m.g), vol(x, m.s));
            let e = m.p.ids(vg - vs, vd - vs, *temp);
            let cols = [(m.d, e.d_vds), (m.g, e.d_vgs), (m.s, -(e.d_vgs + e.d_vds))];
            for (node, sign) in [(m.d, 1.0), (m.s, -1.0)] {
                if let Some(r) = idx(node) {
                    f[r] += sign * e.ids;
                    for (cn, dv) in cols {
                        if let Some(c) = idx(cn) {
                            j[(r, c)] += sign * dv;
                        }
                    }
                }
            }
        }
        for (k, (node, wave)) in self.srcs.iter().enumerate() {
            let row = self.nv + k;
            if let Some(r) = idx(*node) {
                f[r] += x[row];
                j[(r, row)] += 1.0;
                f[row] = x[r] - src_scale * wave.value(t);
                j[(row, r)] = 1.0;
            } else {
                f[row] = x[row];
                j[(row, row)] = 1.0;
            }
        }
        (f, j)
    }

    /// Damped Newton from `x`. Returns the iteration count on success.
    #[allow(clippy::too_many_arguments)]
    fn newton(
        &self,
        x: &mut DVector<f64>,
        prev: &DVector<f64>,
        t: f64,
        rule: Rule,
        temps: &[f64],
        opts: &SimOptions,
        src_scale: f64,
    ) -> Option<usize> {
        for it in 1..=opts.max_newton {
            let (f, j) = self.assemble(x, prev, t, rule, temps, src_scale);
            let dx = j.lu().solve(&(-&f))?;
            let max_dv = dx.rows(0, self.nv).amax();
            let scale = if max_dv > MAX_NEWTON_STEP { MAX_NEWTON_STEP / max_dv } else { 1.0 };
            *x += dx * scale;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
            let max_res = if self.nv == 0 { 0.0 } else { f.rows(0, self.nv).amax() };
            if max_dv < opts.newton_tol_v && max_res < opts.newton_tol_i {
                return Some(it);
            }
        }
        None
    }

    fn update_cap_currents(&mut self, x: &DVector<f64>, prev: &DVector<f64>, rule: Rule) {
        for c in &mut self.caps {
            let dv = (vol(x, c.a) - vol(x, c.b)) - (vol(prev, c.a) - vol(prev, c.b));
            c.i = match rule {
                Rule::Dc => 0.0,
                Rule::BackwardEuler(h) => c.c / h * dv,
                Rule::Trapezoidal(h) => 2.0 * c.c / h * dv - c.i,
            };
        }
    }

    fn device_state(&self, x: &DVector<f64>, temps: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.mos
            .iter()
            .zip(temps)
            .map(|(m, t)| {
                let (vd, vg, vs) = (vol(x, m.d), vol(x, m.g), vol(x, m.s));
                let i = m.p.ids(vg - vs, vd - vs, *t).ids;
                (i, (i * (vd - vs)).max(0.0))
            })
            .unzip()
    }

    /// Operating point at `t`. If plain Newton fails, the node-to-ground
    /// conductance is stepped down from 1 mS, then sources are stepped up.
    fn operating_point(&mut self, t: f64, temps: &[f64], opts: &SimOptions) -> Result<DVector<f64>> {
        let zero = DVector::zeros(self.size());
        let dc_opts = SimOptions { max_newton: opts.max_newton.max(200), ..opts.clone() };
        let mut x = zero.clone();
        if self.newton(&mut x, &zero, t, Rule::Dc, temps, &dc_opts, 1.0).is_some() {
            return Ok(x);
        }
        x.fill(0.0);
        let mut stepped = true;
        for k in 3..=12 {
            self.gmin = 10f64.powi(-k);
            if self.newton(&mut x, &zero, t, Rule::Dc, temps, &dc_opts, 1.0).is_none() {
                stepped = false;
                break;
            }
        }
        self.gmin = GMIN;
        if stepped {
            return Ok(x);
        }
        x.fill(0.0);
        for k in 1..=20 {
            let s = k as f64 / 20.0;
            if self.newton(&mut x, &zero, t, Rule::Dc, temps, &dc_opts, s).is_none() {
                return Err(Error::NoConvergence { what: format!("operating point at source scale {s}"), residual: f64::NAN });
            }
        }
        Ok(x)
    }
}

/// Node voltages at the operating point with sources evaluated at `t` and
/// all devices at ambient. Index 0 is ground.
pub fn dc_operating_point(net: &Netlist, t: f64, opts: &SimOptions) -> Result<Vec<f64>> {
    net.validate()?;
    opts.validate()?;
    let mut eng = Engine::new(net);
    let temps = vec![opts.ambient; eng.mos.len()];
    let x = eng.operating_point(t, &temps, opts)?;
    Ok((0..net.nodes.len()).map(|k| vol(&x, k)).collect())
}

/// Transient analysis. `thermal[k]` models pair `k` and is needed when `opts.shmod == 1`.
pub fn tran(net: &Netlist, opts: &SimOptions, thermal: &[DevicePairThermalModel]) -> Result<TranResult> {
    net.validate()?;
    opts.validate()?;
    let pairs = net.pair_count();
    if opts.shmod == 1 && thermal.len() < pairs {
        return Err(Error::Config(format!("shmod=1 needs {pairs} thermal pair models, got {}", thermal.len())));
    }
    let mut eng = Engine::new(net);
    let ndev = eng.mos.len();
    let mut states: Vec<ThermalState> = if opts.shmod == 1 { thermal[..pairs].iter().map(ThermalState::new).collect() } else { Vec::new() };
    let mut temps = vec![opts.ambient; ndev];
    let pair_temps = |states: &[ThermalState], temps: &mut [f64], eng: &Engine| {
        if states.is_empty() {
            return;
        }
        let rises: Vec<(f64, f64)> = states
            .iter()
            .zip(thermal)
            .map(|(s, m)| {
                let (tn, tp) = s.temperatures(m);
                (tn - m.t0, tp - m.t0)
            })
            .collect();
        for (t, m) in temps.iter_mut().zip(&eng.mos) {
            let (rn, rp) = rises[m.pair];
            *t = opts.ambient + if m.slot == Device::N { rn } else { rp };
        }
    };

    let mut x = eng.operating_point(0.0, &temps, opts)?;
    for &(node, dv) in &net.initial {
        x[node - 1] += dv;
    }

    let saved: Vec<usize> = match &opts.save.nodes {
        None => (1..net.nodes.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| net.find_node(n).filter(|&k| k != GROUND).ok_or_else(|| Error::Config(format!("cannot save unknown node `{n}`"))))
            .collect::<Result<_>>()?,
    };
    let devices: Vec<String> = net.mosfets().map(|m| m.0.to_string()).collect();
    let mut out = TranResult {
        time: Vec::new(),
        nodes: saved.iter().map(|&k| net.nodes[k].clone()).collect(),
        voltages: vec![Vec::new(); saved.len()],
        devices,
        polarity: eng.mos.iter().map(|m| m.slot).collect(),
        temps: Vec::new(),
        powers: Vec::new(),
        currents: Vec::new(),
        peak_rise: vec![0.0; ndev],
        ambient: opts.ambient,
    };
    if opts.save.devices {
        out.temps = vec![Vec::new(); ndev];
        out.powers = vec![Vec::new(); ndev];
        out.currents = vec![Vec::new(); ndev];
    }
    let (mut cur, mut pow) = eng.device_state(&x, &temps);
    let record = |out: &mut TranResult, t: f64, x: &DVector<f64>, temps: &[f64], cur: &[f64], pow: &[f64]| {
        out.time.push(t);
        for (v, &k) in out.voltages.iter_mut().zip(&saved) {
            v.push(x[k - 1]);
        }
        if !out.temps.is_empty() {
            for k in 0..temps.len() {
                out.temps[k].push(temps[k]);
                out.powers[k].push(pow[k]);
                out.currents[k].push(cur[k]);
            }
        }
    };
    record(&mut out, 0.0, &x, &temps, &cur, &pow);

    let steps = (opts.t_stop / opts.dt).round() as usize;
    let mut first = true;
    for step in 1..=steps {
        let t0 = (step - 1) as f64 * opts.dt;
        let mut solved = false;
        'halving: for halving in 0..=opts.max_halvings {
            let sub = 1usize << halving;
            let h = opts.dt / sub as f64;
            let mut trial = x.clone();
            let saved_caps: Vec<f64> = eng.caps.iter().map(|c| c.i).collect();
            let mut was_first = first;
            for k in 1..=sub {
                let rule = if was_first { Rule::BackwardEuler(h) } else { Rule::Trapezoidal(h) };
                let prev = trial.clone();
                if eng.newton(&mut trial, &prev, t0 + k as f64 * h, rule, &temps, opts, 1.0).is_none() {
                    for (c, i) in eng.caps.iter_mut().zip(&saved_caps) {
                        c.i = *i;
                    }
                    continue 'halving;
                }
                eng.update_cap_currents(&trial, &prev, rule);
                was_first = false;
            }
            x = trial;
            first = false;
            solved = true;
            break;
        }
        if !solved {
            return Err(Error::NoConvergence {
                what: format!("transient Newton at t = {:e} s after {} step halvings", t0 + opts.dt, opts.max_halvings),
                residual: f64::NAN,
            });
        }
        let (new_cur, new_pow) = eng.device_state(&x, &temps);
        if !states.is_empty() {
            let mut p = vec![(0.0, 0.0); pairs];
            for (m, (a, b)) in eng.mos.iter().zip(pow.iter().zip(&new_pow)) {
                let avg = 0.5 * (a + b);
                match m.slot {
                    Device::N => p[m.pair].0 += avg,
                    Device::P => p[m.pair].1 += avg,
                }
            }
            for ((s, m), (pn, pp)) in states.iter_mut().zip(thermal).zip(p) {
                s.advance(m, pn, pp, opts.dt);
            }
            pair_temps(&states, &mut temps, &eng);
            for (peak, t) in out.peak_rise.iter_mut().zip(&temps) {
                *peak = peak.max(t - opts.ambient);
            }
        }
        cur = new_cur;
        pow = new_pow;
        if step % opts.save.stride == 0 || step == steps {
            record(&mut out, step as f64 * opts.dt, &x, &temps, &cur, &pow);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fosterfit::FosterNetwork;
    use crate::Flavor;

    fn rc(r: f64, c: f64, v: f64) -> Netlist {
        let mut n = Netlist::new();
        let (a, b) = (n.node("in"), n.node("out"));
        n.vsource("vin", a, Waveform::Pwl { points: vec![(0.0, 0.0), (1e-15, v)], period: None });
        n.resistor("r1", a, b, r);
        n.capacitor("c1", b, GROUND, c);
        n
    }

    #[test]
    fn rc_charging_matches_exponential() {
        let (r, c, v) = (10e3, 10e-15, 0.7);
        let tau = r * c;
        let opts = SimOptions { t_stop: 5.0 * tau, dt: 0.1e-12, ..Default::default() };
        let res = tran(&rc(r, c, v), &opts, &[]).unwrap();
        let out = res.node("out").unwrap();
        let mut worst: f64 = 0.0;
        for (t, vo) in res.time.iter().zip(out) {
            if *t >= 0.05 * tau {
                let want = v * -(-t / tau).exp_m1();
                worst = worst.max(((vo - want) / want).abs());
            }
        }
        assert!(worst < 5e-3, "worst relative error {worst}");
    }

    #[test]
    fn waveform_square_wave() {
        let w = Waveform::square(0.7, 10e-9, 1e-12, 2.5e-9);
        assert_eq!(w.value(0.0), 0.0);
        assert!((w.value(2.5e-9 + 0.5e-12) - 0.35).abs() < 1e-9);
        assert_eq!(w.value(5e-9), 0.7);
        assert_eq!(w.value(9e-9), 0.0);
        assert_eq!(w.value(15e-9), 0.7);
        w.validate().unwrap();
        assert!(Waveform::Pwl { points: vec![(1.0, 0.0), (0.5, 1.0)], period: None }.validate().is_err());
    }

    #[test]
    fn floating_node_rejected() {
        let mut n = rc(1e3, 1e-15, 1.0);
        let x = n.node("island");
        let y = n.node("island2");
        n.capacitor("cx", x, y, 1e-15);
        let err = n.validate().unwrap_err();
        assert!(err.to_string().contains("island"));
    }

    #[test]
    fn netlist_json_round_trip() {
        let n = rc(1e3, 1e-15, 1.0);
        let s = serde_json::to_string(&n).unwrap();
        let back: Netlist = serde_json::from_str(&s).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn shmod_one_requires_models() {
        let mut n = Netlist::new();
        let (vdd, a, out) = (n.node("vdd"), n.node("a"), n.node("out"));
        let mn = n.add_model(CompactModelParams::calibrated(Flavor::Nsfet, Device::N));
        let mp = n.add_model(CompactModelParams::calibrated(Flavor::Nsfet, Device::P));
        n.vsource("vdd", vdd, Waveform::Dc { v: 0.7 });
        n.vsource("va", a, Waveform::Dc { v: 0.0 });
        n.mosfet("mn", out, a, GROUND, mn, 0);
        n.mosfet("mp", out, a, vdd, mp, 0);
        let opts = SimOptions { shmod: 1, t_stop: 1e-12, ..Default::default() };
        assert!(tran(&n, &opts, &[]).is_err());
        let empty = FosterNetwork::new(vec![]).unwrap();
        let model = DevicePairThermalModel::new(empty.clone(), empty.clone(), empty.clone(), empty, 300.0).unwrap();
        let r = tran(&n, &opts, &[model]).unwrap();
        assert!((r.node("out").unwrap()[0] - 0.7).abs() < 1e-3);
    }
}
