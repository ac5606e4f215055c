//! Sweeps over cells, loads, flavors and the SHE switch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    cell, measure, measure_ro, ring_oscillator, ro_period_estimate, tran, CellKind, Metrics, Netlist, SaveSpec, SimOptions, Stimulus, TranResult,
};
use crate::compact::{CompactModelParams, VDD};
use crate::csvio::{fmt_f64, Table};
use crate::xnet::DevicePairThermalModel;
use crate::{Device, Error, Flavor, Result};

pub const REPORT_HEADER: [&str; 12] =
    ["cell", "flavor", "c_load_fF", "stages", "shmod", "t_p_s", "t_r_s", "t_f_s", "ro_freq_Hz", "dT_n_K", "dT_p_K", "delta_pct"];

/// Ring-oscillator runs last this many estimated periods.
const RO_PERIODS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FlavorSetup {
    /// NFET and PFET cards.
    pub cards: [CompactModelParams; 2],
    pub thermal: DevicePairThermalModel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioInputs {
    pub flavors: BTreeMap<Flavor, FlavorSetup>,
}

impl ScenarioInputs {
    pub fn get(&self, f: Flavor) -> Result<&FlavorSetup> {
        self.flavors.get(&f).ok_or_else(|| Error::Config(format!("no cards or thermal model for flavor {f}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[allow(non_snake_case)]
pub struct SweepSpec {
    pub cells: Vec<CellKind>,
    /// Cell output loads, fF.
    pub loads_fF: Vec<f64>,
    /// Per-cell loads, fF, replacing `loads_fF` for the cells listed.
    pub cell_loads_fF: BTreeMap<CellKind, Vec<f64>>,
    /// Ring-oscillator stage counts.
    pub ro_stages: Vec<usize>,
    /// Ring-oscillator load per stage, fF.
    pub ro_load_fF: f64,
    pub flavors: Vec<Flavor>,
    pub shmods: Vec<u8>,
    pub stimulus: Stimulus,
    /// s.
    pub dt: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            cells: Vec::new(),
            loads_fF: Vec::new(),
            cell_loads_fF: BTreeMap::new(),
            ro_stages: Vec::new(),
            ro_load_fF: 20.0,
            flavors: Vec::new(),
            shmods: vec![0, 1],
            stimulus: Stimulus::default(),
            dt: SimOptions::default().dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ReportRow {
    /// Cell name, or `RO` for a ring oscillator.
    pub cell: String,
    pub flavor: Flavor,
    pub c_load_fF: f64,
    pub stages: Option<usize>,
    pub shmod: u8,
    pub metrics: Metrics,
    /// Peak NFET temperature rise, K.
    pub dT_n_K: f64,
    pub dT_p_K: f64,
    /// Change of the headline metric (delay for cells, frequency for
    /// oscillators) against the matching shmod=0 row, percent.
    pub delta_pct: Option<f64>,
}

impl ReportRow {
    fn key(&self) -> (String, Flavor, u64, Option<usize>) {
        (self.cell.clone(), self.flavor, self.c_load_fF.to_bits(), self.stages)
    }

    fn headline(&self) -> Option<f64> {
        if self.stages.is_some() {
            self.metrics.ro_freq
        } else {
            self.metrics.t_p
        }
    }

    pub fn to_record(&self) -> Vec<String> {
        let o = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        vec![
            self.cell.clone(),
            self.flavor.to_string(),
            fmt_f64(self.c_load_fF),
            self.stages.map(|s| s.to_string()).unwrap_or_default(),
            self.shmod.to_string(),
            o(self.metrics.t_p),
            o(self.metrics.t_r),
            o(self.metrics.t_f),
            o(self.metrics.ro_freq),
            fmt_f64(self.dT_n_K),
            fmt_f64(self.dT_p_K),
            o(self.delta_pct),
        ]
    }

    pub fn table(rows: &[ReportRow]) -> Table {
        let mut t = Table::new(&REPORT_HEADER);
        for r in rows {
            t.push_row(r.to_record());
        }
        t
    }
}

fn thermal_for(net: &Netlist, setup: &FlavorSetup) -> Vec<DevicePairThermalModel> {
    vec![setup.thermal.clone(); net.pair_count()]
}

fn options(shmod: u8, t_stop: f64, dt: f64, net: &Netlist, full: bool) -> SimOptions {
    let probes = [net.probes.input, net.probes.output].into_iter().flatten().map(|k| net.nodes[k].clone()).collect();
    let save = if full { SaveSpec::default() } else { SaveSpec { nodes: Some(probes), devices: false, stride: 1 } };
    SimOptions { shmod, t_stop, dt, save, ..Default::default() }
}

fn probe_names(net: &Netlist) -> (String, String) {
    let name = |k: Option<usize>| net.nodes[k.expect("cells and rings set probes")].clone();
    (name(net.probes.input), name(net.probes.output))
}

/// One loaded cell run. Metrics average the full cycles after the first.
/// With `full` every node and device waveform is kept.
pub fn run_cell(kind: CellKind, c_load: f64, setup: &FlavorSetup, shmod: u8, stim: &Stimulus, dt: f64, full: bool) -> Result<(TranResult, Metrics)> {
    let net = cell(kind, c_load, stim, &setup.cards)?;
    let res = tran(&net, &options(shmod, stim.t_stop(), dt, &net, full), &thermal_for(&net, setup))?;
    let (i, o) = probe_names(&net);
    let m = measure(&res, &i, &o, VDD, stim.period)?;
    Ok((res, m))
}

/// One ring-oscillator run over 50 estimated periods. Metrics average the second half.
pub fn run_ro(stages: usize, c_per_stage: f64, setup: &FlavorSetup, shmod: u8, dt: f64, full: bool) -> Result<(TranResult, Metrics)> {
    let net = ring_oscillator(stages, c_per_stage, &setup.cards)?;
    let t_stop = RO_PERIODS * ro_period_estimate(stages, c_per_stage, &setup.cards);
    let res = tran(&net, &options(shmod, t_stop, dt, &net, full), &thermal_for(&net, setup))?;
    let (i, o) = probe_names(&net);
    let m = measure_ro(&res, &i, &o, VDD, 0.5 * t_stop)?;
    Ok((res, m))
}

/// Runs every combination in `spec`, cells before oscillators, in spec order.
pub fn scenario_run(spec: &SweepSpec, inputs: &ScenarioInputs) -> Result<Vec<ReportRow>> {
    if spec.shmods.iter().any(|&s| s > 1) {
        return Err(Error::Config("shmod must be 0 or 1".into()));
    }
    if let Some(k) = spec.cell_loads_fF.keys().find(|k| !spec.cells.contains(k)) {
        return Err(Error::Config(format!("cell_loads_fF names {k}, which is not in cells")));
    }
    let mut rows = Vec::new();
    for &flavor in &spec.flavors {
        let setup = inputs.get(flavor)?;
        for &kind in &spec.cells {
            for &load in spec.cell_loads_fF.get(&kind).unwrap_or(&spec.loads_fF) {
                for &shmod in &spec.shmods {
                    let (res, m) = run_cell(kind, load * 1e-15, setup, shmod, &spec.stimulus, spec.dt, false)?;
                    rows.push(row(kind.to_string(), flavor, load, None, shmod, m, &res));
                }
            }
        }
        for &stages in &spec.ro_stages {
            for &shmod in &spec.shmods {
                let (res, m) = run_ro(stages, spec.ro_load_fF * 1e-15, setup, shmod, spec.dt, false)?;
                rows.push(row("RO".into(), flavor, spec.ro_load_fF, Some(stages), shmod, m, &res));
            }
        }
    }
    let base: BTreeMap<_, Option<f64>> = rows.iter().filter(|r| r.shmod == 0).map(|r| (r.key(), r.headline())).collect();
    for r in rows.iter_mut().filter(|r| r.shmod == 1) {
        if let (Some(Some(b)), Some(h)) = (base.get(&r.key()), r.headline()) {
            r.delta_pct = Some(100.0 * (h / b - 1.0));
        }
    }
    Ok(rows)
}

fn row(cell: String, flavor: Flavor, load: f64, stages: Option<usize>, shmod: u8, metrics: Metrics, res: &TranResult) -> ReportRow {
    ReportRow {
        cell,
        flavor,
        c_load_fF: load,
        stages,
        shmod,
        metrics,
        dT_n_K: res.peak_rise_of(Device::N),
        dT_p_K: res.peak_rise_of(Device::P),
        delta_pct: None,
    }
}
