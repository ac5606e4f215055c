//! Pipeline stages shared by the subcommands and the full project run.
//! Every stage fills an [`Artifacts`] set and returns its structured result.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thermonet::circuit::{scenario_run, FlavorSetup, ReportRow, ScenarioInputs, SweepSpec};
use thermonet::compact::{
    device_power, extract_isothermal, extract_thermal, reference_curves, CompactModelParams, IvCurveSet, ModelCard, ReferenceDevice,
};
use thermonet::csvio::{fmt_f64, Table};
use thermonet::fosterfit::{FitReport, FitResult};
use thermonet::geometry::{GeometryConfig, Scene, VoxelGrid};
use thermonet::heatsolve::{energy_balance, steady_state_converged, step_response, SolverConfig, SteadyState, ThermalStepResponse};
use thermonet::nid::{bayes_deconvolve, detect_order, log_derivative, DeconvConfig, OrderReport, TimeConstantSpectrum};
use thermonet::xnet::{assemble, AssemblyConfig, CrosstalkReport, DevicePairThermalModel, ModelJson, PairResponses, PAIRS};
use thermonet::{Device, Error, Flavor, Result};

use crate::artifacts::{sha256_hex, Artifacts, Provenance};
use crate::config::{CardSource, Project};
use crate::svg::{Chart, Series};

pub fn pair_tag(heater: Device, monitor: Device) -> String {
    format!("{heater}{monitor}")
}

/// Per-device pair of values, keyed `n` and `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerDevice {
    pub n: f64,
    pub p: f64,
}

impl PerDevice {
    fn from_fn(f: impl Fn(Device) -> f64) -> Self {
        PerDevice { n: f(Device::N), p: f(Device::P) }
    }

    pub fn get(&self, d: Device) -> f64 {
        match d {
            Device::N => self.n,
            Device::P => self.p,
        }
    }
}

/// Steady impedances `nn, np, pn, pp`, K/W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZthMatrix {
    pub nn: f64,
    pub np: f64,
    pub pn: f64,
    pub pp: f64,
}

impl ZthMatrix {
    pub fn get(&self, heater: Device, monitor: Device) -> f64 {
        match (heater, monitor) {
            (Device::N, Device::N) => self.nn,
            (Device::N, Device::P) => self.np,
            (Device::P, Device::N) => self.pn,
            (Device::P, Device::P) => self.pp,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub dims: [usize; 3],
    pub voxel_size_nm: [f64; 3],
    pub voxels: usize,
    pub heater_voxels: PerDevice,
    pub materials: Vec<String>,
}

impl GridSummary {
    pub fn new(grid: &VoxelGrid) -> Self {
        GridSummary {
            dims: grid.dims,
            voxel_size_nm: grid.voxel_size,
            voxels: grid.len(),
            heater_voxels: PerDevice::from_fn(|d| grid.heater(d).len() as f64),
            materials: grid.materials.0.iter().map(|m| m.name.clone()).collect(),
        }
    }
}

pub fn geometry_stage(cfg: &GeometryConfig, arts: &mut Artifacts) -> Result<(Scene, VoxelGrid)> {
    let (scene, grid) = cfg.build()?;
    arts.json("scene.json", &scene)?;
    arts.json("grid.json", &GridSummary::new(&grid))?;
    Ok((scene, grid))
}

/// Steady solves with each device heated alone at its calibration power.
#[derive(Debug, Clone, Serialize)]
#[allow(non_snake_case)]
pub struct SteadyReport {
    pub flavor: Flavor,
    pub power_W: PerDevice,
    pub zth_K_per_W: ZthMatrix,
    pub max_rise_K: PerDevice,
    /// Relative mismatch of sink outflow and injected power.
    pub energy_balance: PerDevice,
    /// `|z_np - z_pn| / max(z_np, z_pn)`.
    pub reciprocity: f64,
    pub crosstalk: CrosstalkReport,
}

pub fn steady_report(flavor: Flavor, states: &[SteadyState; 2]) -> Result<SteadyReport> {
    let [n, p] = states;
    let zth = ZthMatrix { nn: n.zth(Device::N), np: n.zth(Device::P), pn: p.zth(Device::N), pp: p.zth(Device::P) };
    let crosstalk = CrosstalkReport::new(p.monitor(Device::N), n.monitor(Device::P), p.monitor(Device::P), n.monitor(Device::N), p.power, n.power)?;
    Ok(SteadyReport {
        flavor,
        power_W: PerDevice { n: n.power, p: p.power },
        zth_K_per_W: zth,
        max_rise_K: PerDevice { n: n.max_rise, p: p.max_rise },
        energy_balance: PerDevice { n: energy_balance(n), p: energy_balance(p) },
        reciprocity: (zth.np - zth.pn).abs() / zth.np.max(zth.pn),
        crosstalk,
    })
}

pub struct HeatResult {
    pub steady: SteadyReport,
    pub responses: PairResponses,
}

fn zth_chart(responses: &PairResponses) -> String {
    let series: Vec<Series> = responses
        .iter()
        .map(|r| Series { name: pair_tag(r.heater, r.monitor), points: r.times.iter().copied().zip(r.zth.iter().copied()).collect() })
        .collect();
    Chart { title: "Thermal step responses", x_label: "t (s)", y_label: "Zth (K/W)", log_x: true }.render(&series)
}

/// Steady solves and step responses for both heaters.
pub fn heat_stage(flavor: Flavor, grid: &VoxelGrid, cfg: &SolverConfig, svg: bool, arts: &mut Artifacts) -> Result<HeatResult> {
    let power = |d| device_power(flavor, d);
    let states = [steady_state_converged(grid, Device::N, power(Device::N), cfg)?, steady_state_converged(grid, Device::P, power(Device::P), cfg)?];
    let steady = steady_report(flavor, &states)?;
    let n = step_response(grid, Device::N, power(Device::N), cfg)?;
    let p = step_response(grid, Device::P, power(Device::P), cfg)?;
    let responses = PairResponses::from_runs(n, p)?;
    for r in responses.iter() {
        arts.csv(r.file_name(), r.to_table())?;
    }
    arts.json("steady.json", &steady)?;
    if svg {
        arts.raw("zth.svg", zth_chart(&responses).into_bytes())?;
    }
    Ok(HeatResult { steady, responses })
}

pub struct NidResult {
    pub spectrum: TimeConstantSpectrum,
    pub order: OrderReport,
}

pub fn spectrum_table(s: &TimeConstantSpectrum) -> Table {
    let mut t = Table::new(&["zeta", "tau_s", "density_K_per_W"]);
    for (z, d) in s.zeta.iter().zip(&s.density) {
        t.push_numbers(&[*z, z.exp(), *d]);
    }
    t
}

/// Spectrum and order of one curve, written as `spectrum_<stem>.csv` and `order_<stem>.json`.
pub fn nid_stage(resp: &ThermalStepResponse, cfg: &DeconvConfig, stem: &str, arts: &mut Artifacts) -> Result<NidResult> {
    let spectrum = bayes_deconvolve(&log_derivative(resp, cfg)?, cfg)?;
    let order = detect_order(&spectrum, cfg);
    arts.csv(format!("spectrum_{stem}.csv"), spectrum_table(&spectrum))?;
    arts.json(format!("order_{stem}.json"), &order)?;
    Ok(NidResult { spectrum, order })
}

fn spectrum_chart(spectra: &[(String, &TimeConstantSpectrum)]) -> String {
    let series: Vec<Series> = spectra
        .iter()
        .map(|(name, s)| Series { name: name.clone(), points: s.zeta.iter().map(|z| z.exp()).zip(s.density.iter().copied()).collect() })
        .collect();
    Chart { title: "Time-constant spectra", x_label: "tau (s)", y_label: "R(zeta) (K/W)", log_x: true }.render(&series)
}

/// One fitted ladder of a pair model.
#[derive(Debug, Clone, Serialize)]
pub struct LadderFit {
    pub pair: String,
    /// Order the spectrum suggested.
    pub nid_order: usize,
    /// Order of the fitted ladder.
    pub order: usize,
    pub rmse: f64,
    pub ga_rmse: f64,
    pub stages: FitReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairModelFile {
    #[serde(flatten)]
    pub model: ModelJson,
    pub fits: Vec<LadderFit>,
}

pub struct XnetResult {
    pub model: DevicePairThermalModel,
    pub fits: [FitResult; 4],
    pub crosstalk: CrosstalkReport,
}

/// Fits all four ladders and reports the model's steady crosstalk at the
/// powers the self responses were computed with.
pub fn xnet_stage(responses: &PairResponses, orders: [usize; 4], cfg: &AssemblyConfig, arts: &mut Artifacts) -> Result<XnetResult> {
    let (model, fits) = assemble(responses, orders, cfg)?;
    let file = PairModelFile {
        model: model.to_json(),
        fits: PAIRS
            .iter()
            .zip(&fits)
            .zip(orders)
            .map(|((&(h, m), f), nid_order)| LadderFit {
                pair: pair_tag(h, m),
                nid_order,
                order: f.network.order(),
                rmse: f.rmse,
                ga_rmse: f.ga_rmse,
                stages: FitReport::new(&f.network, f.rmse),
            })
            .collect(),
    };
    let power = |d| responses.get(d, d).power;
    let crosstalk = CrosstalkReport::from_model(&model, power(Device::N), power(Device::P))?;
    arts.json("pair_model.json", &file)?;
    arts.json("crosstalk.json", &crosstalk)?;
    Ok(XnetResult { model, fits, crosstalk })
}

/// A card as written to disk, with the RMS relative current error of its fit.
#[derive(Debug, Clone, Serialize)]
pub struct CardFile {
    #[serde(flatten)]
    pub card: ModelCard,
    pub fit_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct ExtractedDevice {
    pub iso: CompactModelParams,
    pub iso_rmse: f64,
    pub thermal: CompactModelParams,
    pub thermal_rmse: f64,
}

pub fn reference_iv(flavor: Flavor, d: Device, rth: Option<f64>) -> Result<IvCurveSet> {
    reference_curves(&ReferenceDevice::for_flavor(flavor, d), rth)
}

/// Two-phase extraction for both devices against the reference curves,
/// self-heated with each device's own ladder resistance.
pub fn extract_stage(flavor: Flavor, model: &DevicePairThermalModel, arts: &mut Artifacts) -> Result<[ExtractedDevice; 2]> {
    let mut out = Vec::new();
    for d in Device::BOTH {
        let rth = model.rth(d, d);
        let iso_iv = reference_iv(flavor, d, None)?;
        let she_iv = reference_iv(flavor, d, Some(rth))?;
        let iso = extract_isothermal(&iso_iv, &CompactModelParams::base(d))?;
        let th = extract_thermal(&she_iv, &iso.params, rth)?;
        arts.csv(format!("iv/iv_{d}_iso.csv"), iso_iv.to_table())?;
        arts.csv(format!("iv/iv_{d}_she.csv"), she_iv.to_table())?;
        arts.json(format!("cards/card_{d}_iso.json"), &CardFile { card: ModelCard { params: iso.params.clone(), shmod: 0 }, fit_rmse: iso.rmse })?;
        arts.json(format!("cards/card_{d}.json"), &CardFile { card: ModelCard { params: th.params.clone(), shmod: 1 }, fit_rmse: th.rmse })?;
        out.push(ExtractedDevice { iso: iso.params, iso_rmse: iso.rmse, thermal: th.params, thermal_rmse: th.rmse });
    }
    Ok(out.try_into().expect("two devices"))
}

/// Runs the sweep and writes `metrics.csv` and `compare.csv`.
pub fn sweep_stage(spec: &SweepSpec, inputs: &ScenarioInputs, svg: bool, arts: &mut Artifacts) -> Result<Vec<ReportRow>> {
    let rows = scenario_run(spec, inputs)?;
    let metrics = ReportRow::table(&rows);
    let compare = compare_table(&metrics)?;
    if svg {
        arts.raw("compare.svg", compare_chart(&compare)?.into_bytes())?;
    }
    arts.csv("metrics.csv", metrics)?;
    arts.csv("compare.csv", compare)?;
    Ok(rows)
}

const CELL_METRICS: [(&str, &str); 3] = [("t_p", "t_p_s"), ("t_r", "t_r_s"), ("t_f", "t_f_s")];
const RO_METRICS: [(&str, &str); 1] = [("ro_freq", "ro_freq_Hz")];

/// Side-by-side shmod=0/1 values per flavor, one row per case and metric.
pub fn compare_table(metrics: &Table) -> Result<Table> {
    let col = |name: &str| metrics.column_index(name);
    let (c_cell, c_flavor, c_load, c_stages, c_shmod) = (col("cell")?, col("flavor")?, col("c_load_fF")?, col("stages")?, col("shmod")?);
    let mut flavors: Vec<String> = Vec::new();
    // (cell, load, stages) in first-seen order -> flavor -> shmod -> row.
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut cases: BTreeMap<(String, String, String), BTreeMap<String, BTreeMap<String, &Vec<String>>>> = BTreeMap::new();
    for row in &metrics.rows {
        let key = (row[c_cell].clone(), row[c_load].clone(), row[c_stages].clone());
        if !flavors.contains(&row[c_flavor]) {
            flavors.push(row[c_flavor].clone());
        }
        if !cases.contains_key(&key) {
            order.push(key.clone());
        }
        let slot = cases.entry(key).or_default().entry(row[c_flavor].clone()).or_default();
        if slot.insert(row[c_shmod].clone(), row).is_some() {
            return Err(Error::Config(format!("metrics list {} {} twice for one shmod", row[c_cell], row[c_flavor])));
        }
    }
    let mut header: Vec<String> = ["cell", "c_load_fF", "stages", "metric"].map(String::from).to_vec();
    for f in &flavors {
        header.extend([format!("{f}_shmod0"), format!("{f}_shmod1"), format!("{f}_delta_pct")]);
    }
    let mut t = Table::new(&header);
    for key in order {
        let by_flavor = &cases[&key];
        let list: &[(&str, &str)] = if key.2.is_empty() { &CELL_METRICS } else { &RO_METRICS };
        for &(metric, column) in list {
            let c = col(column)?;
            let mut row = vec![key.0.clone(), key.1.clone(), key.2.clone(), metric.to_string()];
            for f in &flavors {
                let get = |s: &str| by_flavor.get(f).and_then(|m| m.get(s)).map(|r| r[c].clone()).unwrap_or_default();
                let (a, b) = (get("0"), get("1"));
                let delta = match (a.parse::<f64>(), b.parse::<f64>()) {
                    (Ok(a), Ok(b)) if a != 0.0 => fmt_f64(100.0 * (b / a - 1.0)),
                    _ => String::new(),
                };
                row.extend([a, b, delta]);
            }
            t.push_row(row);
        }
    }
    Ok(t)
}

/// Percent change of `t_p` over load for every loaded cell with more than one load.
pub fn compare_chart(compare: &Table) -> Result<String> {
    let (c_cell, c_load, c_metric) = (compare.column_index("cell")?, compare.column_index("c_load_fF")?, compare.column_index("metric")?);
    let mut series: Vec<Series> = Vec::new();
    for (k, name) in compare.header.iter().enumerate().filter(|(_, h)| h.ends_with("_delta_pct")) {
        let flavor = name.trim_end_matches("_delta_pct");
        let mut by_cell: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for r in compare.rows.iter().filter(|r| r[c_metric] == "t_p") {
            if let (Ok(x), Ok(y)) = (r[c_load].parse::<f64>(), r[k].parse::<f64>()) {
                by_cell.entry(&r[c_cell]).or_default().push((x, y));
            }
        }
        for (cell, points) in by_cell.into_iter().filter(|(_, p)| p.len() > 1) {
            series.push(Series { name: format!("{cell} {flavor}"), points });
        }
    }
    Ok(Chart { title: "Delay change under self-heating", x_label: "C_L (fF)", y_label: "delta t_p (%)", log_x: false }.render(&series))
}

/// Everything one flavor of a project run produced.
pub struct FlavorRun {
    pub flavor: Flavor,
    pub grid: GridSummary,
    pub steady: SteadyReport,
    pub responses: PairResponses,
    pub nid: Vec<NidResult>,
    pub orders: [usize; 4],
    pub xnet: XnetResult,
    pub extracted: [ExtractedDevice; 2],
}

pub struct RunOutput {
    pub artifacts: Artifacts,
    pub flavors: Vec<FlavorRun>,
    pub rows: Vec<ReportRow>,
    /// Wall time of the circuit sweep; kept out of the artifacts.
    pub sweep_seconds: f64,
}

#[derive(Serialize)]
struct Manifest {
    files: BTreeMap<String, String>,
}

/// Runs every stage for every flavor, then the sweep.
pub fn run_project(project: &Project, svg: bool) -> Result<RunOutput> {
    let prov = Provenance::new(project.config_hash.clone(), project.config.seed);
    let mut arts = Artifacts::new(prov.clone());
    let mut runs = Vec::new();
    for &flavor in &project.config.flavors {
        let mut fa = Artifacts::new(prov.clone());
        let gcfg = &project.geometry[&flavor];
        let mut geo = Artifacts::new(prov.clone());
        let (_, grid) = geometry_stage(gcfg, &mut geo)?;
        fa.absorb(Path::new("geometry"), geo)?;

        let mut zth = Artifacts::new(prov.clone());
        let heat = heat_stage(flavor, &grid, &project.config.solver, svg, &mut zth)?;
        fa.absorb(Path::new("zth"), zth)?;

        let mut nid_arts = Artifacts::new(prov.clone());
        let mut nid = Vec::new();
        for &(h, m) in &PAIRS {
            nid.push(nid_stage(heat.responses.get(h, m), &project.config.deconv, &pair_tag(h, m), &mut nid_arts)?);
        }
        if svg {
            let spectra: Vec<(String, &TimeConstantSpectrum)> = PAIRS.iter().zip(&nid).map(|(&(h, m), r)| (pair_tag(h, m), &r.spectrum)).collect();
            nid_arts.raw("spectra.svg", spectrum_chart(&spectra).into_bytes())?;
        }
        fa.absorb(Path::new("nid"), nid_arts)?;
        let orders: [usize; 4] = std::array::from_fn(|k| nid[k].order.order);

        let xnet = xnet_stage(&heat.responses, orders, &project.assembly_for(flavor), &mut fa)?;
        let extracted = extract_stage(flavor, &xnet.model, &mut fa)?;
        arts.absorb(Path::new(flavor.name()), fa)?;
        runs.push(FlavorRun { flavor, grid: GridSummary::new(&grid), steady: heat.steady, responses: heat.responses, nid, orders, xnet, extracted });
    }

    let mut inputs = ScenarioInputs::default();
    for r in &runs {
        let cards = match project.config.cards {
            CardSource::Calibrated => Device::BOTH.map(|d| CompactModelParams::calibrated(r.flavor, d)),
            CardSource::Extracted => [r.extracted[0].thermal.clone(), r.extracted[1].thermal.clone()],
        };
        inputs.flavors.insert(r.flavor, FlavorSetup { cards, thermal: r.xnet.model.clone() });
    }
    let start = Instant::now();
    let rows = sweep_stage(&project.sweep, &inputs, svg, &mut arts)?;
    let sweep_seconds = start.elapsed().as_secs_f64();

    let manifest = Manifest { files: arts.files().iter().map(|(p, d)| (slash_path(p), sha256_hex(d))).collect() };
    arts.json("manifest.json", &manifest)?;
    Ok(RunOutput { artifacts: arts, flavors: runs, rows, sweep_seconds })
}

fn slash_path(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// JSON artifacts only, for determinism checks.
pub fn json_artifacts(arts: &Artifacts) -> BTreeMap<PathBuf, &[u8]> {
    arts.files().iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "json")).map(|(p, d)| (p.clone(), d.as_slice())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> Table {
        let mut t = Table::new(&thermonet::circuit::REPORT_HEADER);
        for (cell, flavor, load, stages, shmod, tp, f) in [
            ("INV", "nsfet", "2", "", "0", "1e-12", ""),
            ("INV", "nsfet", "2", "", "1", "1.1e-12", ""),
            ("RO", "nsfet", "20", "3", "0", "", "1e9"),
            ("RO", "nsfet", "20", "3", "1", "", "9e8"),
        ] {
            t.push_row([cell, flavor, load, stages, shmod, tp, tp, tp, f, "0", "0", ""].map(String::from).to_vec());
        }
        t
    }

    #[test]
    fn compare_pairs_shmods() {
        let c = compare_table(&metrics()).unwrap();
        assert_eq!(c.header, ["cell", "c_load_fF", "stages", "metric", "nsfet_shmod0", "nsfet_shmod1", "nsfet_delta_pct"]);
        assert_eq!(c.rows.len(), 4);
        let delta: Vec<f64> = c.column("nsfet_delta_pct").unwrap();
        assert!((delta[0] - 10.0).abs() < 1e-9);
        assert_eq!(c.rows[3][3], "ro_freq");
        assert!((delta[3] + 10.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_rows_rejected() {
        let mut m = metrics();
        let r = m.rows[0].clone();
        m.rows.push(r);
        assert!(compare_table(&m).is_err());
    }
}
