//! Subcommand implementations. Each builds its artifacts in memory and
//! returns them; the caller writes them only when the command succeeds.

use std::path::{Path, PathBuf};

use serde_json::json;
use thermonet::circuit::{run_cell, run_ro, ReportRow, ScenarioInputs, SimOptions};
use thermonet::compact::{device_power, extract_isothermal, extract_thermal, CompactModelParams, IvCurveSet, ModelCard};
use thermonet::csvio::Table;
use thermonet::fosterfit::{ga_fit, FitReport, GaConfig};
use thermonet::geometry::GeometryConfig;
use thermonet::heatsolve::{SolverConfig, ThermalStepResponse};
use thermonet::nid::DeconvConfig;
use thermonet::xnet::{AssemblyConfig, CrosstalkReport, PairResponses, PAIRS};
use thermonet::{Device, Error, Flavor, Result};

use crate::artifacts::{Artifacts, ConfigHash, Provenance};
use crate::config::{self, read_json, spec_dir, CellSpec, Project, RoSpec, SweepFile};
use crate::pipeline::{self, CardFile};

fn utf8(path: &Path, data: Vec<u8>) -> Result<String> {
    String::from_utf8(data).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))
}

fn read_table(hash: &mut ConfigHash, label: &str, path: &Path) -> Result<Table> {
    let text = utf8(path, hash.file(label, path)?)?;
    Table::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read_zth(hash: &mut ConfigHash, label: &str, path: &Path) -> Result<ThermalStepResponse> {
    let t = read_table(hash, label, path)?;
    ThermalStepResponse::from_table(&t, path.to_str())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

pub fn geom_build(cfg_path: &Path) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let text = utf8(cfg_path, hash.file("geometry", cfg_path)?)?;
    let cfg = GeometryConfig::from_json(&text)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    pipeline::geometry_stage(&cfg, &mut arts)?;
    Ok(arts)
}

pub fn heat_respond(geometry: &Path, solver: Option<&Path>, svg: bool) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let text = utf8(geometry, hash.file("geometry", geometry)?)?;
    let cfg = GeometryConfig::from_json(&text)?;
    let solver: SolverConfig = config::settings(&mut hash, "solver", solver)?;
    solver.validate()?;
    let (_, grid) = cfg.build()?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    pipeline::heat_stage(cfg.geometry.arrangement.flavor(), &grid, &solver, svg, &mut arts)?;
    Ok(arts)
}

pub fn nid_spectrum(zth: &Path, deconv: Option<&Path>) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let resp = read_zth(&mut hash, "zth", zth)?;
    let cfg: DeconvConfig = config::settings(&mut hash, "deconv", deconv)?;
    cfg.validate()?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    pipeline::nid_stage(&resp, &cfg, &stem(zth), &mut arts)?;
    Ok(arts)
}

pub fn fit_foster(zth: &Path, order: usize, seed: u64, ga: Option<&Path>) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let resp = read_zth(&mut hash, "zth", zth)?;
    let mut cfg: GaConfig = match ga {
        Some(p) => read_json(&mut hash, "ga", p)?,
        None => AssemblyConfig::default().ga_for(resp.heater, resp.monitor),
    };
    cfg.seed = seed;
    hash.value("ga", &cfg)?;
    hash.value("order", &order)?;
    let fit = ga_fit(&resp, order, &cfg)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), seed));
    let report = FitReport::new(&fit.network, fit.rmse);
    arts.json(format!("foster_{}.json", stem(zth)), &json!({ "fit": report, "ga_rmse": fit.ga_rmse, "relative_floor": cfg.relative_floor }))?;
    Ok(arts)
}

pub fn xnet_assemble(curves: [&Path; 4], orders: Option<[usize; 4]>, seed: u64, assembly: Option<&Path>) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let mut resp = Vec::new();
    for (path, (h, m)) in curves.iter().zip(PAIRS) {
        resp.push(read_zth(&mut hash, &pipeline::pair_tag(h, m), path)?);
    }
    let [nn, np, pn, pp]: [ThermalStepResponse; 4] = resp.try_into().expect("four curves");
    let responses = PairResponses::from_runs([nn, np], [pn, pp])?;
    let mut cfg: AssemblyConfig = match assembly {
        Some(p) => read_json(&mut hash, "assembly", p)?,
        None => AssemblyConfig::default(),
    };
    cfg.ga.seed = seed;
    hash.value("assembly", &cfg)?;
    let orders = match orders {
        Some(o) => o,
        None => {
            let deconv = DeconvConfig::default();
            let mut scratch = Artifacts::new(Provenance::new(String::new(), seed));
            let mut o = [0; 4];
            for (k, &(h, m)) in PAIRS.iter().enumerate() {
                o[k] = pipeline::nid_stage(responses.get(h, m), &deconv, &pipeline::pair_tag(h, m), &mut scratch)?.order.order;
            }
            o
        }
    };
    hash.value("orders", &orders)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), seed));
    pipeline::xnet_stage(&responses, orders, &cfg, &mut arts)?;
    Ok(arts)
}

/// Powers for the crosstalk coefficient: a flavor's calibration powers, or explicit ones.
pub enum Powers {
    Flavor(Flavor),
    Explicit { p_n: f64, p_p: f64 },
}

pub fn xnet_rho(model: &Path, powers: Powers) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let m = config::load_thermal(&mut hash, model)?;
    let (p_n, p_p) = match powers {
        Powers::Flavor(f) => (device_power(f, Device::N), device_power(f, Device::P)),
        Powers::Explicit { p_n, p_p } => (p_n, p_p),
    };
    hash.value("powers", &[p_n, p_p])?;
    let report = CrosstalkReport::from_model(&m, p_n, p_p)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    arts.json("crosstalk.json", &report)?;
    Ok(arts)
}

pub fn extract_reference(flavor: Flavor, device: Device, rth: Option<f64>) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    hash.value("reference", &json!({ "flavor": flavor, "device": device, "rth": rth }))?;
    let iv = pipeline::reference_iv(flavor, device, rth)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    let kind = if rth.is_some() { "she" } else { "iso" };
    arts.csv(format!("iv_{device}_{kind}.csv"), iv.to_table())?;
    Ok(arts)
}

fn read_iv(hash: &mut ConfigHash, path: &Path) -> Result<IvCurveSet> {
    let t = read_table(hash, "iv", path)?;
    IvCurveSet::from_table(&t)
}

fn read_card(hash: &mut ConfigHash, label: &str, path: &Path, want: Device) -> Result<CompactModelParams> {
    config::load_card(hash, path, want).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{label}: {m}")),
        other => other,
    })
}

pub fn extract_iso(iv: &Path, start: Option<&Path>) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let curves = read_iv(&mut hash, iv)?;
    let start = match start {
        Some(p) => read_card(&mut hash, "start card", p, curves.device)?,
        None => CompactModelParams::base(curves.device),
    };
    let fit = extract_isothermal(&curves, &start)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    let card = CardFile { card: ModelCard { params: fit.params, shmod: 0 }, fit_rmse: fit.rmse };
    arts.json(format!("card_{}_iso.json", curves.device), &card)?;
    Ok(arts)
}

/// Self thermal resistance for the thermal phase.
pub enum RthSource<'a> {
    Value(f64),
    Model(&'a Path),
}

pub fn extract_she(iv: &Path, iso: &Path, rth: RthSource<'_>) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let curves = read_iv(&mut hash, iv)?;
    let start = read_card(&mut hash, "isothermal card", iso, curves.device)?;
    let rth = match rth {
        RthSource::Value(r) => r,
        RthSource::Model(p) => config::load_thermal(&mut hash, p)?.rth(curves.device, curves.device),
    };
    hash.value("rth", &rth)?;
    let fit = extract_thermal(&curves, &start, rth)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    let card = CardFile { card: ModelCard { params: fit.params, shmod: 1 }, fit_rmse: fit.rmse };
    arts.json(format!("card_{}.json", curves.device), &card)?;
    Ok(arts)
}

fn single_row(
    cell: String,
    flavor: Flavor,
    load: f64,
    stages: Option<usize>,
    shmod: u8,
    res: &thermonet::circuit::TranResult,
    m: thermonet::circuit::Metrics,
) -> ReportRow {
    ReportRow {
        cell,
        flavor,
        c_load_fF: load,
        stages,
        shmod,
        metrics: m,
        dT_n_K: res.peak_rise_of(Device::N),
        dT_p_K: res.peak_rise_of(Device::P),
        delta_pct: None,
    }
}

fn check_shmod(shmod: u8) -> Result<()> {
    if shmod > 1 {
        return Err(Error::Config(format!("shmod must be 0 or 1, got {shmod}")));
    }
    Ok(())
}

pub fn sim_cell(spec_path: &Path) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let spec: CellSpec = read_json(&mut hash, "cell", spec_path)?;
    check_shmod(spec.shmod)?;
    let base = spec_dir(spec_path);
    let setup = config::flavor_setup(&mut hash, &base, spec.flavor, spec.cards.as_ref(), spec.thermal.as_deref(), spec.shmod)?;
    let dt = spec.dt.unwrap_or(SimOptions::default().dt);
    let (res, m) = run_cell(spec.cell, spec.c_load_fF * 1e-15, &setup, spec.shmod, &spec.stimulus, dt, true)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    arts.csv("waveforms.csv", res.to_table())?;
    let row = single_row(spec.cell.to_string(), spec.flavor, spec.c_load_fF, None, spec.shmod, &res, m);
    arts.csv("metrics.csv", ReportRow::table(&[row]))?;
    Ok(arts)
}

pub fn sim_ro(spec_path: &Path) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let spec: RoSpec = read_json(&mut hash, "ro", spec_path)?;
    check_shmod(spec.shmod)?;
    let base = spec_dir(spec_path);
    let setup = config::flavor_setup(&mut hash, &base, spec.flavor, spec.cards.as_ref(), spec.thermal.as_deref(), spec.shmod)?;
    let dt = spec.dt.unwrap_or(SimOptions::default().dt);
    let (res, m) = run_ro(spec.stages, spec.c_per_stage_fF * 1e-15, &setup, spec.shmod, dt, true)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    arts.csv("waveforms.csv", res.to_table())?;
    let row = single_row("RO".into(), spec.flavor, spec.c_per_stage_fF, Some(spec.stages), spec.shmod, &res, m);
    arts.csv("metrics.csv", ReportRow::table(&[row]))?;
    Ok(arts)
}

pub fn sim_sweep(path: &Path, svg: bool) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let file: SweepFile = read_json(&mut hash, "sweep", path)?;
    let base = spec_dir(path);
    let mut inputs = ScenarioInputs::default();
    for (&flavor, m) in &file.models {
        let setup = config::flavor_setup(&mut hash, &base, flavor, m.cards.as_ref(), Some(&m.thermal), 1)?;
        inputs.flavors.insert(flavor, setup);
    }
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    pipeline::sweep_stage(&file.sweep, &inputs, svg, &mut arts)?;
    Ok(arts)
}

pub fn report_compare(metrics: &Path, svg: bool) -> Result<Artifacts> {
    let mut hash = ConfigHash::default();
    let table = read_table(&mut hash, "metrics", metrics)?;
    let compare = pipeline::compare_table(&table)?;
    let mut arts = Artifacts::new(Provenance::new(hash.finish(), 0));
    if svg {
        arts.raw("compare.svg", pipeline::compare_chart(&compare)?.into_bytes())?;
    }
    arts.csv("compare.csv", compare)?;
    Ok(arts)
}

/// Full project run; returns the artifacts and the directory they belong in.
pub fn run(project_path: &Path, out: Option<&Path>, svg: bool) -> Result<(Artifacts, PathBuf)> {
    let project = Project::load(project_path)?;
    let dir = project.output_dir(out);
    let output = pipeline::run_project(&project, svg)?;
    Ok((output.artifacts, dir))
}
