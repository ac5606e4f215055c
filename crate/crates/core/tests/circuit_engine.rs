//! Transient engine, cells and sweeps against analytic and structural oracles.

use std::collections::BTreeMap;

use thermonet::circuit::*;
use thermonet::compact::{CompactModelParams, VDD};
use thermonet::fosterfit::FosterNetwork;
use thermonet::xnet::DevicePairThermalModel;
use thermonet::{Device, Flavor};

fn ladders(self_stages: &[(f64, f64)], cross: &[(f64, f64)]) -> DevicePairThermalModel {
    let s = FosterNetwork::from_r_tau(self_stages).unwrap();
    let c = FosterNetwork::from_r_tau(cross).unwrap();
    DevicePairThermalModel::new(s.clone(), c.clone(), c, s, 300.0).unwrap()
}

/// Pair model with magnitudes typical of the FEM-derived ones.
fn thermal() -> DevicePairThermalModel {
    ladders(&[(0.8e6, 3e-11), (1.6e6, 2e-9)], &[(0.4e6, 2e-10)])
}

fn setup(flavor: Flavor) -> FlavorSetup {
    FlavorSetup { cards: Device::BOTH.map(|d| CompactModelParams::calibrated(flavor, d)), thermal: thermal() }
}

fn dt() -> f64 {
    SimOptions::default().dt
}

#[test]
fn inverter_dc_endpoints() {
    let s = setup(Flavor::Nsfet);
    let stim = Stimulus::default();
    let mut net = cell(CellKind::Inv, 2e-15, &stim, &s.cards).unwrap();
    let out = net.find_node("out").unwrap();
    for (vin, want) in [(0.0, VDD), (VDD, 0.0)] {
        net.set_source("va", Waveform::Dc { v: vin }).unwrap();
        let x = dc_operating_point(&net, 0.0, &SimOptions::default()).unwrap();
        assert!((x[out] - want).abs() < 1e-3, "v_in={vin}: v_out={}", x[out]);
    }
}

#[test]
fn halving_dt_changes_delay_by_under_one_percent() {
    let s = setup(Flavor::Nsfet);
    let stim = Stimulus::default();
    let (_, coarse) = run_cell(CellKind::Inv, 20e-15, &s, 1, &stim, dt(), false).unwrap();
    let (_, fine) = run_cell(CellKind::Inv, 20e-15, &s, 1, &stim, 0.5 * dt(), false).unwrap();
    let rel = (fine.t_p.unwrap() / coarse.t_p.unwrap() - 1.0).abs();
    assert!(rel < 0.01, "t_p moved by {rel}");
}

#[test]
fn zero_resistance_ladders_make_shmod_irrelevant() {
    let empty = FosterNetwork::new(Vec::new()).unwrap();
    let model = DevicePairThermalModel::new(empty.clone(), empty.clone(), empty.clone(), empty, 300.0).unwrap();
    let s = FlavorSetup { thermal: model, ..setup(Flavor::Cfet) };
    let stim = Stimulus::default();
    let (r0, m0) = run_cell(CellKind::Nand2, 10e-15, &s, 0, &stim, dt(), true).unwrap();
    let (r1, m1) = run_cell(CellKind::Nand2, 10e-15, &s, 1, &stim, dt(), true).unwrap();
    assert_eq!(r0.voltages, r1.voltages);
    assert_eq!(m0, m1);
    assert!(r1.peak_rise.iter().all(|&r| r == 0.0));
}

#[test]
fn output_charge_matches_device_current() {
    let mut cards = Device::BOTH.map(|d| CompactModelParams::calibrated(Flavor::Nsfet, d));
    for c in &mut cards {
        c.c_gs = 0.0;
        c.c_gd = 0.0;
    }
    let c_load = 10e-15;
    let stim = Stimulus::default();
    let net = cell(CellKind::Inv, c_load, &stim, &cards).unwrap();
    let opts = SimOptions { t_stop: stim.t_stop(), ..Default::default() };
    let res = tran(&net, &opts, &[]).unwrap();
    let v = res.node("out").unwrap();
    // Both drains sit on the output, and drain current leaves the node.
    let i_out: Vec<f64> = (0..res.time.len()).map(|k| -(res.currents[0][k] + res.currents[1][k])).collect();
    for cycle in 0..3 {
        let (a, b) = (cycle as f64 * stim.period, (cycle as f64 + 0.5) * stim.period);
        let ka = res.time.iter().position(|&t| t >= a).unwrap().max(1);
        let kb = res.time.iter().position(|&t| t >= b).unwrap();
        let q: f64 = (ka..kb).map(|k| 0.5 * (i_out[k] + i_out[k + 1]) * (res.time[k + 1] - res.time[k])).sum();
        let dq = c_load * (v[kb] - v[ka]);
        assert!(dq.abs() > 0.9 * c_load * VDD, "cycle {cycle} did not switch");
        assert!((q - dq).abs() < 0.01 * dq.abs(), "cycle {cycle}: {q} vs {dq}");
    }
}

#[test]
fn larger_load_heats_more() {
    let s = setup(Flavor::Nsfet);
    let stim = Stimulus::default();
    let (small, _) = run_cell(CellKind::Inv, 2e-15, &s, 1, &stim, dt(), false).unwrap();
    let (large, _) = run_cell(CellKind::Inv, 20e-15, &s, 1, &stim, dt(), false).unwrap();
    for d in Device::BOTH {
        assert!(small.peak_rise_of(d) > 0.0);
        assert!(large.peak_rise_of(d) > small.peak_rise_of(d), "{d}");
    }
}

#[test]
fn self_heating_slows_cells_and_rings() {
    let s = setup(Flavor::Cfet);
    let stim = Stimulus::default();
    let (_, c0) = run_cell(CellKind::Inv, 5e-15, &s, 0, &stim, dt(), false).unwrap();
    let (_, c1) = run_cell(CellKind::Inv, 5e-15, &s, 1, &stim, dt(), false).unwrap();
    assert!(c1.t_p.unwrap() >= c0.t_p.unwrap());
    let (_, r0) = run_ro(3, 20e-15, &s, 0, dt(), false).unwrap();
    let (_, r1) = run_ro(3, 20e-15, &s, 1, dt(), false).unwrap();
    assert!(r1.ro_freq.unwrap() <= r0.ro_freq.unwrap());
    assert!(r1.ro_period.unwrap() > r0.ro_period.unwrap());
}

#[test]
fn three_stage_ring_oscillates() {
    let s = setup(Flavor::Nsfet);
    let c = 20e-15;
    let (res, _) = run_ro(3, c, &s, 0, dt(), false).unwrap();
    let rising = crossings(&res.time, res.node("n0").unwrap(), 0.5 * VDD).into_iter().filter(|c| c.1).count();
    assert!(rising >= 6, "{rising} rising crossings");
}

/// Stage delay of a loaded inverter whose input comes from an identical
/// loaded inverter, so its input slew matches a ring stage.
fn driven_stage_delay(cards: &[CompactModelParams; 2], c: f64) -> f64 {
    let stim = Stimulus::default();
    let mut net = cell(CellKind::Inv, c, &stim, cards).unwrap();
    let (first, vdd) = (net.find_node("out").unwrap(), net.find_node("vdd").unwrap());
    let second = net.node("o2");
    let (mn, mp) = (net.add_model(cards[0].clone()), net.add_model(cards[1].clone()));
    net.mosfet("mn2", second, first, GROUND, mn, 1);
    net.mosfet("mp2", second, first, vdd, mp, 1);
    net.capacitor("c2", second, GROUND, c);
    let res = tran(&net, &SimOptions { t_stop: stim.t_stop(), ..Default::default() }, &[]).unwrap();
    measure(&res, "out", "o2", VDD, stim.period).unwrap().t_p.unwrap()
}

#[test]
fn nine_stage_period_sums_stage_delays() {
    let s = setup(Flavor::Nsfet);
    let c = 20e-15;
    let (_, ring) = run_ro(9, c, &s, 0, dt(), false).unwrap();
    let want = 2.0 * 9.0 * driven_stage_delay(&s.cards, c);
    let rel = (ring.ro_period.unwrap() / want - 1.0).abs();
    assert!(rel < 0.15, "period {} vs 2N t_p {want}", ring.ro_period.unwrap());
}

#[test]
fn series_parallel_asymmetry() {
    let s = setup(Flavor::Nsfet);
    let stim = Stimulus::default();
    let sens = |kind| {
        let (_, m0) = run_cell(kind, 20e-15, &s, 0, &stim, dt(), false).unwrap();
        let (_, m1) = run_cell(kind, 20e-15, &s, 1, &stim, dt(), false).unwrap();
        let d = m0.delta_pct(&m1);
        (d.t_r.unwrap(), d.t_f.unwrap())
    };
    let (nand_r, nand_f) = sens(CellKind::Nand2);
    assert!(nand_r > nand_f, "NAND rise {nand_r}% fall {nand_f}%");
    let (nor_r, nor_f) = sens(CellKind::Nor2);
    assert!(nor_f > nor_r, "NOR rise {nor_r}% fall {nor_f}%");
}

#[test]
fn load_sweep_rises_monotonically() {
    let spec = SweepSpec { cells: vec![CellKind::Inv], loads_fF: vec![2.0, 5.0, 10.0, 20.0], flavors: vec![Flavor::Nsfet], ..Default::default() };
    let inputs = ScenarioInputs { flavors: BTreeMap::from([(Flavor::Nsfet, setup(Flavor::Nsfet))]) };
    let rows = scenario_run(&spec, &inputs).unwrap();
    assert_eq!(rows.len(), 8);
    let she: Vec<&ReportRow> = rows.iter().filter(|r| r.shmod == 1).collect();
    for w in she.windows(2) {
        assert!(w[1].dT_n_K > w[0].dT_n_K && w[1].dT_p_K > w[0].dT_p_K);
        assert!(w[1].delta_pct.unwrap() > w[0].delta_pct.unwrap());
    }
    assert!(rows.iter().filter(|r| r.shmod == 0).all(|r| r.delta_pct.is_none() && r.dT_n_K == 0.0));
    let table = ReportRow::table(&rows);
    assert_eq!(table.header, REPORT_HEADER.map(String::from));
}

#[test]
fn empty_sweep_gives_empty_table() {
    let rows = scenario_run(&SweepSpec::default(), &ScenarioInputs::default()).unwrap();
    assert!(rows.is_empty());
    assert_eq!(ReportRow::table(&rows).rows.len(), 0);
}

#[test]
fn sweep_needs_models_for_each_flavor() {
    let spec = SweepSpec { cells: vec![CellKind::Inv], loads_fF: vec![2.0], flavors: vec![Flavor::Cfet], ..Default::default() };
    let err = scenario_run(&spec, &ScenarioInputs::default()).unwrap_err();
    assert!(err.to_string().contains("cfet"));
}
