//! End-to-end runs of the `thermonet` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thermonet::csvio::Table;
use thermonet::fosterfit::FosterNetwork;
use thermonet::heatsolve::ThermalStepResponse;
use thermonet::Device;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn thermonet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermonet")).arg("--out").arg(out).args(args).env_remove("THERMONET_OUT").output().expect("spawn thermonet")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the step response of `net` as `zth_<h>_<m>.csv` in `dir`.
fn write_zth(dir: &Path, net: &FosterNetwork, heater: Device, monitor: Device) -> PathBuf {
    let times: Vec<f64> = (0..=80).map(|k| 1e-12 * 10f64.powf(k as f64 / 10.0)).collect();
    let zth = times.iter().map(|&t| net.eval(t)).collect();
    let resp = ThermalStepResponse { times, zth, heater, monitor, power: 1e-5 };
    let path = dir.join(resp.file_name());
    std::fs::write(&path, resp.to_table().to_string_pretty().unwrap()).unwrap();
    path
}

fn pair_curves(dir: &Path, cross_scale: f64) -> [PathBuf; 4] {
    let own = FosterNetwork::from_r_tau(&[(1e6, 1e-10), (2e6, 1e-8)]).unwrap();
    let cross = FosterNetwork::from_r_tau(&[(0.5e6 * cross_scale, 3e-9)]).unwrap();
    [
        write_zth(dir, &own, Device::N, Device::N),
        write_zth(dir, &cross, Device::N, Device::P),
        write_zth(dir, &cross, Device::P, Device::N),
        write_zth(dir, &own, Device::P, Device::P),
    ]
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn smoke_project_writes_metrics_with_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = thermonet(&["--svg", "run", s(&configs().join("project_smoke.json"))], &out);
    ok(&o);
    let metrics = Table::read(&out.join("metrics.csv")).unwrap();
    assert!(!metrics.rows.is_empty());
    assert_eq!(metrics.comment_value("seed"), Some("7"));
    assert!(metrics.comment_value("config_hash").is_some_and(|h| h.len() == 64));
    let compare = Table::read(&out.join("compare.csv")).unwrap();
    assert!(compare.header.contains(&"nsfet_delta_pct".to_string()));
    for f in ["compare.svg", "nsfet/zth/zth.svg", "nsfet/nid/spectra.svg", "manifest.json", "nsfet/pair_model.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let steady: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("nsfet/zth/steady.json")).unwrap()).unwrap();
    assert_eq!(steady["provenance"]["seed"], 7);
    assert!(steady["crosstalk"]["rho"].as_f64().unwrap() > 0.0);
}

#[test]
fn fit_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let [nn, ..] = pair_curves(tmp.path(), 1.0);
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        ok(&thermonet(&["fit", "foster", s(&nn), "--order", "2", "--seed", seed], &out));
        std::fs::read(out.join("foster_zth_n_n.json")).unwrap()
    };
    let a = run("3", "a");
    assert_eq!(a, run("3", "b"));
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["fit"]["order"], 2);
    assert!(v["fit"]["rmse"].as_f64().unwrap() < 0.01);
}

#[test]
fn assemble_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let c = pair_curves(tmp.path(), 1.0);
    let run = |dir: &str| {
        let out = tmp.path().join(dir);
        ok(&thermonet(&["xnet", "assemble", s(&c[0]), s(&c[1]), s(&c[2]), s(&c[3]), "--seed", "11"], &out));
        (std::fs::read(out.join("pair_model.json")).unwrap(), std::fs::read(out.join("crosstalk.json")).unwrap())
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let model: serde_json::Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(model["fits"][0]["nid_order"], 2);
    assert_eq!(model["ladders"]["np"].as_array().unwrap().len(), 1);

    let rho_out = tmp.path().join("rho");
    ok(&thermonet(&["xnet", "rho", s(&tmp.path().join("a/pair_model.json")), "--p-n", "1e-5", "--p-p", "1e-5"], &rho_out));
    let rho: serde_json::Value = serde_json::from_slice(&std::fs::read(rho_out.join("crosstalk.json")).unwrap()).unwrap();
    // Equal powers and symmetric ladders: rho is the cross-to-self resistance ratio.
    assert!((rho["rho"].as_f64().unwrap() - 0.5 / 3.0).abs() < 0.01);
}

#[test]
fn nid_spectrum_finds_two_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let [nn, ..] = pair_curves(tmp.path(), 1.0);
    let out = tmp.path().join("o");
    ok(&thermonet(&["--svg", "nid", "spectrum", s(&nn)], &out));
    let order: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("order_zth_n_n.json")).unwrap()).unwrap();
    assert_eq!(order["order"], 2);
    assert!(Table::read(&out.join("spectrum_zth_n_n.csv")).unwrap().rows.len() > 10);
}

#[test]
fn missing_config_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = thermonet(&["run", s(&tmp.path().join("absent.json"))], &out);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config message=\""), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_reference_inside_project_fails_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("project_smoke.json")).unwrap().replace("sweep_smoke.json", "nowhere.json");
    std::fs::write(tmp.path().join("p.json"), text.replace("geometry_nsfet_coarse.json", s(&configs().join("geometry_nsfet_coarse.json")))).unwrap();
    let out = tmp.path().join("o");
    let start = std::time::Instant::now();
    let o = thermonet(&["run", s(&tmp.path().join("p.json"))], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.json"));
    assert!(start.elapsed().as_secs_f64() < 2.0);
    assert!(!out.exists());
}

#[test]
fn unknown_project_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("p.json"), r#"{"seed":1,"flavors":["nsfet"],"geometry":{},"scenario":"s.json","typo":1}"#).unwrap();
    let o = thermonet(&["run", s(&tmp.path().join("p.json"))], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("typo"));
}

#[test]
fn numerical_failure_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("solver.json"), r#"{"max_linear_iters": 1, "linear_tol": 1e-14}"#).unwrap();
    let out = tmp.path().join("o");
    let o = thermonet(&["heat", "respond", s(&configs().join("geometry_nsfet_coarse.json")), "--solver", s(&tmp.path().join("solver.json"))], &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=numerical"));
    assert!(!out.exists());
}

#[test]
fn invariant_failure_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    // Cross ladders larger than the self ladders.
    let c = pair_curves(tmp.path(), 10.0);
    let o = thermonet(&["xnet", "assemble", s(&c[0]), s(&c[1]), s(&c[2]), s(&c[3]), "--orders", "2,1,1,2"], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=invariant"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(thermonet(&["fit", "foster"], tmp.path()).status.code(), Some(2));
    assert_eq!(thermonet(&["bogus"], tmp.path()).status.code(), Some(2));
}

#[test]
fn environment_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let env_out = tmp.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_thermonet"))
        .args(["extract", "reference", "--flavor", "cfet", "--device", "p"])
        .env("THERMONET_OUT", &env_out)
        .output()
        .unwrap();
    ok(&o);
    assert!(env_out.join("iv_p_iso.csv").is_file());
}

#[test]
fn extraction_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&thermonet(&["extract", "reference", "--flavor", "nsfet", "--device", "n"], &out));
    ok(&thermonet(&["extract", "reference", "--flavor", "nsfet", "--device", "n", "--rth", "2.4e6"], &out));
    ok(&thermonet(&["extract", "iso", s(&out.join("iv_n_iso.csv"))], &out));
    ok(&thermonet(&["extract", "she", s(&out.join("iv_n_she.csv")), "--iso", s(&out.join("card_n_iso.json")), "--rth", "2.4e6"], &out));
    let card: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("card_n.json")).unwrap()).unwrap();
    assert_eq!(card["shmod"], 1);
    assert_eq!(card["polarity"], "n");
    assert!(card["fit_rmse"].as_f64().unwrap() < 0.1);
    // A PFET card cannot seed an NFET fit.
    ok(&thermonet(&["extract", "reference", "--flavor", "nsfet", "--device", "p"], &out));
    ok(&thermonet(&["extract", "iso", s(&out.join("iv_p_iso.csv"))], &out));
    let o = thermonet(&["extract", "iso", s(&out.join("iv_n_iso.csv")), "--start", s(&out.join("card_p_iso.json"))], &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cell_simulation_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&thermonet(&["sim", "cell", s(&configs().join("cell_inv.json"))], &out));
    let wave = Table::read(&out.join("waveforms.csv")).unwrap();
    assert!(wave.header.contains(&"out".to_string()));
    let m = Table::read(&out.join("metrics.csv")).unwrap();
    assert_eq!(m.rows.len(), 1);
    assert!(m.column("t_p_s").unwrap()[0] > 0.0);

    let spec = r#"{"cell":"INV","c_load_fF":2,"flavor":"nsfet","shmod":1}"#;
    std::fs::write(tmp.path().join("she.json"), spec).unwrap();
    let o = thermonet(&["sim", "cell", s(&tmp.path().join("she.json"))], &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("thermal"));

    let cmp = tmp.path().join("c");
    ok(&thermonet(&["report", "compare", s(&out.join("metrics.csv"))], &cmp));
    let c = Table::read(&cmp.join("compare.csv")).unwrap();
    assert_eq!(c.rows.len(), 3);
}
