use proptest::prelude::*;
use thermonet::fosterfit::{foster_eval, FosterNetwork};
use thermonet::heatsolve::ThermalStepResponse;
use thermonet::nid::{bayes_deconvolve, bayes_deconvolve_traced, detect_order, log_derivative, DeconvConfig};
use thermonet::Device;

fn sampled(net: &FosterNetwork, t0: f64, t1: f64) -> ThermalStepResponse {
    let n = ((t1 / t0).log10() * 10.0).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| t0 * 10f64.powf(k as f64 / 10.0)).collect();
    ThermalStepResponse { zth: foster_eval(net, &times), times, heater: Device::N, monitor: Device::N, power: 1.0 }
}

fn check_round_trip(pairs: &[(f64, f64)]) {
    let net = FosterNetwork::from_r_tau(pairs).unwrap();
    let tmin = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let tmax = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let resp = sampled(&net, tmin * 1e-3, tmax * 1e3);
    let cfg = DeconvConfig::default();
    let spec = bayes_deconvolve(&log_derivative(&resp, &cfg).unwrap(), &cfg).unwrap();
    let rep = detect_order(&spec, &cfg);
    assert_eq!(rep.order, pairs.len(), "{pairs:?} -> {:?}", rep.peaks);
    for (p, s) in rep.peaks.iter().zip(net.stages()) {
        assert!((p.zeta - s.tau().ln()).abs() <= 0.25, "peak {} vs {}", p.zeta, s.tau().ln());
    }
    let mass = spec.integral();
    assert!((mass / net.total_resistance() - 1.0).abs() < 0.02, "mass {mass}");
    assert!(spec.density.iter().all(|&d| d >= 0.0));
}

#[test]
fn round_trip_one_stage() {
    check_round_trip(&[(2.4e6, 3e-9)]);
}

#[test]
fn round_trip_two_stages() {
    check_round_trip(&[(1e6, 1e-9), (1.4e6, 1e-7)]);
}

#[test]
fn round_trip_three_stages() {
    check_round_trip(&[(0.5, 1e-10), (1.0, 1e-8), (0.7, 1e-6)]);
}

#[test]
fn residual_never_increases() {
    let net = FosterNetwork::from_r_tau(&[(1.0, 1e-9), (0.6, 1e-7), (1.5, 1e-5)]).unwrap();
    let resp = sampled(&net, 1e-12, 1e-2);
    let cfg = DeconvConfig::default();
    let trace = bayes_deconvolve_traced(&log_derivative(&resp, &cfg).unwrap(), &cfg).unwrap();
    assert_eq!(trace.residuals.len(), cfg.iterations);
    for w in trace.residuals.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_separated_networks_round_trip(
        n in 1usize..=3,
        start in -22.0f64..-14.0,
        gaps in prop::collection::vec(2.0f64..3.0, 2),
        rs in prop::collection::vec(0.3f64..3.0, 3),
    ) {
        let mut lt = start;
        let mut pairs = Vec::new();
        for i in 0..n {
            pairs.push((rs[i], lt.exp()));
            if i + 1 < n {
                lt += gaps[i] * std::f64::consts::LN_10;
            }
        }
        check_round_trip(&pairs);
    }

    #[test]
    fn spectrum_is_non_negative_and_conserves_mass(r in 0.1f64..10.0, lt in -20.0f64..-12.0) {
        let net = FosterNetwork::from_r_tau(&[(r, lt.exp())]).unwrap();
        let resp = sampled(&net, lt.exp() * 1e-3, lt.exp() * 1e3);
        let cfg = DeconvConfig { iterations: 200, ..Default::default() };
        let spec = bayes_deconvolve(&log_derivative(&resp, &cfg).unwrap(), &cfg).unwrap();
        prop_assert!(spec.density.iter().all(|&d| d >= 0.0));
        prop_assert!((spec.integral() / r - 1.0).abs() < 0.02);
    }
}
