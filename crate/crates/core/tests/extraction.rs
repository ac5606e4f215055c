//! Extraction against the reference device model, which the surrogate does not contain.

use thermonet::compact::{extract_isothermal, extract_thermal, iv_rmse, reference_curves, CompactModelParams, ReferenceDevice};
use thermonet::optim::{nelder_mead, SimplexOptions};
use thermonet::{Device, Flavor};

const RTH: [f64; 2] = [2.39e6, 2.76e6];

#[test]
fn isothermal_fit_reaches_the_global_minimum() {
    for f in Flavor::BOTH {
        for d in Device::BOTH {
            let dev = ReferenceDevice::for_flavor(f, d);
            let curves = reference_curves(&dev, None).unwrap();
            let fit = extract_isothermal(&curves, &CompactModelParams::base(d)).unwrap();
            assert!(fit.rmse < iv_rmse(&fit.initial, &curves, 0.0).unwrap());
            let base = fit.params.clone();
            let obj = |x: &[f64]| {
                if x[1] < 1.0 || x[4] < 0.0 {
                    return f64::INFINITY;
                }
                let p = CompactModelParams { vth0: x[0], n_ss: x[1], k_g: x[2].exp(), dibl: x[3], lambda: x[4], ..base.clone() };
                iv_rmse(&p, &curves, 0.0).unwrap()
            };
            let opts = SimplexOptions { max_evals: 20000, ..Default::default() };
            for k in 0..4 {
                let x0 = [0.1 + 0.05 * k as f64, 1.0 + 0.1 * k as f64, (base.k_g * (0.7 + 0.2 * k as f64)).ln(), 0.0, 0.02 * k as f64];
                let r = nelder_mead(obj, &x0, &[0.05, 0.1, 0.3, 0.02, 0.05], &opts);
                assert!(r.f >= fit.rmse * (1.0 - 1e-3), "{f} {d}: restart found {} below {}", r.f, fit.rmse);
            }
        }
    }
}

#[test]
fn thermal_fit_improves_on_start() {
    for f in Flavor::BOTH {
        let d = Device::N;
        let dev = ReferenceDevice::for_flavor(f, d);
        let rth = RTH[f as usize];
        let iso = extract_isothermal(&reference_curves(&dev, None).unwrap(), &CompactModelParams::base(d)).unwrap();
        let she = reference_curves(&dev, Some(rth)).unwrap();
        let start = CompactModelParams { alpha_vt: 0.0, beta_mu: 1.0, ..iso.params.clone() };
        let fit = extract_thermal(&she, &start, rth).unwrap();
        assert!(fit.rmse < iv_rmse(&start, &she, rth).unwrap());
        assert!(fit.params.beta_mu > 0.0);
    }
}
