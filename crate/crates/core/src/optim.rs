//! Downhill simplex minimisation.

/// Options for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values drops below this.
    pub f_tol: f64,
    /// Stop when every vertex lies within this distance of the best one (per coordinate).
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_evals: 20_000, f_tol: 1e-14, x_tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Minimises `f` from `x0` with an initial simplex of per-coordinate `step`.
///
/// Coefficients follow the dimension-adaptive choice of Gao and Han, which
/// behaves better than the textbook constants beyond a handful of variables.
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return SimplexResult { x: Vec::new(), f: v, evals };
    }
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();

    let mut order: Vec<usize> = (0..=n).collect();
    while evals < opts.max_evals {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        let spread_f = (vals[worst] - vals[best]).abs();
        let spread_x = pts.iter().flat_map(|p| p.iter().zip(&pts[best]).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if spread_f <= opts.f_tol && spread_x <= opts.x_tol {
            break;
        }
        if spread_x <= opts.x_tol * 1e-3 {
            break;
        }

        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&pts[i]) {
                *c += v / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[worst]).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[best] {
            let xe = along(beta);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[worst] {
            let xc = along(gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < vals[worst].min(fr) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = pts[best].clone();
        for &i in &order[1..] {
            for (p, a) in pts[i].iter_mut().zip(&anchor) {
                *p = a + delta * (*p - a);
            }
            vals[i] = eval(&pts[i], &mut evals);
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("non-empty simplex");
    SimplexResult { x: pts[best].clone(), f: vals[best], evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + (x[2] - 0.5).powi(2),
            &[0.0, 0.0, 0.0],
            &[0.5; 3],
            &SimplexOptions::default(),
        );
        assert!((r.x[0] - 1.0).abs() < 1e-5);
        assert!((r.x[1] + 2.0).abs() < 1e-5);
        assert!((r.x[2] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(|x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2), &[-1.2, 1.0], &[0.1, 0.1], &SimplexOptions::default());
        assert!(r.f < 1e-10, "{}", r.f);
    }

    #[test]
    fn nan_regions_are_avoided() {
        let r = nelder_mead(|x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) }, &[0.5], &[0.2], &SimplexOptions::default());
        assert!((r.x[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn respects_eval_budget() {
        let mut count = 0;
        let opts = SimplexOptions { max_evals: 50, ..Default::default() };
        nelder_mead(
            |x| {
                count += 1;
                x.iter().map(|v| v.sin()).sum()
            },
            &[0.3; 4],
            &[1.0; 4],
            &opts,
        );
        assert!(count <= 50 + 5);
    }
}
