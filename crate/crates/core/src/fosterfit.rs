//! Foster RC ladders and their genetic-algorithm fit to step responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::heatsolve::ThermalStepResponse;
use crate::optim::{nelder_mead, SimplexOptions};
use crate::{Error, Result};

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FosterStage {
    /// K/W.
    pub r: f64,
    /// J/K.
    pub c: f64,
}

impl FosterStage {
    pub fn from_r_tau(r: f64, tau: f64) -> Self {
        FosterStage { r, c: tau / r }
    }

    pub fn tau(&self) -> f64 {
        self.r * self.c
    }

    /// Step response of this stage to one watt.
    pub fn step(&self, t: f64) -> f64 {
        self.r * -(-t / self.tau()).exp_m1()
    }
}

/// Parallel-summed RC stages, sorted by ascending time constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FosterStage>", into = "Vec<FosterStage>")]
pub struct FosterNetwork {
    stages: Vec<FosterStage>,
}

impl TryFrom<Vec<FosterStage>> for FosterNetwork {
    type Error = Error;
    fn try_from(v: Vec<FosterStage>) -> Result<Self> {
        FosterNetwork::new(v)
    }
}

impl From<FosterNetwork> for Vec<FosterStage> {
    fn from(n: FosterNetwork) -> Self {
        n.stages
    }
}

impl FosterNetwork {
    pub fn new(mut stages: Vec<FosterStage>) -> Result<Self> {
        if let Some(s) = stages.iter().find(|s| !(s.r > 0.0 && s.c > 0.0 && s.r.is_finite() && s.c.is_finite())) {
            return Err(Error::Invariant(format!("Foster stage needs r > 0 and c > 0, got r={} c={}", s.r, s.c)));
        }
        stages.sort_by(|a, b| a.tau().total_cmp(&b.tau()));
        Ok(FosterNetwork { stages })
    }

    pub fn from_r_tau(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(r, tau)| FosterStage::from_r_tau(r, tau)).collect())
    }

    pub fn stages(&self) -> &[FosterStage] {
        &self.stages
    }

    pub fn order(&self) -> usize {
        self.stages.len()
    }

    pub fn total_resistance(&self) -> f64 {
        self.stages.iter().map(|s| s.r).sum()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.stages.iter().map(|s| s.step(t)).sum()
    }
}

/// `Zth(t) = sum r_i (1 - exp(-t / tau_i))` at each time.
pub fn foster_eval(net: &FosterNetwork, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| net.eval(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub blend_alpha: f64,
    /// Mutation standard deviation as a fraction of each gene's range.
    pub mutation_sigma_frac: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub elitism: usize,
    pub seed: u64,
    /// Stop after this many generations without improvement.
    pub stall_generations: usize,
    /// Simplex evaluations spent polishing the GA winner.
    pub refine_evals: usize,
    /// Relative errors are taken against `max(target, relative_floor * Zth(t_end))`.
    pub relative_floor: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 100,
            generations: 500,
            tournament_size: 3,
            blend_alpha: 0.5,
            mutation_sigma_frac: 0.05,
            mutation_rate: 0.2,
            elitism: 2,
            seed: 0,
            stall_generations: 50,
            refine_evals: 6000,
            relative_floor: 1e-3,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 10 {
            return Err(Error::Config("GA population must be at least 10".into()));
        }
        if self.elitism >= self.population {
            return Err(Error::Config("GA elitism must be smaller than the population".into()));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population {
            return Err(Error::Config("GA tournament size must lie in 1..=population".into()));
        }
        if !(self.relative_floor > 0.0 && self.relative_floor <= 1.0) {
            return Err(Error::Config("relative_floor must lie in (0, 1]".into()));
        }
        if !(self.blend_alpha >= 0.0 && self.mutation_sigma_frac >= 0.0 && (0.0..=1.0).contains(&self.mutation_rate)) {
            return Err(Error::Config("GA blend/mutation parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub network: FosterNetwork,
    /// RMS relative error against the target samples.
    pub rmse: f64,
    /// Best fitness at the end of each generation.
    pub history: Vec<f64>,
    /// RMSE after the GA alone, before simplex refinement.
    pub ga_rmse: f64,
}

/// JSON form of a fit: `{order, stages:[{r_K_per_W, c_J_per_K, tau_s}], rmse}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub order: usize,
    pub stages: Vec<StageReport>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StageReport {
    pub r_K_per_W: f64,
    pub c_J_per_K: f64,
    pub tau_s: f64,
}

impl FitReport {
    pub fn new(net: &FosterNetwork, rmse: f64) -> Self {
        FitReport {
            order: net.order(),
            stages: net.stages().iter().map(|s| StageReport { r_K_per_W: s.r, c_J_per_K: s.c, tau_s: s.tau() }).collect(),
            rmse,
        }
    }

    pub fn network(&self) -> Result<FosterNetwork> {
        FosterNetwork::new(self.stages.iter().map(|s| FosterStage { r: s.r_K_per_W, c: s.c_J_per_K }).collect())
    }
}

/// Relative-error fitness. The denominator is floored at a fraction of the
/// final value so near-zero early samples cannot dominate; a floor of one
/// turns it into error normalised by the steady value.
struct Objective<'a> {
    times: &'a [f64],
    target: &'a [f64],
    floor: f64,
}

impl Objective<'_> {
    fn new<'a>(times: &'a [f64], target: &'a [f64], relative_floor: f64) -> Objective<'a> {
        let rss = target.iter().copied().fold(0.0, f64::max);
        Objective { times, target, floor: relative_floor * rss }
    }

    fn rmse_stages(&self, stages: &[FosterStage]) -> f64 {
        let mut sq = 0.0;
        for (&t, &y) in self.times.iter().zip(self.target) {
            let m: f64 = stages.iter().map(|s| s.step(t)).sum();
            let e = (m - y) / y.max(self.floor);
            sq += e * e;
        }
        (sq / self.times.len() as f64).sqrt()
    }

    /// Genes are `[ln r_1, ln tau_1, ln r_2, ln tau_2, ...]`.
    fn rmse_genes(&self, genes: &[f64]) -> f64 {
        let stages: Vec<FosterStage> = genes.chunks_exact(2).map(|g| FosterStage::from_r_tau(g[0].exp(), g[1].exp())).collect();
        self.rmse_stages(&stages)
    }
}

/// RMS relative error of `net` against `target`, with denominators floored at
/// `relative_floor` times the target's final value.
pub fn fit_rmse(net: &FosterNetwork, target: &ThermalStepResponse, relative_floor: f64) -> f64 {
    Objective::new(&target.times, &target.zth, relative_floor).rmse_stages(net.stages())
}

fn check_target(target: &ThermalStepResponse, order: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Config(format!("Foster order must be 1..={MAX_ORDER}, got {order}")));
    }
    target.validate()?;
    if target.decades() < 2.0 {
        return Err(Error::Config(format!("target spans {:.2} decades; at least 2 are needed for a Foster fit", target.decades())));
    }
    if target.final_value() <= 0.0 {
        return Err(Error::Config("target response is identically zero".into()));
    }
    Ok(())
}

/// Sorts stage gene pairs by time constant so equivalent networks share one encoding.
fn canonicalize(genes: &mut [f64]) {
    let mut pairs: Vec<[f64; 2]> = genes.chunks_exact(2).map(|g| [g[0], g[1]]).collect();
    pairs.sort_by(|a, b| a[1].total_cmp(&b[1]));
    for (g, p) in genes.chunks_exact_mut(2).zip(pairs) {
        g.copy_from_slice(&p);
    }
}

/// Fits an `order`-stage Foster network to `target`.
pub fn ga_fit(target: &ThermalStepResponse, order: usize, cfg: &GaConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_target(target, order)?;
    let obj = Objective::new(&target.times, &target.zth, cfg.relative_floor);
    let rss = target.final_value();
    let ngenes = 2 * order;
    let mut lo = Vec::with_capacity(ngenes);
    let mut hi = Vec::with_capacity(ngenes);
    for _ in 0..order {
        lo.extend([(1e-3 * rss).ln(), target.times[0].ln()]);
        hi.extend([(2.0 * rss).ln(), target.times[target.times.len() - 1].ln()]);
    }
    let range: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut pop: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| {
            let mut g: Vec<f64> = (0..ngenes).map(|k| rng.random_range(lo[k]..=hi[k])).collect();
            canonicalize(&mut g);
            g
        })
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|g| obj.rmse_genes(g)).collect();

    let mut history = Vec::with_capacity(cfg.generations);
    let mut best_seen = f64::INFINITY;
    let mut stall = 0;
    for _ in 0..cfg.generations {
        let mut rank: Vec<usize> = (0..pop.len()).collect();
        rank.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]));
        let best = fit[rank[0]];
        history.push(best);
        if best < best_seen * (1.0 - 1e-9) {
            best_seen = best;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.stall_generations {
                break;
            }
        }

        let mut next: Vec<Vec<f64>> = rank[..cfg.elitism].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = rank[..cfg.elitism].iter().map(|&i| fit[i]).collect();
        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            (0..cfg.tournament_size).map(|_| rng.random_range(0..pop.len())).min_by(|&a, &b| fit[a].total_cmp(&fit[b])).expect("tournament size >= 1")
        };
        while next.len() < cfg.population {
            let pa = tournament(&mut rng);
            let pb = tournament(&mut rng);
            let mut child: Vec<f64> = (0..ngenes)
                .map(|k| {
                    let (a, b) = (pop[pa][k], pop[pb][k]);
                    let (mn, mx) = (a.min(b), a.max(b));
                    let d = cfg.blend_alpha * (mx - mn);
                    let v = if mx - mn + 2.0 * d > 0.0 { rng.random_range(mn - d..=mx + d) } else { mn };
                    v.clamp(lo[k], hi[k])
                })
                .collect();
            for k in 0..ngenes {
                if rng.random::<f64>() < cfg.mutation_rate {
                    let z: f64 = unit.sample(&mut rng);
                    child[k] = (child[k] + z * cfg.mutation_sigma_frac * range[k]).clamp(lo[k], hi[k]);
                }
            }
            canonicalize(&mut child);
            next_fit.push(obj.rmse_genes(&child));
            next.push(child);
        }
        pop = next;
        fit = next_fit;
    }
    let ibest = (0..pop.len()).min_by(|&a, &b| fit[a].total_cmp(&fit[b])).expect("non-empty population");
    let ga_rmse = fit[ibest];

    // Simplex polish; out-of-bounds genes are penalised rather than clamped
    // so the simplex geometry stays intact.
    let penalised = |g: &[f64]| {
        if g.iter().zip(lo.iter().zip(&hi)).any(|(v, (l, h))| *v < l - 1.0 || *v > h + 1.0) {
            f64::INFINITY
        } else {
            obj.rmse_genes(g)
        }
    };
    let mut genes = pop[ibest].clone();
    let mut rmse = ga_rmse;
    let opts = SimplexOptions { max_evals: cfg.refine_evals / 3 + 1, ..Default::default() };
    for round in 0..3 {
        let step: Vec<f64> = range.iter().map(|r| r * 0.02 / (1 + round) as f64).collect();
        let res = nelder_mead(penalised, &genes, &step, &opts);
        if res.f < rmse {
            rmse = res.f;
            genes = res.x;
        }
    }
    canonicalize(&mut genes);
    let network = FosterNetwork::new(genes.chunks_exact(2).map(|g| FosterStage::from_r_tau(g[0].exp(), g[1].exp())).collect())?;
    let rmse = fit_rmse(&network, target, cfg.relative_floor);
    Ok(FitResult { network, rmse, history, ga_rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Device;

    fn response(net: &FosterNetwork, t0: f64, t1: f64, per_decade: usize) -> ThermalStepResponse {
        let n = ((t1 / t0).log10() * per_decade as f64).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| t0 * 10f64.powf(k as f64 / per_decade as f64)).collect();
        ThermalStepResponse { zth: foster_eval(net, &times), times, heater: Device::N, monitor: Device::N, power: 1.0 }
    }

    #[test]
    fn single_stage_at_tau() {
        let net = FosterNetwork::from_r_tau(&[(2e6, 1e-7)]).unwrap();
        let z = foster_eval(&net, &[1e-7])[0];
        assert!((z - 2e6 * (1.0 - (-1f64).exp())).abs() < 1e-3);
        assert!((z - 1.2642e6).abs() < 100.0);
    }

    #[test]
    fn limits() {
        let net = FosterNetwork::from_r_tau(&[(1.0, 1e-9), (3.0, 1e-6)]).unwrap();
        assert!(net.eval(1e-18) < 1e-8);
        let late = net.eval(10.0 * 1e-6);
        assert!((late - 4.0).abs() / 4.0 < 5e-5);
    }

    #[test]
    fn stages_sorted_and_validated() {
        let net = FosterNetwork::from_r_tau(&[(1.0, 1e-5), (2.0, 1e-9), (3.0, 1e-7)]).unwrap();
        let taus: Vec<f64> = net.stages().iter().map(|s| s.tau()).collect();
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
        assert!(FosterNetwork::new(vec![FosterStage { r: -1.0, c: 1.0 }]).is_err());
        assert!(FosterNetwork::new(vec![FosterStage { r: 1.0, c: 0.0 }]).is_err());
    }

    #[test]
    fn json_round_trip_rejects_invalid() {
        let net = FosterNetwork::from_r_tau(&[(1.0, 1e-5)]).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert_eq!(serde_json::from_str::<FosterNetwork>(&s).unwrap(), net);
        assert!(serde_json::from_str::<FosterNetwork>(r#"[{"r":-1.0,"c":1.0}]"#).is_err());
        let rep = FitReport::new(&net, 0.01);
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["order"], 1);
        assert!(v["stages"][0]["tau_s"].as_f64().unwrap() > 0.0);
        assert_eq!(rep.network().unwrap(), net);
    }

    #[test]
    fn recovers_two_stage_network() {
        let truth = FosterNetwork::from_r_tau(&[(1e6, 1e-9), (1.4e6, 1e-6)]).unwrap();
        let target = response(&truth, 1e-12, 1e-4, 10);
        let res = ga_fit(&target, 2, &GaConfig { seed: 7, ..Default::default() }).unwrap();
        assert!(res.rmse < 0.01, "rmse {}", res.rmse);
        for (a, b) in res.network.stages().iter().zip(truth.stages()) {
            assert!((a.r / b.r - 1.0).abs() < 0.05, "r {} vs {}", a.r, b.r);
            assert!((a.tau() / b.tau() - 1.0).abs() < 0.05, "tau {} vs {}", a.tau(), b.tau());
        }
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let truth = FosterNetwork::from_r_tau(&[(1.0, 1e-8), (0.5, 1e-6)]).unwrap();
        let target = response(&truth, 1e-11, 1e-4, 10);
        let cfg = GaConfig { seed: 3, generations: 60, ..Default::default() };
        let a = ga_fit(&target, 2, &cfg).unwrap();
        let b = ga_fit(&target, 2, &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn best_fitness_never_worsens() {
        let truth = FosterNetwork::from_r_tau(&[(1.0, 1e-9), (2.0, 1e-7), (1.0, 1e-5)]).unwrap();
        let target = response(&truth, 1e-12, 1e-3, 10);
        let res = ga_fit(&target, 3, &GaConfig { seed: 1, ..Default::default() }).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.rmse <= res.ga_rmse);
    }

    #[test]
    fn own_evaluation_is_a_fixed_point() {
        let net = FosterNetwork::from_r_tau(&[(2.0, 3e-9), (1.0, 4e-7)]).unwrap();
        let target = response(&net, 1e-12, 1e-4, 10);
        assert_eq!(fit_rmse(&net, &target, 1e-3), 0.0);
        let res = ga_fit(&target, 2, &GaConfig::default()).unwrap();
        let again = response(&res.network, 1e-12, 1e-4, 10);
        assert_eq!(fit_rmse(&res.network, &again, 1e-3), 0.0);
        assert!(res.rmse < 1e-6, "{}", res.rmse);
    }

    #[test]
    fn rejects_bad_orders_and_short_targets() {
        let net = FosterNetwork::from_r_tau(&[(1.0, 1e-7)]).unwrap();
        let target = response(&net, 1e-10, 1e-4, 10);
        assert!(ga_fit(&target, 9, &GaConfig::default()).is_err());
        assert!(ga_fit(&target, 0, &GaConfig::default()).is_err());
        let short = response(&net, 1e-8, 5e-7, 10);
        assert!(ga_fit(&short, 1, &GaConfig::default()).is_err());
        assert!(ga_fit(&target, 1, &GaConfig { population: 5, ..Default::default() }).is_err());
    }
}
