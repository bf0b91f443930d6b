//! Independent reference implementations and random instance generators
//! shared by the oracle, property and acceptance tests.

#![allow(dead_code)]

use district_voi::designopt::{SystemDesign, SystemParams, Tariff};
use district_voi::scenario::Scenario;
use district_voi::simulator::SimulationResult;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DAYS: f64 = 365.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario(loads: Vec<Vec<f64>>, solar: Vec<f64>, probability: f64) -> Scenario {
    Scenario {
        loads,
        solar,
        probability,
        timestep_hours: 1.0,
        provenance: vec![],
        solar_year: "s".into(),
    }
}

// ---------------------------------------------------------------------------
// Battery dynamics

pub const DYNAMICS_TOL: f64 = 1e-6;

/// Worst violations found in one simulated trajectory.
#[derive(Debug, Default, Clone, Copy)]
pub struct DynamicsReport {
    pub conservation: f64,
    pub round_trip: f64,
    pub soc_bounds: f64,
    pub power_bounds: f64,
}

impl DynamicsReport {
    pub fn worst(&self) -> f64 {
        self.conservation
            .max(self.round_trip)
            .max(self.soc_bounds)
            .max(self.power_bounds)
    }

    pub fn merge(&mut self, o: &DynamicsReport) {
        self.conservation = self.conservation.max(o.conservation);
        self.round_trip = self.round_trip.max(o.round_trip);
        self.soc_bounds = self.soc_bounds.max(o.soc_bounds);
        self.power_bounds = self.power_bounds.max(o.power_bounds);
    }

    pub fn ok(&self) -> bool {
        self.worst() <= DYNAMICS_TOL
    }
}

/// Recheck a trajectory from scratch. The round-trip identity
/// `Σ discharge = η·Σ charge − √η·(SoC_T − SoC_0)` is the energy delivered
/// back for energy stored, corrected for what is still in the battery.
pub fn check_dynamics(sim: &SimulationResult, design: &SystemDesign, params: &SystemParams) -> DynamicsReport {
    let eta = params.round_trip_efficiency;
    let r = eta.sqrt();
    let d = &sim.dispatch;
    let mut rep = DynamicsReport::default();
    for i in 0..d.soc.len() {
        let cap = design.battery_kwh[i];
        let pmax = params.discharge_ratio * cap * params.timestep_hours;
        let horizon = d.charge[i].len();
        for t in 0..horizon {
            let (c, x) = (d.charge[i][t], d.discharge[i][t]);
            let res = d.soc[i][t + 1] - d.soc[i][t] - r * c + x / r;
            rep.conservation = rep.conservation.max(res.abs());
            rep.power_bounds = rep.power_bounds.max((-c).max(-x)).max(c - pmax).max(x - pmax);
        }
        for s in &d.soc[i] {
            rep.soc_bounds = rep.soc_bounds.max(-s).max(s - cap);
        }
        let charged: f64 = d.charge[i].iter().sum();
        let delivered: f64 = d.discharge[i].iter().sum();
        let left = d.soc[i][horizon] - d.soc[i][0];
        rep.round_trip = rep.round_trip.max((delivered - (eta * charged - r * left)).abs());
    }
    rep
}

// ---------------------------------------------------------------------------
// Brute-force sizing for one building and one scenario

/// A tiny single-building sizing problem.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub loads: Vec<f64>,
    pub solar: Vec<f64>,
    pub params: SystemParams,
}

impl TinyInstance {
    pub fn scenario(&self) -> Scenario {
        scenario(vec![self.loads.clone()], self.solar.clone(), 1.0)
    }
}

pub fn random_tiny_instance(rng: &mut ChaCha8Rng) -> TinyInstance {
    let horizon = rng.gen_range(2..=4);
    let loads: Vec<f64> = (0..horizon).map(|_| rng.gen_range(0.5..5.0)).collect();
    let solar: Vec<f64> = (0..horizon)
        .map(|_| {
            if rng.gen_bool(0.6) {
                rng.gen_range(0.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let tariff = Tariff {
        price: (0..horizon).map(|_| rng.gen_range(0.05..0.5)).collect(),
        carbon: (0..horizon).map(|_| rng.gen_range(0.0..0.3)).collect(),
    };
    let params = SystemParams {
        lifetime_years: 20.0,
        energy_cost_scale: rng.gen_range(30.0..400.0),
        carbon_price: rng.gen_range(0.0..1.0),
        battery_price: rng.gen_range(200.0..1500.0),
        solar_price: rng.gen_range(300.0..3000.0),
        grid_price_per_kw_day: rng.gen_range(0.01..0.5),
        excess_price_per_kw_day: rng.gen_range(0.05..1.5),
        fos_design: if rng.gen_bool(0.5) { 1.0 } else { 1.25 },
        discharge_ratio: rng.gen_range(0.25..1.0),
        round_trip_efficiency: rng.gen_range(0.8..1.0),
        initial_soc_frac: 0.0,
        tariff,
        ..Default::default()
    };
    TinyInstance { loads, solar, params }
}

/// Total lifetime cost of a single-building design whose battery follows
/// `soc[t] = fill[t] · battery` at the end of each step. Every other decision
/// follows in closed form: flows are the smallest that realise each SoC move,
/// surplus is burned by simultaneous charge and discharge only to shave export
/// peaks, and the peak flow is priced at the cheaper of contract and excess.
/// Infinite when a move breaks the power limits.
pub fn trajectory_cost(inst: &TinyInstance, battery: f64, solar: f64, fill: &[f64]) -> f64 {
    let p = &inst.params;
    let dt = p.timestep_hours;
    let eta = p.round_trip_efficiency;
    let r = eta.sqrt();
    let pmax = p.discharge_ratio * battery * dt;
    let tol = 1e-9 * (1.0 + battery);
    let per_peak_kw =
        p.lifetime_years * (p.grid_price_per_kw_day * DAYS * p.fos_design).min(p.excess_price_per_kw_day * DAYS);
    let mut soc = p.initial_soc_frac * battery;
    let (mut energy_cost, mut peak) = (0.0, 0.0f64);
    for t in 0..inst.loads.len() {
        let next = fill[t] * battery;
        let delta = next - soc;
        soc = next;
        let c0 = delta.max(0.0) / r;
        let d0 = (-delta).max(0.0) * r;
        if c0 > pmax + tol || d0 > pmax + tol {
            return f64::INFINITY;
        }
        let flow = (inst.loads[t] - solar * inst.solar[t]) * dt + c0 - d0;
        let weight = p.lifetime_years * p.energy_cost_scale * (p.tariff.price[t] + p.carbon_price * p.tariff.carbon[t]);
        energy_cost += weight * flow.max(0.0);
        let burn = (1.0 - eta) * (pmax - c0).max(0.0).min((pmax - d0).max(0.0) / eta);
        let magnitude = if flow >= 0.0 { flow } else { (-flow - burn).max(0.0) };
        peak = peak.max(magnitude / dt);
    }
    p.battery_price * battery + p.solar_price * solar + per_peak_kw * peak + energy_cost
}

/// Zooming grid search over battery, PV and the fill trajectory. Every
/// evaluated point is a feasible design, so the result bounds the optimum
/// from above.
pub fn brute_force_sizing(inst: &TinyInstance) -> f64 {
    let p = &inst.params;
    let horizon = inst.loads.len();
    let total_load: f64 = inst.loads.iter().sum();
    let max_load = inst.loads.iter().copied().fold(0.0, f64::max);
    let total_sun: f64 = inst.solar.iter().sum();
    let battery_max = 4.0 * total_load.max(max_load / p.discharge_ratio);
    let solar_max = if total_sun > 0.0 {
        4.0 * total_load / total_sun.max(0.1)
    } else {
        0.0
    };
    let dims = 2 + horizon;
    let mut hi = vec![1.0; dims];
    hi[0] = battery_max;
    hi[1] = solar_max;
    let eval = |x: &[f64]| trajectory_cost(inst, x[0], x[1], &x[2..]);

    const STEPS: i64 = 2;
    let points = (2 * STEPS + 1).pow(dims as u32);
    let mut best = (f64::INFINITY, vec![0.0; dims]);
    let mut rng = rng(11);
    // A few starts guard against the search stalling on a kink.
    for start in 0..6 {
        let mut center: Vec<f64> = if start == 0 {
            vec![0.0; dims]
        } else {
            hi.iter().map(|h| rng.gen_range(0.0..=*h)).collect()
        };
        let mut span: Vec<f64> = hi.iter().map(|h| 0.5 * h).collect();
        let mut local = (eval(&center), center.clone());
        for _ in 0..80 {
            let mut x = vec![0.0; dims];
            for code in 0..points {
                let mut c = code;
                for k in 0..dims {
                    let step = (c % (2 * STEPS + 1)) - STEPS;
                    c /= 2 * STEPS + 1;
                    x[k] = (center[k] + span[k] * step as f64 / STEPS as f64).clamp(0.0, hi[k]);
                }
                let v = eval(&x);
                if v < local.0 {
                    local = (v, x.clone());
                }
            }
            let moved = local.1 != center;
            center = local.1.clone();
            if !moved {
                for s in &mut span {
                    *s *= 0.5;
                }
            }
        }
        // Random steps with a step size adapted by the one-fifth success
        // rule slide along kinks that stall the coordinate grid.
        let mut sigma = 0.1;
        let mut x = local.1.clone();
        for _ in 0..20_000 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&hi)
                .map(|(v, h)| (v + sigma * h * rng.gen_range(-1.0..1.0)).clamp(0.0, *h))
                .collect();
            let v = eval(&trial);
            if v < local.0 {
                local = (v, trial.clone());
                x = trial;
                sigma *= 1.5;
            } else {
                sigma *= 0.9;
            }
            if sigma < 1e-9 {
                sigma = 1e-3;
            }
        }
        if local.0 < best.0 {
            best = local;
        }
    }
    best.0
}

// ---------------------------------------------------------------------------
// Posterior quadrature

/// Posterior mean and variance of `θ` on `[lo, hi]` under `log_prior` after
/// observing `z ~ N(θ, (eps·θ)²)`, by the midpoint rule on `n` cells.
pub fn quadrature_moments(lo: f64, hi: f64, z: f64, eps: f64, n: usize, log_prior: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = (hi - lo) / n as f64;
    let log_w = |theta: f64| {
        let sd = eps * theta;
        log_prior(theta) - sd.ln() - 0.5 * ((z - theta) / sd).powi(2)
    };
    let peak = (0..n)
        .map(|k| log_w(lo + (k as f64 + 0.5) * h))
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let theta = lo + (k as f64 + 0.5) * h;
        let w = (log_w(theta) - peak).exp();
        w0 += w;
        w1 += w * theta;
        w2 += w * theta * theta;
    }
    let mean = w1 / w0;
    (mean, w2 / w0 - mean * mean)
}

// ---------------------------------------------------------------------------
// Fast-Forward reference

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Probability-weighted distance from every point outside `chosen` to its
/// nearest member of `chosen`.
pub fn reduction_objective(points: &[Vec<f64>], probs: &[f64], chosen: &[usize]) -> f64 {
    (0..points.len())
        .filter(|j| !chosen.contains(j))
        .map(|j| {
            probs[j]
                * chosen
                    .iter()
                    .map(|s| dist(&points[j], &points[*s]))
                    .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Greedy forward selection, recomputing the objective from scratch for
/// every candidate. Ties go to the lower index.
pub fn greedy_reference(points: &[Vec<f64>], probs: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let n = points.len();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k {
        let mut best = (usize::MAX, f64::INFINITY);
        for u in 0..n {
            if chosen.contains(&u) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(u);
            let v = reduction_objective(points, probs, &trial);
            if v < best.1 {
                best = (u, v);
            }
        }
        chosen.push(best.0);
    }
    let mut out = vec![0.0; n];
    for j in 0..n {
        if chosen.contains(&j) {
            out[j] += probs[j];
            continue;
        }
        let mut target = (usize::MAX, f64::INFINITY);
        for s in &chosen {
            let d = dist(&points[j], &points[*s]);
            if d < target.1 || (d == target.1 && *s < target.0) {
                target = (*s, d);
            }
        }
        out[target.0] += probs[j];
    }
    (chosen, out)
}

/// Best single point by exhaustive search.
pub fn exhaustive_single(points: &[Vec<f64>], probs: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for s in 0..points.len() {
        let v = reduction_objective(points, probs, &[s]);
        if v < best.1 {
            best = (s, v);
        }
    }
    best.0
}

/// Population z-scores of each column, dropping constant columns.
pub fn zscore(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let cols: Vec<(usize, f64, f64)> = (0..dim)
        .filter_map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            (sd > 1e-12 * m.abs().max(1.0)).then_some((j, m, sd))
        })
        .collect();
    rows.iter()
        .map(|r| cols.iter().map(|(j, m, s)| (r[*j] - m) / s).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Exact value of information with grid-only designs

/// A finite problem where storage and PV are priced out, so a design is
/// just a grid contract and every quantity has a closed form.
#[derive(Debug, Clone)]
pub struct GridOnlyProblem {
    pub loads: Vec<Vec<Vec<f64>>>,
    pub prior: Vec<f64>,
    pub likelihood: Vec<Vec<f64>>,
    pub params: SystemParams,
}

#[derive(Debug, Clone, Copy)]
pub struct GridOnlyValues {
    pub prior_cost: f64,
    pub perfect_cost: f64,
    pub preposterior_cost: f64,
}

impl GridOnlyValues {
    pub fn evpi(&self) -> f64 {
        self.prior_cost - self.perfect_cost
    }
    pub fn evii(&self) -> f64 {
        self.prior_cost - self.preposterior_cost
    }
}

impl GridOnlyProblem {
    pub fn scenarios(&self) -> Vec<Scenario> {
        let horizon = self.loads[0][0].len();
        self.loads
            .iter()
            .zip(&self.prior)
            .map(|(l, p)| scenario(l.clone(), vec![0.0; horizon], *p))
            .collect()
    }

    fn energy_cost(&self, m: usize) -> f64 {
        let p = &self.params;
        let horizon = self.loads[m][0].len();
        (0..horizon)
            .map(|t| {
                let load: f64 = self.loads[m].iter().map(|l| l[t]).sum();
                p.lifetime_years
                    * p.energy_cost_scale
                    * (p.tariff.price[t] + p.carbon_price * p.tariff.carbon[t])
                    * load
            })
            .sum()
    }

    fn peak(&self, m: usize) -> f64 {
        let horizon = self.loads[m][0].len();
        (0..horizon)
            .map(|t| self.loads[m].iter().map(|l| l[t]).sum::<f64>() / self.params.timestep_hours)
            .fold(0.0, f64::max)
    }

    /// What the sizing LP minimises for contract `g` under weights `w`.
    fn planned(&self, w: &[f64], g: f64) -> f64 {
        let p = &self.params;
        let a = p.lifetime_years * p.grid_price_per_kw_day * DAYS;
        let e = p.lifetime_years * p.excess_price_per_kw_day * DAYS;
        a * g
            + (0..w.len())
                .map(|m| w[m] * (self.energy_cost(m) + e * (self.peak(m) - g / p.fos_design).max(0.0)))
                .sum::<f64>()
    }

    /// Billed cost of contract `g` in scenario `m`; excess is charged above
    /// the contract itself.
    fn billed(&self, m: usize, g: f64) -> f64 {
        let p = &self.params;
        let a = p.lifetime_years * p.grid_price_per_kw_day * DAYS;
        let e = p.lifetime_years * p.excess_price_per_kw_day * DAYS;
        a * g + self.energy_cost(m) + e * (self.peak(m) - g).max(0.0)
    }

    /// The planned objective is piecewise linear in the contract with kinks
    /// at `fos·peak_m`, so the optimum sits at zero or one of those.
    fn best_contract(&self, w: &[f64]) -> f64 {
        let fos = self.params.fos_design;
        let mut candidates = vec![0.0];
        candidates.extend((0..w.len()).filter(|m| w[*m] > 0.0).map(|m| fos * self.peak(m)));
        candidates
            .into_iter()
            .map(|g| (self.planned(w, g), g))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1
    }

    fn expected_billed(&self, w: &[f64], g: f64) -> f64 {
        (0..w.len()).map(|m| w[m] * self.billed(m, g)).sum()
    }

    pub fn values(&self) -> GridOnlyValues {
        let n = self.prior.len();
        let prior_cost = self.expected_billed(&self.prior, self.best_contract(&self.prior));
        let perfect_cost = (0..n)
            .map(|m| {
                let mut one = vec![0.0; n];
                one[m] = 1.0;
                self.prior[m] * self.billed(m, self.best_contract(&one))
            })
            .sum();
        let mut preposterior_cost = 0.0;
        for row in &self.likelihood {
            let joint: Vec<f64> = self.prior.iter().zip(row).map(|(p, l)| p * l).collect();
            let pk: f64 = joint.iter().sum();
            if pk <= 1e-12 {
                continue;
            }
            let post: Vec<f64> = joint.iter().map(|j| j / pk).collect();
            preposterior_cost += pk * self.expected_billed(&post, self.best_contract(&post));
        }
        GridOnlyValues {
            prior_cost,
            perfect_cost,
            preposterior_cost,
        }
    }
}

pub fn random_grid_only_problem(rng: &mut ChaCha8Rng) -> GridOnlyProblem {
    let n = rng.gen_range(2..=4);
    let b = rng.gen_range(1..=2);
    let horizon = rng.gen_range(2..=4);
    let loads: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            (0..b)
                .map(|_| (0..horizon).map(|_| rng.gen_range(0.5..6.0)).collect())
                .collect()
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let prior: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let n_readings = rng.gen_range(2..=3);
    let likelihood = {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..n_readings).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect();
        (0..n_readings).map(|k| (0..n).map(|m| cols[m][k]).collect()).collect()
    };
    let params = SystemParams {
        battery_price: 1e7,
        solar_price: 1e7,
        carbon_price: rng.gen_range(0.0..1.0),
        grid_price_per_kw_day: rng.gen_range(0.2..1.0) / DAYS,
        excess_price_per_kw_day: rng.gen_range(1.05..3.0) / DAYS,
        fos_design: 1.0,
        fos_op: 1.0,
        energy_cost_scale: 1.0,
        tariff: Tariff {
            price: (0..horizon).map(|_| rng.gen_range(0.1..1.0)).collect(),
            carbon: (0..horizon).map(|_| rng.gen_range(0.0..0.5)).collect(),
        },
        ..Default::default()
    };
    GridOnlyProblem {
        loads,
        prior,
        likelihood,
        params,
    }
}
