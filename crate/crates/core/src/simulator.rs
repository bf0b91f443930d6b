//! Receding-horizon operation of a fixed design and ex-post costing.
//!
//! Each window solves the single-scenario dispatch LP with capacities held
//! fixed, commits a prefix of the flows, and rolls the battery state forward.
//! Costs are then billed on the committed flows alone.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designopt::{
    building_import, operating_totals, CostBreakdown, Dispatch, LpModel, SystemDesign, SystemParams, Var,
};
use crate::error::{Error, Result};
use crate::loadmodel::format_float;
use crate::scenario::Scenario;
use crate::stats::DistributionSummary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcParams {
    /// Planning window length in steps.
    pub horizon_steps: usize,
    /// Steps committed from each window before re-solving.
    pub execute_steps: usize,
    /// Factor of safety on grid capacity inside the controller.
    pub fos_op: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon_steps: 48,
            execute_steps: 24,
            fos_op: 1.01,
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        if self.execute_steps == 0 || self.execute_steps > self.horizon_steps {
            return Err(Error::Validation(format!(
                "need 1 <= execute_steps <= horizon_steps, got {} and {}",
                self.execute_steps, self.horizon_steps
            )));
        }
        if !(self.fos_op >= 1.0) {
            return Err(Error::Validation(
                "operational factor of safety must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// A single window spanning the whole horizon.
    pub fn full_foresight(horizon: usize, fos_op: f64) -> Self {
        Self {
            horizon_steps: horizon,
            execute_steps: horizon,
            fos_op,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub costs: CostBreakdown,
    /// Committed flows; `dispatch.soc` holds the `B × (T+1)` trajectories.
    pub dispatch: Dispatch,
    /// Net import of each building, `B × T` kWh.
    pub building_import: Vec<Vec<f64>>,
    /// District grid flow `Σ_i E^b / Δt`, kW (negative for export).
    pub grid_flow: Vec<f64>,
    /// Steps whose |grid flow| exceeded the contracted capacity.
    pub excess_events: usize,
    pub windows_solved: usize,
}

impl SimulationResult {
    pub fn soc_trajectories(&self) -> &[Vec<f64>] {
        &self.dispatch.soc
    }

    /// Largest `|SoC[t+1] − SoC[t] − √η·charge + discharge/√η|` over all steps.
    pub fn conservation_residual(&self, round_trip_efficiency: f64) -> f64 {
        let r = round_trip_efficiency.sqrt();
        let d = &self.dispatch;
        let mut worst: f64 = 0.0;
        for i in 0..d.soc.len() {
            for t in 0..d.charge[i].len() {
                let res = d.soc[i][t + 1] - d.soc[i][t] - r * d.charge[i][t] + d.discharge[i][t] / r;
                worst = worst.max(res.abs());
            }
        }
        worst
    }

    /// Time series CSV: `t,grid_kw,import_b{i}...,soc_b{i}...` with SoC at the
    /// start of each step plus a final row for `T`.
    pub fn write_timeseries_csv(&self, path: &Path) -> Result<()> {
        let b = self.building_import.len();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string(), "grid_kw".to_string()];
        header.extend((0..b).map(|i| format!("import_kwh_b{i}")));
        header.extend((0..b).map(|i| format!("soc_kwh_b{i}")));
        w.write_record(&header)?;
        for t in 0..=self.grid_flow.len() {
            let mut row = vec![t.to_string()];
            let step = |v: Option<&f64>| v.map(|x| format_float(*x)).unwrap_or_default();
            row.push(step(self.grid_flow.get(t)));
            row.extend(self.building_import.iter().map(|e| step(e.get(t))));
            row.extend(self.dispatch.soc.iter().map(|s| format_float(s[t])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            schema_version: u32,
            costs: &'a CostBreakdown,
            excess_events: usize,
            windows_solved: usize,
        }
        let s = Summary {
            schema_version: 1,
            costs: &self.costs,
            excess_events: self.excess_events,
            windows_solved: self.windows_solved,
        };
        std::fs::write(path, serde_json::to_string_pretty(&s)?)?;
        Ok(())
    }
}

struct WindowVars {
    charge: Vec<Vec<Var>>,
    discharge: Vec<Vec<Var>>,
}

/// Dispatch LP over `[start, end)` with capacities as constants.
fn window_lp(
    design: &SystemDesign,
    scenario: &Scenario,
    params: &SystemParams,
    fos_op: f64,
    start: usize,
    end: usize,
    soc_start: &[f64],
    realized_peak_kw: f64,
) -> (LpModel, WindowVars) {
    let b = scenario.n_buildings();
    let dt = scenario.timestep_hours;
    let gamma = params.lifetime_years;
    let scale = params.energy_cost_scale;
    let sqrt_eta = params.round_trip_efficiency.sqrt();
    let threshold = design.grid_kw / fos_op;
    let mut m = LpModel::new();
    let mut vars = WindowVars {
        charge: Vec::with_capacity(b),
        discharge: Vec::with_capacity(b),
    };
    for i in 0..b {
        let cap = design.battery_kwh[i];
        let pmax = params.discharge_ratio * cap * dt;
        let (mut ch, mut dis) = (Vec::new(), Vec::new());
        let mut prev: Option<Var> = None;
        for t in start..end {
            let c = m.add_var(format!("ch_{i}_{t}"), 0.0, 0.0, pmax);
            let d = m.add_var(format!("dis_{i}_{t}"), 0.0, 0.0, pmax);
            let q = m.add_var(format!("soc_{i}_{}", t + 1), 0.0, 0.0, cap);
            let imp = m.add_var(
                format!("imp_{i}_{t}"),
                gamma * scale * params.tariff.price[t],
                0.0,
                f64::INFINITY,
            );
            let mut terms = vec![(q, 1.0), (c, -sqrt_eta), (d, 1.0 / sqrt_eta)];
            let rhs = match prev {
                Some(p) => {
                    terms.push((p, -1.0));
                    0.0
                }
                None => soc_start[i],
            };
            m.add_eq(format!("dyn_{i}_{t}"), rhs, terms);
            let net = scenario.loads[i][t] - design.solar_kwp[i] * scenario.solar[t];
            m.add_ge(format!("imp_{i}_{t}"), net, vec![(imp, 1.0), (c, -1.0), (d, 1.0)]);
            ch.push(c);
            dis.push(d);
            prev = Some(q);
        }
        vars.charge.push(ch);
        vars.discharge.push(dis);
    }
    // Excess already incurred earlier in the year is sunk, so the window may
    // use it for free.
    let sunk = (realized_peak_kw - threshold).max(0.0);
    let excess = m.add_var("exc", gamma * params.excess_price_annual(), sunk, f64::INFINITY);
    for (k, t) in (start..end).enumerate() {
        let carbon = m.add_var(
            format!("carb_{t}"),
            gamma * scale * params.carbon_price * params.tariff.carbon[t],
            0.0,
            f64::INFINITY,
        );
        let net: f64 = (0..b)
            .map(|i| scenario.loads[i][t] - design.solar_kwp[i] * scenario.solar[t])
            .sum();
        let flows = |sign: f64| -> Vec<(Var, f64)> {
            (0..b)
                .flat_map(|i| [(vars.charge[i][k], sign), (vars.discharge[i][k], -sign)])
                .collect()
        };
        let mut terms = vec![(carbon, 1.0)];
        terms.extend(flows(-1.0));
        m.add_ge(format!("carb_{t}"), net, terms);
        let mut up = vec![(excess, dt)];
        up.extend(flows(-1.0));
        m.add_ge(format!("peakup_{t}"), net - threshold * dt, up);
        let mut down = vec![(excess, dt)];
        down.extend(flows(1.0));
        m.add_ge(format!("peakdn_{t}"), -net - threshold * dt, down);
    }
    (m, vars)
}

/// Clip a committed flow pair so the battery stays within its bounds, and
/// return the resulting state of charge.
fn commit_step(soc: f64, cap: f64, pmax: f64, sqrt_eta: f64, charge: &mut f64, discharge: &mut f64) -> f64 {
    *charge = charge.clamp(0.0, pmax);
    *discharge = discharge.clamp(0.0, pmax);
    let mut next = soc + sqrt_eta * *charge - *discharge / sqrt_eta;
    if next < 0.0 {
        *discharge = (soc + sqrt_eta * *charge) * sqrt_eta;
        next = soc + sqrt_eta * *charge - *discharge / sqrt_eta;
        next = next.max(0.0);
    } else if next > cap {
        *charge = (cap - soc + *discharge / sqrt_eta) / sqrt_eta;
        next = soc + sqrt_eta * *charge - *discharge / sqrt_eta;
        next = next.min(cap);
    }
    next
}

/// Operate `design` on `scenario` under receding-horizon control.
pub fn simulate(
    design: &SystemDesign,
    scenario: &Scenario,
    params: &SystemParams,
    mpc: &MpcParams,
) -> Result<SimulationResult> {
    mpc.validate()?;
    scenario.validate()?;
    params.validate(scenario.horizon())?;
    design.validate(params)?;
    if design.n_buildings() != scenario.n_buildings() {
        return Err(Error::Validation("design and scenario differ in building count".into()));
    }
    let b = scenario.n_buildings();
    let horizon = scenario.horizon();
    let dt = scenario.timestep_hours;
    let sqrt_eta = params.round_trip_efficiency.sqrt();
    let mut dispatch = Dispatch::idle(b, horizon);
    for i in 0..b {
        dispatch.soc[i][0] = params.initial_soc_frac * design.battery_kwh[i];
    }
    let mut realized_peak: f64 = 0.0;
    let mut windows = 0;
    let mut start = 0;
    while start < horizon {
        let end = (start + mpc.horizon_steps).min(horizon);
        let commit = mpc.execute_steps.min(end - start);
        let soc_start: Vec<f64> = (0..b).map(|i| dispatch.soc[i][start]).collect();
        let has_storage = design.battery_kwh.iter().any(|c| *c > 0.0);
        let values = if has_storage {
            let (model, vars) = window_lp(
                design,
                scenario,
                params,
                mpc.fos_op,
                start,
                end,
                &soc_start,
                realized_peak,
            );
            let sol = model.solve().map_err(|e| Error::Simulation {
                step: start,
                source: Box::new(e),
            })?;
            windows += 1;
            Some((sol, vars))
        } else {
            None
        };
        for k in 0..commit {
            let t = start + k;
            let mut district = 0.0;
            for i in 0..b {
                let cap = design.battery_kwh[i];
                let (mut c, mut d) = match &values {
                    Some((sol, vars)) => (sol.value(vars.charge[i][k]), sol.value(vars.discharge[i][k])),
                    None => (0.0, 0.0),
                };
                let pmax = params.discharge_ratio * cap * dt;
                let next = commit_step(dispatch.soc[i][t], cap, pmax, sqrt_eta, &mut c, &mut d);
                dispatch.charge[i][t] = c;
                dispatch.discharge[i][t] = d;
                dispatch.soc[i][t + 1] = next;
                district += building_import(scenario.loads[i][t], design.solar_kwp[i], scenario.solar[t], c, d);
            }
            realized_peak = realized_peak.max(district.abs() / dt);
        }
        start += commit;
    }
    Ok(finish(design, scenario, params, dispatch, windows))
}

fn finish(
    design: &SystemDesign,
    scenario: &Scenario,
    params: &SystemParams,
    dispatch: Dispatch,
    windows_solved: usize,
) -> SimulationResult {
    let b = scenario.n_buildings();
    let horizon = scenario.horizon();
    let dt = scenario.timestep_hours;
    let building_import: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            (0..horizon)
                .map(|t| {
                    building_import(
                        scenario.loads[i][t],
                        design.solar_kwp[i],
                        scenario.solar[t],
                        dispatch.charge[i][t],
                        dispatch.discharge[i][t],
                    )
                })
                .collect()
        })
        .collect();
    let grid_flow: Vec<f64> = (0..horizon)
        .map(|t| building_import.iter().map(|e| e[t]).sum::<f64>() / dt)
        .collect();
    let ops = operating_totals(scenario, design, &dispatch, params, design.grid_kw);
    let excess = (ops.peak_kw - design.grid_kw).max(0.0);
    let costs = CostBreakdown::assemble(
        design,
        params,
        ops.electricity,
        ops.carbon,
        excess,
        ops.peak_kw,
        scenario.total_energy(),
    );
    SimulationResult {
        costs,
        dispatch,
        building_import,
        grid_flow,
        excess_events: ops.excess_steps,
        windows_solved,
    }
}

/// Monte Carlo cost estimate with per-sample records kept in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEvaluation {
    pub summary: DistributionSummary,
    pub costs: Vec<CostBreakdown>,
    /// Worst battery conservation residual across all samples, kWh.
    pub max_conservation_residual: f64,
}

impl CostEvaluation {
    fn from_costs(costs: Vec<CostBreakdown>, residual: f64) -> Self {
        Self {
            summary: DistributionSummary::from_samples(costs.iter().map(|c| c.total).collect()),
            costs,
            max_conservation_residual: residual,
        }
    }

    /// Component-wise mean breakdown.
    pub fn mean_breakdown(&self) -> CostBreakdown {
        let n = self.costs.len().max(1) as f64;
        let mut m = CostBreakdown::default();
        for c in &self.costs {
            m.electricity += c.electricity / n;
            m.carbon += c.carbon / n;
            m.grid_excess += c.grid_excess / n;
            m.grid_connection += c.grid_connection / n;
            m.battery_capex += c.battery_capex / n;
            m.solar_capex += c.solar_capex / n;
            m.total += c.total / n;
            m.lcoe += c.lcoe / n;
            m.peak_draw_kw += c.peak_draw_kw / n;
        }
        m
    }
}

/// One row of a lifetime cost breakdown table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub cost: String,
    pub mean: f64,
    /// Share of the mean total; absent for LCOE.
    pub percentage: Option<f64>,
    pub std: f64,
}

impl CostEvaluation {
    /// Mean, share of total and spread of each cost component.
    pub fn breakdown_table(&self) -> Vec<BreakdownRow> {
        let mean_total = self.summary.mean;
        let column = |f: &dyn Fn(&CostBreakdown) -> f64| -> Vec<f64> { self.costs.iter().map(f).collect() };
        let mut rows = vec![
            ("Total", column(&|c| c.total), true),
            ("LCOE", column(&|c| c.lcoe), false),
        ];
        let parts: [(&str, fn(&CostBreakdown) -> f64); 6] = [
            ("Electricity", |c| c.electricity),
            ("Carbon", |c| c.carbon),
            ("Grid excess", |c| c.grid_excess),
            ("Grid connection", |c| c.grid_connection),
            ("Battery", |c| c.battery_capex),
            ("Solar", |c| c.solar_capex),
        ];
        rows.extend(parts.iter().map(|(name, f)| (*name, column(f), true)));
        rows.into_iter()
            .map(|(name, xs, share)| {
                let mean = crate::stats::mean(&xs);
                BreakdownRow {
                    cost: name.to_string(),
                    mean,
                    percentage: (share && mean_total != 0.0).then(|| mean / mean_total * 100.0),
                    std: crate::stats::std_dev(&xs),
                }
            })
            .collect()
    }
}

fn collect_indexed<T: Send>(n: usize, results: Vec<(usize, Result<T>)>) -> Result<Vec<T>> {
    let mut failed = 0;
    let mut first = None;
    let mut out = Vec::with_capacity(n);
    for (i, r) in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| format!("sample {i}: {e}"));
            }
        }
    }
    match first {
        None => Ok(out),
        Some(first) => Err(Error::PartialFailure {
            failed,
            total: n,
            first,
        }),
    }
}

/// Simulate `design` on `n` scenarios drawn by index from `sampler`.
pub fn evaluate_expected_cost<F>(
    design: &SystemDesign,
    sampler: F,
    n: usize,
    params: &SystemParams,
    mpc: &MpcParams,
) -> Result<CostEvaluation>
where
    F: Fn(usize) -> Result<Scenario> + Sync,
{
    if n == 0 {
        return Err(Error::Argument("need at least one evaluation sample".into()));
    }
    let results: Vec<(usize, Result<(CostBreakdown, f64)>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let r = sampler(j).and_then(|s| simulate(design, &s, params, mpc)).map(|sim| {
                let res = sim.conservation_residual(params.round_trip_efficiency);
                (sim.costs, res)
            });
            (j, r)
        })
        .collect();
    let pairs = collect_indexed(n, results)?;
    let residual = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(CostEvaluation::from_costs(
        pairs.into_iter().map(|p| p.0).collect(),
        residual,
    ))
}

/// Cost of serving the load from the grid alone, with the connection sized
/// to each sample's own peak so no excess is billed.
pub fn no_asset_baseline<F>(sampler: F, n: usize, params: &SystemParams) -> Result<CostEvaluation>
where
    F: Fn(usize) -> Result<Scenario> + Sync,
{
    if n == 0 {
        return Err(Error::Argument("need at least one evaluation sample".into()));
    }
    let results: Vec<(usize, Result<CostBreakdown>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let r = sampler(j).and_then(|s| {
                s.validate()?;
                params.validate(s.horizon())?;
                let b = s.n_buildings();
                let peak = s.aggregate_kw().into_iter().fold(0.0, f64::max);
                let design = SystemDesign {
                    grid_kw: peak,
                    ..SystemDesign::zero(b)
                };
                Ok(finish(&design, &s, params, Dispatch::idle(b, s.horizon()), 0).costs)
            });
            (j, r)
        })
        .collect();
    Ok(CostEvaluation::from_costs(collect_indexed(n, results)?, 0.0))
}

/// Fraction of the baseline cost saved by a design.
pub fn savings_fraction(design_mean: f64, baseline_mean: f64) -> f64 {
    if baseline_mean > 0.0 {
        1.0 - design_mean / baseline_mean
    } else {
        0.0
    }
}
