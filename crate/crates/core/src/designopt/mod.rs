//! Stochastic sizing of per-building batteries and PV plus the district grid
//! connection.
//!
//! The model is a scenario LP: capacities are first-stage variables shared by
//! every scenario, battery dispatch is second-stage. Battery intake is split
//! into non-negative charge and discharge flows; every `max[0, ·]` cost term
//! becomes an epigraph variable.

pub mod lp;

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadmodel::format_float;
use crate::scenario::{Scenario, ScenarioSet};
pub use lp::{LpModel, LpSolution, Method, Var, FEASIBILITY_TOL};

pub const DAYS_PER_YEAR: f64 = 365.0;
/// Charge·discharge products above this are counted as simultaneous flow.
pub const SIMULTANEOUS_FLOW_TOL: f64 = 1e-6;

/// Grid price and carbon intensity time series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tariff {
    /// Import price, £/kWh.
    pub price: Vec<f64>,
    /// Grid carbon intensity, kgCO2/kWh.
    pub carbon: Vec<f64>,
}

impl Tariff {
    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.price.len() != horizon || self.carbon.len() != horizon {
            return Err(Error::Validation(format!(
                "tariff has {} prices and {} carbon values, expected {horizon}",
                self.price.len(),
                self.carbon.len()
            )));
        }
        if self.price.iter().chain(&self.carbon).any(|v| !(*v >= 0.0)) {
            return Err(Error::Validation("tariff values must be non-negative".into()));
        }
        Ok(())
    }

    /// A deterministic time-of-use tariff: cheap nights, an evening peak, and
    /// a carbon intensity that tracks evening gas generation.
    pub fn synthetic(horizon: usize) -> Self {
        let mut price = Vec::with_capacity(horizon);
        let mut carbon = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let hour = t % 24;
            let day = t / 24;
            let weekend = day % 7 >= 5;
            let winter = 0.5 * (1.0 + (2.0 * PI * (day as f64 - 15.0) / 365.0).cos());
            let base = match hour {
                0..=5 => 0.12,
                16..=19 if !weekend => 0.38,
                16..=19 => 0.28,
                6..=15 => 0.22,
                _ => 0.20,
            };
            price.push(base * (0.9 + 0.2 * winter));
            let solar_dip = if (10..=15).contains(&hour) {
                0.04 * (1.0 - winter)
            } else {
                0.0
            };
            let evening = if (16..=20).contains(&hour) { 0.05 } else { 0.0 };
            carbon.push(0.14 + 0.06 * winter + evening - solar_dip);
        }
        Self { price, carbon }
    }

    /// Write `t,price_gbp_per_kwh,carbon_kg_per_kwh` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "price_gbp_per_kwh", "carbon_kg_per_kwh"])?;
        for (t, (p, c)) in self.price.iter().zip(&self.carbon).enumerate() {
            w.write_record([t.to_string(), format_float(*p), format_float(*c)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "price_gbp_per_kwh", "carbon_kg_per_kwh"] {
            return Err(Error::Schema(format!(
                "{}: expected header t,price_gbp_per_kwh,carbon_kg_per_kwh",
                path.display()
            )));
        }
        let mut tariff = Tariff::default();
        for (i, rec) in rdr.deserialize().enumerate() {
            let (t, p, c): (usize, f64, f64) = rec?;
            if t != i {
                return Err(Error::Schema(format!(
                    "tariff rows must be ordered t = 0.., found {t} at row {i}"
                )));
            }
            tariff.price.push(p);
            tariff.carbon.push(c);
        }
        Ok(tariff)
    }
}

/// Technical and economic parameters of the district system. Defaults are
/// the case-study values; `tariff` is supplied by the data layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Operational lifetime γ, years.
    pub lifetime_years: f64,
    pub timestep_hours: f64,
    /// £/kgCO2.
    pub carbon_price: f64,
    /// £/kWh of battery energy capacity.
    pub battery_price: f64,
    /// £/kWp of PV.
    pub solar_price: f64,
    /// Contracted grid capacity charge, £/kW/day.
    pub grid_price_per_kw_day: f64,
    /// Charge on peak draw above contracted capacity, £/kW/day.
    pub excess_price_per_kw_day: f64,
    pub fos_design: f64,
    pub fos_op: f64,
    /// Battery power-to-energy ratio δ, kW/kWh.
    pub discharge_ratio: f64,
    /// Initial state of charge as a fraction of capacity.
    pub initial_soc_frac: f64,
    /// Round-trip efficiency η, split as √η on each direction.
    pub round_trip_efficiency: f64,
    /// Optional PV cap per building, kWp.
    pub pv_cap_per_building: Option<f64>,
    /// Multiplier on energy and carbon costs so a horizon shorter than a year
    /// can stand in for one (1 when the horizon is a full year).
    pub energy_cost_scale: f64,
    #[serde(skip)]
    pub tariff: Tariff,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            lifetime_years: 20.0,
            timestep_hours: 1.0,
            carbon_price: 1.0,
            battery_price: 750.0,
            solar_price: 1500.0,
            grid_price_per_kw_day: 0.263,
            excess_price_per_kw_day: 1.053,
            fos_design: 1.25,
            fos_op: 1.01,
            discharge_ratio: 0.4,
            initial_soc_frac: 0.0,
            round_trip_efficiency: 0.9,
            pv_cap_per_building: None,
            energy_cost_scale: 1.0,
            tariff: Tariff::default(),
        }
    }
}

impl SystemParams {
    /// Annual grid connection price, £/kW/yr.
    pub fn grid_price_annual(&self) -> f64 {
        self.grid_price_per_kw_day * DAYS_PER_YEAR
    }

    /// Annual excess charge, £/kW/yr.
    pub fn excess_price_annual(&self) -> f64 {
        self.excess_price_per_kw_day * DAYS_PER_YEAR
    }

    /// Validate scalar parameters (the tariff is checked against a horizon separately).
    pub fn validate_scalars(&self) -> Result<()> {
        let prices = [
            self.carbon_price,
            self.battery_price,
            self.solar_price,
            self.grid_price_per_kw_day,
            self.excess_price_per_kw_day,
        ];
        if prices.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Validation("prices must be non-negative".into()));
        }
        if !(self.round_trip_efficiency > 0.0 && self.round_trip_efficiency <= 1.0) {
            return Err(Error::Validation(format!(
                "round-trip efficiency must lie in (0, 1], got {}",
                self.round_trip_efficiency
            )));
        }
        if !(self.fos_design >= 1.0 && self.fos_op >= 1.0) {
            return Err(Error::Validation("grid factors of safety must be at least 1".into()));
        }
        if !(self.lifetime_years > 0.0 && self.timestep_hours > 0.0 && self.energy_cost_scale > 0.0) {
            return Err(Error::Validation(
                "lifetime, timestep and energy scale must be positive".into(),
            ));
        }
        if !(self.discharge_ratio >= 0.0) || !(0.0..=1.0).contains(&self.initial_soc_frac) {
            return Err(Error::Validation(
                "invalid battery discharge ratio or initial SoC".into(),
            ));
        }
        if self.pv_cap_per_building.is_some_and(|c| !(c >= 0.0)) {
            return Err(Error::Validation("PV cap must be non-negative".into()));
        }
        Ok(())
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        self.validate_scalars()?;
        self.tariff.validate(horizon)
    }

    fn check_scenarios(&self, scenarios: &ScenarioSet) -> Result<()> {
        scenarios.validate()?;
        self.validate(scenarios.horizon())?;
        if scenarios
            .scenarios
            .iter()
            .any(|s| s.timestep_hours != self.timestep_hours)
        {
            return Err(Error::Validation(
                "scenario timestep differs from system timestep".into(),
            ));
        }
        Ok(())
    }
}

/// Installed capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDesign {
    /// Battery energy capacity per building, kWh.
    pub battery_kwh: Vec<f64>,
    /// PV capacity per building, kWp.
    pub solar_kwp: Vec<f64>,
    /// Contracted grid connection, kW.
    pub grid_kw: f64,
}

impl SystemDesign {
    pub fn zero(n_buildings: usize) -> Self {
        Self {
            battery_kwh: vec![0.0; n_buildings],
            solar_kwp: vec![0.0; n_buildings],
            grid_kw: 0.0,
        }
    }

    pub fn n_buildings(&self) -> usize {
        self.battery_kwh.len()
    }

    pub fn total_battery(&self) -> f64 {
        self.battery_kwh.iter().sum()
    }

    pub fn total_solar(&self) -> f64 {
        self.solar_kwp.iter().sum()
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if self.solar_kwp.len() != self.battery_kwh.len() {
            return Err(Error::Validation("design has mismatched building counts".into()));
        }
        if self
            .battery_kwh
            .iter()
            .chain(&self.solar_kwp)
            .chain([&self.grid_kw])
            .any(|c| !(*c >= 0.0))
        {
            return Err(Error::Validation("capacities must be non-negative".into()));
        }
        if let Some(cap) = params.pv_cap_per_building {
            if self.solar_kwp.iter().any(|c| *c > cap * (1.0 + 1e-9) + 1e-9) {
                return Err(Error::Validation(format!("PV capacity exceeds the {cap} kWp cap")));
            }
        }
        Ok(())
    }
}

/// Charge, discharge and state-of-charge trajectories for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// Energy drawn from the bus into each battery, `B × T` kWh.
    pub charge: Vec<Vec<f64>>,
    /// Energy delivered to the bus by each battery, `B × T` kWh.
    pub discharge: Vec<Vec<f64>>,
    /// `B × (T+1)` kWh.
    pub soc: Vec<Vec<f64>>,
}

impl Dispatch {
    pub fn idle(n_buildings: usize, horizon: usize) -> Self {
        Self {
            charge: vec![vec![0.0; horizon]; n_buildings],
            discharge: vec![vec![0.0; horizon]; n_buildings],
            soc: vec![vec![0.0; horizon + 1]; n_buildings],
        }
    }

    /// Steps where a battery charges and discharges at once.
    pub fn simultaneous_steps(&self) -> usize {
        self.charge
            .iter()
            .zip(&self.discharge)
            .flat_map(|(c, d)| c.iter().zip(d))
            .filter(|(c, d)| *c * *d > SIMULTANEOUS_FLOW_TOL)
            .count()
    }
}

/// Backend diagnostics for a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub status: String,
    pub iterations: i64,
    pub feasibility_tol: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub design: SystemDesign,
    /// Expected lifetime cost, £.
    pub objective_gbp: f64,
    /// Lifetime operating cost (energy, carbon, excess) of each scenario, £.
    pub per_scenario_op_cost: Vec<f64>,
    pub solver_status: SolverStatus,
    #[serde(skip)]
    pub dispatch: Vec<Dispatch>,
    /// Charge/discharge overlaps found in the optimal primal.
    pub simultaneous_flow_steps: usize,
}

/// Lifetime cost decomposition, £ (LCOE in £/kWh, peak in kW).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub electricity: f64,
    pub carbon: f64,
    pub grid_excess: f64,
    pub grid_connection: f64,
    pub battery_capex: f64,
    pub solar_capex: f64,
    pub total: f64,
    pub lcoe: f64,
    pub peak_draw_kw: f64,
}

impl CostBreakdown {
    /// Labels and values in reporting order.
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("Electricity", self.electricity),
            ("Carbon", self.carbon),
            ("Grid excess", self.grid_excess),
            ("Grid connection", self.grid_connection),
            ("Battery", self.battery_capex),
            ("Solar", self.solar_capex),
        ]
    }

    pub fn component_sum(&self) -> f64 {
        self.rows().iter().map(|(_, v)| v).sum()
    }
}

/// Lifetime cost per unit of lifetime energy served.
pub fn lcoe(total_gbp: f64, lifetime_energy_kwh: f64) -> f64 {
    if lifetime_energy_kwh > 0.0 {
        total_gbp / lifetime_energy_kwh
    } else {
        0.0
    }
}

/// Annual (per-horizon) operating quantities of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OperatingTotals {
    /// Σ_t p_e[t] Σ_i max(0, E^b), £.
    pub electricity: f64,
    /// Σ_t p_c c[t] max(0, Σ_i E^b), £.
    pub carbon: f64,
    /// max_t |Σ_i E^b| / Δt, kW.
    pub peak_kw: f64,
    /// Steps where |Σ_i E^b|/Δt exceeds the threshold passed in.
    pub excess_steps: usize,
}

/// Net building import `E^b = L − C^pv·g + charge − discharge` for one step.
pub fn building_import(load: f64, solar_kwp: f64, yield_: f64, charge: f64, discharge: f64) -> f64 {
    load - solar_kwp * yield_ + charge - discharge
}

/// Tally operating quantities for committed flows.
pub fn operating_totals(
    scenario: &Scenario,
    design: &SystemDesign,
    dispatch: &Dispatch,
    params: &SystemParams,
    excess_threshold_kw: f64,
) -> OperatingTotals {
    let dt = scenario.timestep_hours;
    let mut out = OperatingTotals::default();
    for t in 0..scenario.horizon() {
        let mut district = 0.0;
        for i in 0..scenario.n_buildings() {
            let e = building_import(
                scenario.loads[i][t],
                design.solar_kwp[i],
                scenario.solar[t],
                dispatch.charge[i][t],
                dispatch.discharge[i][t],
            );
            out.electricity += params.tariff.price[t] * e.max(0.0);
            district += e;
        }
        out.carbon += params.carbon_price * params.tariff.carbon[t] * district.max(0.0);
        let power = district.abs() / dt;
        out.peak_kw = out.peak_kw.max(power);
        if power > excess_threshold_kw + 1e-9 {
            out.excess_steps += 1;
        }
    }
    out
}

impl CostBreakdown {
    /// Assemble lifetime costs from expected annual operating quantities.
    /// `excess_kw` is the expected billed excess above contracted capacity.
    pub fn assemble(
        design: &SystemDesign,
        params: &SystemParams,
        electricity: f64,
        carbon: f64,
        excess_kw: f64,
        peak_kw: f64,
        energy_kwh: f64,
    ) -> Self {
        let gamma = params.lifetime_years;
        let scale = params.energy_cost_scale;
        let mut c = CostBreakdown {
            electricity: gamma * scale * electricity,
            carbon: gamma * scale * carbon,
            grid_excess: gamma * params.excess_price_annual() * excess_kw,
            grid_connection: gamma * params.grid_price_annual() * design.grid_kw,
            battery_capex: params.battery_price * design.total_battery(),
            solar_capex: params.solar_price * design.total_solar(),
            total: 0.0,
            lcoe: 0.0,
            peak_draw_kw: peak_kw,
        };
        c.total = c.component_sum();
        c.lcoe = lcoe(c.total, gamma * scale * energy_kwh);
        c
    }
}

/// How capacities enter the sizing LP.
#[derive(Debug, Clone, Copy)]
pub enum Capacities<'a> {
    /// Optimised.
    Free,
    /// Held at the given design by equality bounds.
    Pinned(&'a SystemDesign),
}

struct ScenarioVars {
    charge: Vec<Vec<Var>>,
    discharge: Vec<Vec<Var>>,
    soc: Vec<Vec<Var>>,
}

struct SizingVars {
    battery: Vec<Var>,
    solar: Vec<Var>,
    grid: Var,
    scenarios: Vec<ScenarioVars>,
}

fn build_sizing_lp(set: &ScenarioSet, params: &SystemParams, caps: Capacities<'_>) -> (LpModel, SizingVars) {
    let b = set.n_buildings();
    let horizon = set.horizon();
    let dt = params.timestep_hours;
    let gamma = params.lifetime_years;
    let scale = params.energy_cost_scale;
    let sqrt_eta = params.round_trip_efficiency.sqrt();
    let power_per_kwh = params.discharge_ratio * dt;
    let pv_cap = params.pv_cap_per_building.unwrap_or(f64::INFINITY);
    let inv_fos = 1.0 / params.fos_design;

    let mut m = LpModel::new();
    let pinned = |v: Option<f64>, hi: f64| match v {
        Some(x) => (x, x),
        None => (0.0, hi),
    };
    let design = match caps {
        Capacities::Pinned(d) => Some(d),
        Capacities::Free => None,
    };
    let battery: Vec<Var> = (0..b)
        .map(|i| {
            let (lo, hi) = pinned(design.map(|d| d.battery_kwh[i]), f64::INFINITY);
            m.add_var(format!("cs_{i}"), params.battery_price, lo, hi)
        })
        .collect();
    let solar: Vec<Var> = (0..b)
        .map(|i| {
            let (lo, hi) = pinned(design.map(|d| d.solar_kwp[i]), pv_cap);
            m.add_var(format!("cpv_{i}"), params.solar_price, lo, hi)
        })
        .collect();
    let (glo, ghi) = pinned(design.map(|d| d.grid_kw), f64::INFINITY);
    let grid = m.add_var("cgrid", gamma * params.grid_price_annual(), glo, ghi);

    let mut scen_vars = Vec::with_capacity(set.len());
    for (s_idx, s) in set.scenarios.iter().enumerate() {
        let rho = s.probability;
        let mut sv = ScenarioVars {
            charge: Vec::with_capacity(b),
            discharge: Vec::with_capacity(b),
            soc: Vec::with_capacity(b),
        };
        for i in 0..b {
            let mut ch = Vec::with_capacity(horizon);
            let mut dis = Vec::with_capacity(horizon);
            let mut soc = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let c = m.add_var(format!("ch_{s_idx}_{i}_{t}"), 0.0, 0.0, f64::INFINITY);
                let d = m.add_var(format!("dis_{s_idx}_{i}_{t}"), 0.0, 0.0, f64::INFINITY);
                let q = m.add_var(format!("soc_{s_idx}_{i}_{}", t + 1), 0.0, 0.0, f64::INFINITY);
                let imp = m.add_var(
                    format!("imp_{s_idx}_{i}_{t}"),
                    gamma * scale * rho * params.tariff.price[t],
                    0.0,
                    f64::INFINITY,
                );
                // SoC[t+1] = SoC[t] + √η·charge − discharge/√η, SoC[0] = soc0·C^s
                let mut dyn_terms = vec![(q, 1.0), (c, -sqrt_eta), (d, 1.0 / sqrt_eta)];
                match soc.last() {
                    Some(prev) => dyn_terms.push((*prev, -1.0)),
                    None if params.initial_soc_frac != 0.0 => dyn_terms.push((battery[i], -params.initial_soc_frac)),
                    None => {}
                }
                m.add_eq(format!("dyn_{s_idx}_{i}_{t}"), 0.0, dyn_terms);
                m.add_le(
                    format!("socmax_{s_idx}_{i}_{t}"),
                    0.0,
                    vec![(q, 1.0), (battery[i], -1.0)],
                );
                m.add_le(
                    format!("pch_{s_idx}_{i}_{t}"),
                    0.0,
                    vec![(c, 1.0), (battery[i], -power_per_kwh)],
                );
                m.add_le(
                    format!("pdis_{s_idx}_{i}_{t}"),
                    0.0,
                    vec![(d, 1.0), (battery[i], -power_per_kwh)],
                );
                // imp ≥ E^b = L − C^pv·g + charge − discharge
                m.add_ge(
                    format!("imp_{s_idx}_{i}_{t}"),
                    s.loads[i][t],
                    vec![(imp, 1.0), (c, -1.0), (d, 1.0), (solar[i], s.solar[t])],
                );
                ch.push(c);
                dis.push(d);
                soc.push(q);
            }
            sv.charge.push(ch);
            sv.discharge.push(dis);
            sv.soc.push(soc);
        }
        let excess = m.add_var(
            format!("exc_{s_idx}"),
            gamma * rho * params.excess_price_annual(),
            0.0,
            f64::INFINITY,
        );
        for t in 0..horizon {
            let carbon = m.add_var(
                format!("carb_{s_idx}_{t}"),
                gamma * scale * rho * params.carbon_price * params.tariff.carbon[t],
                0.0,
                f64::INFINITY,
            );
            let district_load: f64 = s.loads.iter().map(|l| l[t]).sum();
            // Σ_i E^b expressed through the flow variables.
            let net_terms = |sign: f64| -> Vec<(Var, f64)> {
                (0..b)
                    .flat_map(|i| {
                        [
                            (sv.charge[i][t], sign),
                            (sv.discharge[i][t], -sign),
                            (solar[i], -sign * s.solar[t]),
                        ]
                    })
                    .collect()
            };
            let mut terms = vec![(carbon, 1.0)];
            terms.extend(net_terms(-1.0));
            m.add_ge(format!("carb_{s_idx}_{t}"), district_load, terms);
            // excess·Δt ≥ ±Σ_i E^b − C^grid·Δt/FoS
            let mut up = vec![(excess, dt), (grid, dt * inv_fos)];
            up.extend(net_terms(-1.0));
            m.add_ge(format!("peakup_{s_idx}_{t}"), district_load, up);
            let mut down = vec![(excess, dt), (grid, dt * inv_fos)];
            down.extend(net_terms(1.0));
            m.add_ge(format!("peakdn_{s_idx}_{t}"), -district_load, down);
        }
        scen_vars.push(sv);
    }
    (
        m,
        SizingVars {
            battery,
            solar,
            grid,
            scenarios: scen_vars,
        },
    )
}

/// Build the sizing LP without solving it (for export).
pub fn build_model(scenarios: &ScenarioSet, params: &SystemParams) -> Result<LpModel> {
    params.check_scenarios(scenarios)?;
    Ok(build_sizing_lp(scenarios, params, Capacities::Free).0)
}

/// Solve the sizing LP for a scenario set.
pub fn build_and_solve(scenarios: &ScenarioSet, params: &SystemParams) -> Result<DesignSolution> {
    solve_with(scenarios, params, Capacities::Free)
}

/// Solve the sizing LP with capacities held at `design`: the expected cost of
/// operating that design with perfect foresight over each scenario.
pub fn solve_pinned(scenarios: &ScenarioSet, params: &SystemParams, design: &SystemDesign) -> Result<DesignSolution> {
    design.validate(params)?;
    if design.n_buildings() != scenarios.n_buildings() {
        return Err(Error::Validation(
            "design and scenarios differ in building count".into(),
        ));
    }
    solve_with(scenarios, params, Capacities::Pinned(design))
}

fn solve_with(scenarios: &ScenarioSet, params: &SystemParams, caps: Capacities<'_>) -> Result<DesignSolution> {
    params.check_scenarios(scenarios)?;
    let (model, vars) = build_sizing_lp(scenarios, params, caps);
    let sol = model.solve()?;
    let clean = |v: f64| if v.abs() < 1e-10 { 0.0 } else { v };
    let design = SystemDesign {
        battery_kwh: vars.battery.iter().map(|v| clean(sol.value(*v)).max(0.0)).collect(),
        solar_kwp: vars.solar.iter().map(|v| clean(sol.value(*v)).max(0.0)).collect(),
        grid_kw: clean(sol.value(vars.grid)).max(0.0),
    };
    let initial: Vec<f64> = design.battery_kwh.iter().map(|c| c * params.initial_soc_frac).collect();
    let dispatch: Vec<Dispatch> = vars
        .scenarios
        .iter()
        .map(|sv| {
            let read = |rows: &Vec<Vec<Var>>| -> Vec<Vec<f64>> {
                rows.iter()
                    .map(|r| r.iter().map(|v| sol.value(*v).max(0.0)).collect())
                    .collect()
            };
            let soc = sv
                .soc
                .iter()
                .zip(&initial)
                .map(|(r, s0)| std::iter::once(*s0).chain(r.iter().map(|v| sol.value(*v))).collect())
                .collect();
            Dispatch {
                charge: read(&sv.charge),
                discharge: read(&sv.discharge),
                soc,
            }
        })
        .collect();
    let per_scenario_op_cost = scenarios
        .scenarios
        .iter()
        .zip(&dispatch)
        .map(|(s, d)| {
            let ops = operating_totals(s, &design, d, params, design.grid_kw / params.fos_design);
            let excess = (ops.peak_kw - design.grid_kw / params.fos_design).max(0.0);
            params.lifetime_years
                * (params.energy_cost_scale * (ops.electricity + ops.carbon) + params.excess_price_annual() * excess)
        })
        .collect();
    let simultaneous_flow_steps = dispatch.iter().map(Dispatch::simultaneous_steps).sum();
    if simultaneous_flow_steps > 0 {
        log::warn!("{simultaneous_flow_steps} steps charge and discharge simultaneously in the optimal dispatch");
    }
    Ok(DesignSolution {
        design,
        objective_gbp: sol.objective,
        per_scenario_op_cost,
        solver_status: SolverStatus {
            status: "Optimal".into(),
            iterations: sol.iterations,
            feasibility_tol: FEASIBILITY_TOL,
            max_violation: model.max_violation(&sol.values),
        },
        dispatch,
        simultaneous_flow_steps,
    })
}

/// Recompute each labelled cost term of a solved design from its primal.
pub fn objective_breakdown(
    sol: &DesignSolution,
    scenarios: &ScenarioSet,
    params: &SystemParams,
) -> Result<CostBreakdown> {
    if sol.dispatch.len() != scenarios.len() {
        return Err(Error::Validation("solution and scenario set differ in size".into()));
    }
    let threshold = sol.design.grid_kw / params.fos_design;
    let (mut elec, mut carbon, mut excess, mut peak, mut energy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (s, d) in scenarios.scenarios.iter().zip(&sol.dispatch) {
        let ops = operating_totals(s, &sol.design, d, params, threshold);
        let rho = s.probability;
        elec += rho * ops.electricity;
        carbon += rho * ops.carbon;
        excess += rho * (ops.peak_kw - threshold).max(0.0);
        peak += rho * ops.peak_kw;
        energy += rho * s.total_energy();
    }
    Ok(CostBreakdown::assemble(
        &sol.design,
        params,
        elec,
        carbon,
        excess,
        peak,
        energy,
    ))
}
