//! Joint district scenarios and Fast-Forward scenario reduction.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadmodel::{build_profile, format_float, BuildingLoadParams, LoadDataset};
use crate::rng;

/// Upper bound on normalised PV output (kW per kWp).
pub const MAX_SOLAR_YIELD: f64 = 1.2;
/// Tolerance on the total probability of a scenario set.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// Normalised PV generation per weather year, kW/kWp.
#[derive(Debug, Clone, PartialEq)]
pub struct SolarDataset {
    years: BTreeMap<String, Vec<f64>>,
    horizon: usize,
}

impl SolarDataset {
    pub fn new(years: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let horizon = years
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::Schema("solar dataset has no years".into()))?;
        for (y, g) in &years {
            if g.len() != horizon {
                return Err(Error::Schema(format!(
                    "solar year {y} has {} entries, expected {horizon}",
                    g.len()
                )));
            }
            if let Some((t, v)) = g
                .iter()
                .enumerate()
                .find(|(_, v)| !(**v >= 0.0 && **v <= MAX_SOLAR_YIELD))
            {
                return Err(Error::Validation(format!("solar year {y} has yield {v} at t={t}")));
            }
        }
        Ok(Self { years, horizon })
    }

    pub fn year_ids(&self) -> Vec<String> {
        self.years.keys().cloned().collect()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn year(&self, id: &str) -> Option<&[f64]> {
        self.years.get(id).map(Vec::as_slice)
    }

    /// Write `year_id,t,gen_kw_per_kwp` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["year_id", "t", "gen_kw_per_kwp"])?;
        for (y, g) in &self.years {
            for (t, v) in g.iter().enumerate() {
                w.write_record([y.as_str(), &t.to_string(), &format_float(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct SolarRow {
    year_id: String,
    t: usize,
    gen_kw_per_kwp: f64,
}

pub fn load_solar(path: &Path) -> Result<SolarDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["year_id", "t", "gen_kw_per_kwp"] {
        return Err(Error::Schema(format!(
            "{}: expected header year_id,t,gen_kw_per_kwp",
            path.display()
        )));
    }
    let mut rows: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for rec in rdr.deserialize() {
        let row: SolarRow = rec?;
        if rows
            .entry(row.year_id.clone())
            .or_default()
            .insert(row.t, row.gen_kw_per_kwp)
            .is_some()
        {
            return Err(Error::Schema(format!(
                "duplicate solar row for {} at t={}",
                row.year_id, row.t
            )));
        }
    }
    let mut years = BTreeMap::new();
    for (y, series) in rows {
        if series.keys().enumerate().any(|(i, t)| i != *t) {
            return Err(Error::Schema(format!("solar year {y} is not contiguous from t=0")));
        }
        years.insert(y, series.into_values().collect());
    }
    SolarDataset::new(years)
}

/// Synthetic PV yields: a clear-sky day shape scaled by season and an AR(1)
/// daily cloudiness index.
pub fn generate_synthetic_solar(n_years: usize, horizon: usize, seed: u64) -> Result<SolarDataset> {
    if n_years < 1 || horizon < 24 {
        return Err(Error::Argument(format!(
            "need at least one solar year and 24 hours, got {n_years} years and {horizon} hours"
        )));
    }
    let mut years = BTreeMap::new();
    for y in 0..n_years {
        let mut r = rng::stream(seed, "synthetic-solar", y as u64);
        let shock = Normal::new(0.0, 0.25).expect("valid sd");
        let mut cloud: f64 = 0.0;
        let mut day_factor = 1.0;
        let series = (0..horizon)
            .map(|t| {
                let hour = (t % 24) as f64 + 0.5;
                let doy = (t / 24) as f64;
                if t % 24 == 0 {
                    cloud = 0.6 * cloud + shock.sample(&mut r);
                    day_factor = (0.75 + 0.35 * cloud).clamp(0.1, 1.0);
                }
                // Day length and elevation follow the seasons, longest in late June.
                let season = 0.5 * (1.0 - (2.0 * PI * (doy + 10.0) / 365.0).cos());
                let day_len = 8.0 + 8.5 * season;
                let sunrise = 12.0 - 0.5 * day_len;
                let phase = (hour - sunrise) / day_len;
                let clear = if (0.0..=1.0).contains(&phase) {
                    (PI * phase).sin()
                } else {
                    0.0
                };
                (clear * (0.3 + 0.55 * season) * day_factor).clamp(0.0, MAX_SOLAR_YIELD)
            })
            .collect();
        years.insert(format!("{}", 2010 + y), series);
    }
    SolarDataset::new(years)
}

/// One joint realisation of all building loads and PV yield.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// `B × T` energy demand, kWh per step.
    pub loads: Vec<Vec<f64>>,
    /// Normalised PV yield, kW/kWp.
    pub solar: Vec<f64>,
    pub probability: f64,
    pub timestep_hours: f64,
    pub provenance: Vec<BuildingLoadParams>,
    pub solar_year: String,
}

impl Scenario {
    pub fn n_buildings(&self) -> usize {
        self.loads.len()
    }

    pub fn horizon(&self) -> usize {
        self.solar.len()
    }

    /// Aggregate district demand in kW at each step.
    pub fn aggregate_kw(&self) -> Vec<f64> {
        (0..self.horizon())
            .map(|t| self.loads.iter().map(|l| l[t]).sum::<f64>() / self.timestep_hours)
            .collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.loads.iter().flatten().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        if self.loads.is_empty() {
            return Err(Error::Validation("scenario has no buildings".into()));
        }
        if self.loads.iter().any(|l| l.len() != t) {
            return Err(Error::Validation("scenario load and solar lengths differ".into()));
        }
        if self.loads.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::Validation("scenario has a negative load".into()));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Validation(format!("scenario probability {}", self.probability)));
        }
        Ok(())
    }
}

/// Probability-weighted scenarios with common dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self> {
        let set = Self { scenarios };
        set.validate()?;
        Ok(set)
    }

    /// Give every scenario probability `1/N`.
    pub fn equiprobable(mut scenarios: Vec<Scenario>) -> Result<Self> {
        let p = 1.0 / scenarios.len().max(1) as f64;
        scenarios.iter_mut().for_each(|s| s.probability = p);
        Self::new(scenarios)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn n_buildings(&self) -> usize {
        self.scenarios.first().map_or(0, Scenario::n_buildings)
    }

    pub fn horizon(&self) -> usize {
        self.scenarios.first().map_or(0, Scenario::horizon)
    }

    pub fn total_probability(&self) -> f64 {
        self.scenarios.iter().map(|s| s.probability).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .scenarios
            .first()
            .ok_or_else(|| Error::Validation("empty scenario set".into()))?;
        for s in &self.scenarios {
            s.validate()?;
            if s.n_buildings() != first.n_buildings() || s.horizon() != first.horizon() {
                return Err(Error::Validation(
                    "scenarios differ in building count or horizon".into(),
                ));
            }
            if s.timestep_hours != first.timestep_hours {
                return Err(Error::Validation("scenarios differ in timestep".into()));
            }
        }
        let total = self.total_probability();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::Validation(format!("scenario probabilities sum to {total}")));
        }
        Ok(())
    }

    /// Write `loads.csv`, `solar.csv` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("loads.csv"))?;
        w.write_record(["scenario", "building", "t", "load_kwh"])?;
        for (m, s) in self.scenarios.iter().enumerate() {
            for (i, l) in s.loads.iter().enumerate() {
                for (t, v) in l.iter().enumerate() {
                    w.write_record([&m.to_string(), &i.to_string(), &t.to_string(), &format_float(*v)])?;
                }
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("solar.csv"))?;
        w.write_record(["scenario", "t", "gen_kw_per_kwp"])?;
        for (m, s) in self.scenarios.iter().enumerate() {
            for (t, v) in s.solar.iter().enumerate() {
                w.write_record([&m.to_string(), &t.to_string(), &format_float(*v)])?;
            }
        }
        w.flush()?;
        let manifest = SetManifest {
            schema_version: 1,
            timestep_hours: self.scenarios.first().map_or(1.0, |s| s.timestep_hours),
            n_buildings: self.n_buildings(),
            horizon: self.horizon(),
            seed,
            scenarios: self
                .scenarios
                .iter()
                .map(|s| ManifestEntry {
                    probability: s.probability,
                    solar_year: s.solar_year.clone(),
                    provenance: s.provenance.clone(),
                })
                .collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: SetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let (n, b, t) = (manifest.scenarios.len(), manifest.n_buildings, manifest.horizon);
        let mut loads = vec![vec![vec![f64::NAN; t]; b]; n];
        let mut solar = vec![vec![f64::NAN; t]; n];
        let mut rdr = csv::Reader::from_path(dir.join("loads.csv"))?;
        for rec in rdr.deserialize() {
            let (m, i, k, v): (usize, usize, usize, f64) = rec?;
            *loads
                .get_mut(m)
                .and_then(|s| s.get_mut(i))
                .and_then(|l| l.get_mut(k))
                .ok_or_else(|| Error::Schema(format!("load row ({m}, {i}, {k}) out of range")))? = v;
        }
        let mut rdr = csv::Reader::from_path(dir.join("solar.csv"))?;
        for rec in rdr.deserialize() {
            let (m, k, v): (usize, usize, f64) = rec?;
            *solar
                .get_mut(m)
                .and_then(|s| s.get_mut(k))
                .ok_or_else(|| Error::Schema(format!("solar row ({m}, {k}) out of range")))? = v;
        }
        if loads
            .iter()
            .flatten()
            .flatten()
            .chain(solar.iter().flatten())
            .any(|v| v.is_nan())
        {
            return Err(Error::Schema(format!(
                "{}: scenario CSVs are incomplete",
                dir.display()
            )));
        }
        let scenarios = manifest
            .scenarios
            .into_iter()
            .zip(loads.into_iter().zip(solar))
            .map(|(e, (loads, solar))| Scenario {
                loads,
                solar,
                probability: e.probability,
                timestep_hours: manifest.timestep_hours,
                provenance: e.provenance,
                solar_year: e.solar_year,
            })
            .collect();
        Self::new(scenarios)
    }
}

#[derive(Serialize, Deserialize)]
struct SetManifest {
    schema_version: u32,
    timestep_hours: f64,
    n_buildings: usize,
    horizon: usize,
    seed: Option<u64>,
    scenarios: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    probability: f64,
    solar_year: String,
    provenance: Vec<BuildingLoadParams>,
}

/// Build one scenario (probability 1) from district parameters, drawing the
/// solar year uniformly.
pub fn assemble_one<R: Rng>(
    params: &[BuildingLoadParams],
    load_ds: &LoadDataset,
    solar_ds: &SolarDataset,
    rng: &mut R,
) -> Result<Scenario> {
    if solar_ds.horizon() != load_ds.horizon() {
        return Err(Error::Validation(format!(
            "load horizon {} differs from solar horizon {}",
            load_ds.horizon(),
            solar_ds.horizon()
        )));
    }
    let years = solar_ds.year_ids();
    let solar_year = years[rng.gen_range(0..years.len())].clone();
    let loads = params
        .iter()
        .map(|p| build_profile(p, load_ds).map(|lp| lp.energy))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        loads,
        solar: solar_ds.year(&solar_year).expect("drawn from keys").to_vec(),
        probability: 1.0,
        timestep_hours: load_ds.timestep_hours(),
        provenance: params.to_vec(),
        solar_year,
    })
}

/// One equiprobable scenario per parameter draw.
pub fn assemble_scenarios<R: Rng>(
    param_draws: &[Vec<BuildingLoadParams>],
    load_ds: &LoadDataset,
    solar_ds: &SolarDataset,
    rng: &mut R,
) -> Result<ScenarioSet> {
    let scenarios = param_draws
        .iter()
        .map(|p| assemble_one(p, load_ds, solar_ds, rng))
        .collect::<Result<Vec<_>>>()?;
    ScenarioSet::equiprobable(scenarios)
}

/// Summary statistics of aggregate district load, all in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub agg_mean: f64,
    pub agg_max: f64,
    pub agg_std: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.agg_mean, self.agg_max, self.agg_std]
    }
}

pub fn features(s: &Scenario) -> FeatureVector {
    let agg = s.aggregate_kw();
    let n = agg.len().max(1) as f64;
    let mean = agg.iter().sum::<f64>() / n;
    let max = agg.iter().copied().fold(0.0, f64::max);
    let var = agg.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    FeatureVector {
        agg_mean: mean,
        agg_max: max,
        agg_std: var.sqrt(),
    }
}

/// Z-score each feature column by its population statistics; columns with
/// zero spread are dropped.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let mut keep = Vec::new();
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            keep.push((j, mean, sd));
        }
    }
    rows.iter()
        .map(|r| keep.iter().map(|(j, m, s)| (r[*j] - m) / s).collect())
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Result of a Fast-Forward selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected input indices in the order they were picked.
    pub order: Vec<usize>,
    /// Redistributed probabilities, indexed like the input (zero if dropped).
    pub probabilities: Vec<f64>,
}

/// Greedy Fast-Forward selection of `k` points. Each step adds the candidate
/// that minimises `Σ_j p_j · min(dist to selected ∪ {candidate})` over the
/// still-unselected points; ties go to the lowest index. Dropped points pass
/// their probability to their nearest selected point.
pub fn fast_forward_select(points: &[Vec<f64>], probabilities: &[f64], k: usize) -> Result<Selection> {
    let n = points.len();
    if k < 1 || k > n {
        return Err(Error::Argument(format!("cannot select {k} of {n} scenarios")));
    }
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| euclidean(a, b)).collect())
        .collect();
    let mut selected = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for u in (0..n).filter(|u| !selected[*u]) {
            let score: f64 = (0..n)
                .filter(|j| !selected[*j] && *j != u)
                .map(|j| probabilities[j] * nearest[j].min(dist[j][u]))
                .sum();
            if best.is_none_or(|(_, s)| score < s) {
                best = Some((u, score));
            }
        }
        let (u, _) = best.expect("k <= n leaves a candidate");
        selected[u] = true;
        order.push(u);
        for j in 0..n {
            nearest[j] = nearest[j].min(dist[j][u]);
        }
    }
    let mut sorted = order.clone();
    sorted.sort_unstable();
    let mut probs = vec![0.0; n];
    for j in 0..n {
        let target = if selected[j] {
            j
        } else {
            *sorted
                .iter()
                .min_by(|a, b| dist[j][**a].total_cmp(&dist[j][**b]).then(a.cmp(b)))
                .expect("at least one selected")
        };
        probs[target] += probabilities[j];
    }
    Ok(Selection {
        order,
        probabilities: probs,
    })
}

/// Reduce a scenario set to `k` members by Fast-Forward selection on the
/// standardised aggregate-load features. Output keeps input order.
pub fn reduce_fast_forward(set: &ScenarioSet, k: usize) -> Result<ScenarioSet> {
    if k < 1 || k > set.len() {
        return Err(Error::Argument(format!("cannot reduce {} scenarios to {k}", set.len())));
    }
    if k == set.len() {
        return Ok(set.clone());
    }
    let rows: Vec<Vec<f64>> = set.scenarios.iter().map(|s| features(s).as_array().to_vec()).collect();
    let probs: Vec<f64> = set.scenarios.iter().map(|s| s.probability).collect();
    let sel = fast_forward_select(&standardize(&rows), &probs, k)?;
    let mut keep = sel.order.clone();
    keep.sort_unstable();
    let scenarios = keep
        .into_iter()
        .map(|i| Scenario {
            // Summation can overshoot 1 by an ulp when everything collapses.
            probability: sel.probabilities[i].min(1.0),
            ..set.scenarios[i].clone()
        })
        .collect();
    ScenarioSet::new(scenarios)
}
