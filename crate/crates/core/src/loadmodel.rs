//! Probabilistic model of uncertain building electrical load.
//!
//! A building's hourly load is described by four parameters: the profile
//! `type` (which measured building the shape comes from), the profile `year`
//! (shared by every building in a district), and the `mean` and `peak` power
//! the raw profile is rescaled to. Monitoring reveals the type exactly and
//! gives noisy readings of mean and peak; posteriors over the two scalar
//! parameters are tabulated on a 1-D grid and sampled by inverse CDF.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of nodes in every tabulated posterior.
pub const GRID_POINTS: usize = 1024;
/// Half-width of the mean-load grid in prior standard deviations.
pub const MEAN_GRID_SIGMAS: f64 = 6.0;
/// Joint (mean, peak) redraws allowed before a posterior is declared inconsistent.
pub const MAX_JOINT_REDRAWS: usize = 1000;
/// Evidence below this value means the reading cannot be explained by the prior.
pub const MIN_EVIDENCE: f64 = 1e-300;

const LOCAL_GRID_SDS: f64 = 12.0;

/// Hourly raw load profiles indexed by `(type_id, year_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadDataset {
    profiles: BTreeMap<(String, String), Vec<f64>>,
    type_ids: Vec<String>,
    year_ids: Vec<String>,
    timestep_hours: f64,
    horizon: usize,
}

impl LoadDataset {
    /// Build a dataset, checking the cross-product, non-negativity and
    /// `max > mean` invariants.
    pub fn new(profiles: BTreeMap<(String, String), Vec<f64>>, timestep_hours: f64) -> Result<Self> {
        if !(timestep_hours > 0.0) {
            return Err(Error::Validation(format!(
                "timestep must be positive, got {timestep_hours}"
            )));
        }
        let type_ids: BTreeSet<String> = profiles.keys().map(|(t, _)| t.clone()).collect();
        let year_ids: BTreeSet<String> = profiles.keys().map(|(_, y)| y.clone()).collect();
        if type_ids.is_empty() {
            return Err(Error::Schema("dataset has no profiles".into()));
        }
        for t in &type_ids {
            for y in &year_ids {
                if !profiles.contains_key(&(t.clone(), y.clone())) {
                    return Err(Error::Schema(format!("no profile for type `{t}`, year `{y}`")));
                }
            }
        }
        let horizon = profiles.values().next().map(Vec::len).unwrap_or(0);
        for ((t, y), p) in &profiles {
            if p.len() != horizon {
                return Err(Error::Schema(format!(
                    "profile ({t}, {y}) has {} entries, expected {horizon}",
                    p.len()
                )));
            }
            if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::Validation(format!("profile ({t}, {y}) has load {v} at t={i}")));
            }
            let (mean, max) = mean_max(p);
            if !(max > mean) {
                return Err(Error::DegenerateProfile(format!("({t}, {y})")));
            }
        }
        Ok(Self {
            profiles,
            type_ids: type_ids.into_iter().collect(),
            year_ids: year_ids.into_iter().collect(),
            timestep_hours,
            horizon,
        })
    }

    pub fn type_ids(&self) -> &[String] {
        &self.type_ids
    }

    pub fn year_ids(&self) -> &[String] {
        &self.year_ids
    }

    pub fn timestep_hours(&self) -> f64 {
        self.timestep_hours
    }

    /// Number of timesteps `T` in every profile.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn profile(&self, type_id: &str, year_id: &str) -> Option<&[f64]> {
        self.profiles
            .get(&(type_id.to_string(), year_id.to_string()))
            .map(Vec::as_slice)
    }

    pub fn profiles(&self) -> impl Iterator<Item = (&(String, String), &Vec<f64>)> {
        self.profiles.iter()
    }

    /// Write the dataset as `type_id,year_id,t,load_kwh` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["type_id", "year_id", "t", "load_kwh"])?;
        for ((ty, yr), p) in &self.profiles {
            for (t, v) in p.iter().enumerate() {
                w.write_record([ty.as_str(), yr.as_str(), &t.to_string(), &format_float(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_max(x: &[f64]) -> (f64, f64) {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, max)
}

pub(crate) fn format_float(v: f64) -> String {
    // Shortest round-trip representation keeps CSV output bit-stable.
    format!("{v:?}")
}

#[derive(Debug, Deserialize)]
struct LoadRow {
    type_id: String,
    year_id: String,
    t: usize,
    load_kwh: f64,
}

/// Read a dataset CSV with header `type_id,year_id,t,load_kwh`.
pub fn load_dataset(path: &Path, timestep_hours: f64) -> Result<LoadDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["type_id", "year_id", "t", "load_kwh"] {
        return Err(Error::Schema(format!(
            "{}: expected header type_id,year_id,t,load_kwh, found {:?}",
            path.display(),
            headers
        )));
    }
    let mut rows: BTreeMap<(String, String), BTreeMap<usize, f64>> = BTreeMap::new();
    for rec in rdr.deserialize() {
        let row: LoadRow = rec?;
        if row.load_kwh < 0.0 {
            return Err(Error::Validation(format!(
                "negative load {} for ({}, {}) at t={}",
                row.load_kwh, row.type_id, row.year_id, row.t
            )));
        }
        let series = rows.entry((row.type_id.clone(), row.year_id.clone())).or_default();
        if series.insert(row.t, row.load_kwh).is_some() {
            return Err(Error::Schema(format!(
                "duplicate row for ({}, {}) at t={}",
                row.type_id, row.year_id, row.t
            )));
        }
    }
    let mut profiles = BTreeMap::new();
    for (key, series) in rows {
        let n = series.len();
        if series.keys().enumerate().any(|(i, t)| i != *t) {
            return Err(Error::Schema(format!(
                "profile ({}, {}) does not cover t = 0..{n} contiguously",
                key.0, key.1
            )));
        }
        profiles.insert(key, series.into_values().collect());
    }
    LoadDataset::new(profiles, timestep_hours)
}

/// Generate a synthetic profile dataset with diurnal, weekly and seasonal
/// structure. Types differ in shape; years differ in weather-driven noise.
pub fn generate_synthetic_dataset(n_types: usize, n_years: usize, horizon: usize, seed: u64) -> Result<LoadDataset> {
    if n_types < 1 || n_years < 1 {
        return Err(Error::Argument(format!(
            "need at least one type and one year, got {n_types} types and {n_years} years"
        )));
    }
    if horizon < 24 {
        return Err(Error::Argument(format!(
            "horizon must be at least 24 hours, got {horizon}"
        )));
    }
    let mut profiles = BTreeMap::new();
    for k in 0..n_types {
        let mut shape_rng = rng::stream(seed, "synthetic-type", k as u64);
        let shape = BuildingShape::draw(&mut shape_rng);
        for y in 0..n_years {
            let mut year_rng = rng::stream(seed, &format!("synthetic-year-{k}"), y as u64);
            let weather = YearWeather::draw(&mut rng::stream(seed, "synthetic-weather", y as u64), horizon);
            let profile = shape.render(&weather, horizon, &mut year_rng);
            profiles.insert((type_id(k), year_id(y)), profile);
        }
    }
    LoadDataset::new(profiles, 1.0)
}

pub fn type_id(k: usize) -> String {
    format!("bldg{k:02}")
}

pub fn year_id(y: usize) -> String {
    format!("{}", 2012 + y)
}

struct BuildingShape {
    base: f64,
    occupied_peak_hour: f64,
    occupied_amp: f64,
    occupied_width: f64,
    weekend_factor: f64,
    heating_amp: f64,
    heating_morning: f64,
}

impl BuildingShape {
    fn draw<R: Rng>(r: &mut R) -> Self {
        Self {
            base: r.gen_range(60.0..120.0),
            occupied_peak_hour: r.gen_range(10.0..15.0),
            occupied_amp: r.gen_range(0.3..1.2),
            occupied_width: r.gen_range(2.5..4.5),
            weekend_factor: r.gen_range(0.45..0.9),
            heating_amp: r.gen_range(0.4..1.4),
            heating_morning: r.gen_range(0.3..0.8),
        }
    }

    fn render<R: Rng>(&self, weather: &YearWeather, horizon: usize, r: &mut R) -> Vec<f64> {
        let noise = Normal::new(0.0, 0.04).expect("valid sd");
        (0..horizon)
            .map(|t| {
                let hour = (t % 24) as f64;
                let day = t / 24;
                let weekend = day % 7 >= 5;
                let occ_bump = (-0.5 * ((hour - self.occupied_peak_hour) / self.occupied_width).powi(2)).exp();
                let occupancy = if weekend { self.weekend_factor } else { 1.0 } * (1.0 + self.occupied_amp * occ_bump);
                let heating_shape = self.heating_morning * (-0.5 * ((hour - 7.0) / 2.0).powi(2)).exp()
                    + (1.0 - self.heating_morning) * (-0.5 * ((hour - 18.0) / 3.0).powi(2)).exp()
                    + 0.35;
                let heating = self.heating_amp * weather.heating_degree[day] * heating_shape;
                let v = self.base * (occupancy + heating) * (1.0 + noise.sample(r));
                v.max(0.0)
            })
            .collect()
    }
}

/// Daily heating demand index for one weather year: a seasonal cycle peaking
/// in mid-January plus an AR(1) temperature anomaly.
struct YearWeather {
    heating_degree: Vec<f64>,
}

impl YearWeather {
    fn draw<R: Rng>(r: &mut R, horizon: usize) -> Self {
        let days = horizon.div_ceil(24);
        let shift = r.gen_range(-10.0..10.0);
        let level = r.gen_range(0.85..1.15);
        let shock = Normal::new(0.0, 0.12).expect("valid sd");
        let mut anomaly: f64 = 0.0;
        let heating_degree = (0..days)
            .map(|d| {
                anomaly = 0.8 * anomaly + shock.sample(r);
                let season = 0.5 * (1.0 + (2.0 * PI * (d as f64 - 15.0 - shift) / 365.0).cos());
                (level * season + anomaly).max(0.0)
            })
            .collect();
        Self { heating_degree }
    }
}

/// Prior over the load parameters of one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub type_ids: Vec<String>,
    pub year_ids: Vec<String>,
    pub mean_mu: f64,
    pub mean_sigma: f64,
    pub peak_min: f64,
    pub peak_max: f64,
}

impl PriorSpec {
    /// Mean ~ N(100, 25) kW, peak ~ U(200, 400) kW over the given categories.
    pub fn with_ids(type_ids: Vec<String>, year_ids: Vec<String>) -> Self {
        Self {
            type_ids,
            year_ids,
            mean_mu: 100.0,
            mean_sigma: 25.0,
            peak_min: 200.0,
            peak_max: 400.0,
        }
    }

    pub fn for_dataset(ds: &LoadDataset) -> Self {
        Self::with_ids(ds.type_ids().to_vec(), ds.year_ids().to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.type_ids.is_empty() || self.year_ids.is_empty() {
            return Err(Error::Validation("prior needs at least one type and one year".into()));
        }
        if !(self.mean_sigma > 0.0) || !self.mean_mu.is_finite() {
            return Err(Error::Validation(format!(
                "prior mean needs sigma > 0, got N({}, {})",
                self.mean_mu, self.mean_sigma
            )));
        }
        if !(self.peak_min > 0.0 && self.peak_max > self.peak_min) || !self.peak_max.is_finite() {
            return Err(Error::Validation(format!(
                "prior peak needs 0 < min < max, got U({}, {})",
                self.peak_min, self.peak_max
            )));
        }
        Ok(())
    }

    /// Check every category against a dataset.
    pub fn validate_against(&self, ds: &LoadDataset) -> Result<()> {
        self.validate()?;
        for t in &self.type_ids {
            for y in &self.year_ids {
                if ds.profile(t, y).is_none() {
                    return Err(Error::Lookup(format!("prior references ({t}, {y})")));
                }
            }
        }
        Ok(())
    }

    fn mean_support(&self) -> (f64, f64) {
        let hi = self.mean_mu + MEAN_GRID_SIGMAS * self.mean_sigma;
        let lo = (self.mean_mu - MEAN_GRID_SIGMAS * self.mean_sigma).max(hi * 1e-9);
        (lo, hi)
    }
}

/// Gaussian measurement noise `z | θ ~ N(θ, ε·θ)`, `ε·θ` a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementModel {
    pub eps_mean: f64,
    pub eps_peak: f64,
    pub type_observed: bool,
    pub year_observed: bool,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self {
            eps_mean: 0.1,
            eps_peak: 0.075,
            type_observed: true,
            year_observed: false,
        }
    }
}

impl MeasurementModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_mean >= 0.0 && self.eps_peak >= 0.0) {
            return Err(Error::Validation(format!(
                "measurement errors must be non-negative, got eps_mean={}, eps_peak={}",
                self.eps_mean, self.eps_peak
            )));
        }
        Ok(())
    }
}

/// One building's load parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingLoadParams {
    pub type_id: String,
    pub year_id: String,
    pub mean_kw: f64,
    pub peak_kw: f64,
}

impl BuildingLoadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_kw > 0.0 && self.peak_kw > self.mean_kw) {
            return Err(Error::Validation(format!(
                "load parameters need 0 < mean < peak, got mean={}, peak={}",
                self.mean_kw, self.peak_kw
            )));
        }
        Ok(())
    }
}

/// A monitoring reading for one building. Components left as `None` were not
/// observed and leave the corresponding prior untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub observed_type: Option<String>,
    pub observed_year: Option<String>,
    pub z_mean: Option<f64>,
    pub z_peak: Option<f64>,
}

impl Measurement {
    /// A reading that observes nothing.
    pub fn empty() -> Self {
        Self {
            observed_type: None,
            observed_year: None,
            z_mean: None,
            z_peak: None,
        }
    }

    /// Keep only the selected components.
    pub fn restrict(&self, keep_type: bool, keep_mean: bool, keep_peak: bool) -> Self {
        Self {
            observed_type: self.observed_type.clone().filter(|_| keep_type),
            observed_year: self.observed_year.clone(),
            z_mean: self.z_mean.filter(|_| keep_mean),
            z_peak: self.z_peak.filter(|_| keep_peak),
        }
    }
}

fn draw_positive<R: Rng>(truth: f64, eps: f64, rng: &mut R) -> f64 {
    if eps == 0.0 {
        return truth;
    }
    let noise = Normal::new(truth, eps * truth).expect("finite sd");
    loop {
        let z = noise.sample(rng);
        if z > 0.0 {
            return z;
        }
    }
}

/// Draw a hypothetical monitoring reading for a building with known truth.
pub fn sample_measurement<R: Rng>(truth: &BuildingLoadParams, model: &MeasurementModel, rng: &mut R) -> Measurement {
    let z_mean = draw_positive(truth.mean_kw, model.eps_mean, rng);
    let z_peak = draw_positive(truth.peak_kw, model.eps_peak, rng);
    Measurement {
        observed_type: model.type_observed.then(|| truth.type_id.clone()),
        observed_year: model.year_observed.then(|| truth.year_id.clone()),
        z_mean: Some(z_mean),
        z_peak: Some(z_peak),
    }
}

/// Sample parameters for a district of `n_buildings` from the prior. The year
/// is drawn once and shared; the mean is redrawn until it lies in `(0, peak)`.
pub fn sample_district_params<R: Rng>(
    prior: &PriorSpec,
    n_buildings: usize,
    rng: &mut R,
) -> Result<Vec<BuildingLoadParams>> {
    if n_buildings < 1 {
        return Err(Error::Argument("a district needs at least one building".into()));
    }
    prior.validate()?;
    let year_id = prior.year_ids[rng.gen_range(0..prior.year_ids.len())].clone();
    let mean = Normal::new(prior.mean_mu, prior.mean_sigma).expect("validated sigma");
    let mut out = Vec::with_capacity(n_buildings);
    for _ in 0..n_buildings {
        let type_id = prior.type_ids[rng.gen_range(0..prior.type_ids.len())].clone();
        let peak_kw = rng.gen_range(prior.peak_min..prior.peak_max);
        let mean_kw = loop {
            let m = mean.sample(rng);
            if m > 0.0 && m < peak_kw {
                break m;
            }
        };
        out.push(BuildingLoadParams {
            type_id,
            year_id: year_id.clone(),
            mean_kw,
            peak_kw,
        });
    }
    Ok(out)
}

/// Distribution over a categorical parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Categorical {
    Known(String),
    Uniform(Vec<String>),
}

impl Categorical {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> String {
        match self {
            Categorical::Known(id) => id.clone(),
            Categorical::Uniform(ids) => ids[rng.gen_range(0..ids.len())].clone(),
        }
    }
}

/// A density tabulated on a uniform grid, treated as piecewise linear between
/// nodes. The trapezoid rule integrates it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPdf {
    lo: f64,
    hi: f64,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedPdf {
    /// Normalize `log_density` values given at `n` uniform nodes on `[lo, hi]`.
    /// Returns the density and the log of its normalizing constant.
    pub fn from_log_density(lo: f64, hi: f64, log_density: &[f64]) -> Option<(Self, f64)> {
        let n = log_density.len();
        assert!(n >= 2 && hi > lo, "grid needs two nodes and positive width");
        let h = (hi - lo) / (n - 1) as f64;
        let peak = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return None;
        }
        let mut pdf: Vec<f64> = log_density.iter().map(|l| (l - peak).exp()).collect();
        let mass = trapezoid(&pdf, h);
        if !(mass > 0.0) {
            return None;
        }
        pdf.iter_mut().for_each(|p| *p /= mass);
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in pdf.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        Some((Self { lo, hi, pdf, cdf }, peak + mass.ln()))
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.pdf.len() - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = self.step();
        self.pdf
            .iter()
            .enumerate()
            .map(move |(i, p)| (self.lo + i as f64 * h, *p))
    }

    /// Trapezoid-rule integral of the tabulated values.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.pdf, self.step())
    }

    /// Mean and variance of the piecewise-linear density.
    pub fn moments(&self) -> (f64, f64) {
        let h = self.step();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (j, w) in self.pdf.windows(2).enumerate() {
            let a = self.lo + j as f64 * h;
            let (p0, p1) = (w[0], w[1]);
            // Exact moments of a linear density on [a, a + h].
            let (u1, u2) = (h * h / 6.0 * (p0 + 2.0 * p1), h * h * h / 12.0 * (p0 + 3.0 * p1));
            let mass = 0.5 * h * (p0 + p1);
            m1 += a * mass + u1;
            m2 += a * a * mass + 2.0 * a * u1 + u2;
        }
        (m1, (m2 - m1 * m1).max(0.0))
    }

    /// Inverse CDF of the piecewise-linear density.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = *self.cdf.last().expect("non-empty");
        let target = (u * total).clamp(0.0, total);
        let j = match self.cdf.binary_search_by(|c| c.total_cmp(&target)) {
            Ok(j) => return self.lo + j as f64 * self.step(),
            Err(j) => j.saturating_sub(1).min(self.pdf.len() - 2),
        };
        let h = self.step();
        let (p0, p1) = (self.pdf[j], self.pdf[j + 1]);
        let need = target - self.cdf[j];
        // Solve p0·x + (p1 - p0)·x²/(2h) = need for x in [0, h].
        let slope = (p1 - p0) / h;
        let x = if slope.abs() < 1e-14 * p0.abs().max(1e-300) {
            if p0 > 0.0 {
                need / p0
            } else {
                0.0
            }
        } else {
            let disc = (p0 * p0 + 2.0 * slope * need).max(0.0);
            // Numerically stable root of the quadratic.
            2.0 * need / (p0 + disc.sqrt())
        };
        self.lo + j as f64 * h + x.clamp(0.0, h)
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[values.len() - 1]))
}

/// Distribution over a scalar load parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarDensity {
    /// Untruncated Gaussian prior; positivity and `mean < peak` are imposed
    /// when sampling.
    Normal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Tabulated(TabulatedPdf),
    PointMass(f64),
}

impl ScalarDensity {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarDensity::Normal { mu, sigma } => Normal::new(*mu, *sigma).expect("positive sd").sample(rng),
            ScalarDensity::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            ScalarDensity::Tabulated(t) => t.quantile(rng.gen::<f64>()),
            ScalarDensity::PointMass(x) => *x,
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments().0
    }

    pub fn moments(&self) -> (f64, f64) {
        match self {
            ScalarDensity::Normal { mu, sigma } => (*mu, sigma * sigma),
            ScalarDensity::Uniform { lo, hi } => (0.5 * (lo + hi), (hi - lo).powi(2) / 12.0),
            ScalarDensity::Tabulated(t) => t.moments(),
            ScalarDensity::PointMass(x) => (*x, 0.0),
        }
    }

    pub fn as_tabulated(&self) -> Option<&TabulatedPdf> {
        match self {
            ScalarDensity::Tabulated(t) => Some(t),
            _ => None,
        }
    }
}

/// Posterior over one building's parameters. The year lives at district level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingPosterior {
    pub type_dist: Categorical,
    pub mean: ScalarDensity,
    pub peak: ScalarDensity,
    pub observed_year: Option<String>,
}

fn log_normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let r = (x - mu) / sd;
    -0.5 * r * r - sd.ln() - 0.5 * (2.0 * PI).ln()
}

/// Grid posterior for a scalar with log-prior `log_prior` on `[lo, hi]` after
/// observing `z ~ N(θ, eps·θ)`.
fn grid_posterior(
    parameter: &str,
    lo: f64,
    hi: f64,
    z: f64,
    eps: f64,
    log_prior: impl Fn(f64) -> f64,
) -> Result<ScalarDensity> {
    if !(z > 0.0) {
        return Err(Error::inference(
            parameter,
            format!("reading must be positive, got {z}"),
        ));
    }
    if eps == 0.0 {
        if z < lo || z > hi {
            return Err(Error::inference(
                parameter,
                format!("exact reading {z} lies outside prior support [{lo}, {hi}]"),
            ));
        }
        return Ok(ScalarDensity::PointMass(z));
    }
    let spread = eps * z;
    let global_step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let (mut a, mut b) = (lo, hi);
    if spread < 2.0 * global_step {
        // The likelihood is narrower than the grid; zoom in around the reading.
        let (la, lb) = (
            (z - LOCAL_GRID_SDS * spread).max(lo),
            (z + LOCAL_GRID_SDS * spread).min(hi),
        );
        if lb > la {
            (a, b) = (la, lb);
        }
    }
    let h = (b - a) / (GRID_POINTS - 1) as f64;
    let log_post: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            let theta = a + i as f64 * h;
            log_prior(theta) + log_normal_pdf(z, theta, eps * theta)
        })
        .collect();
    let (pdf, log_evidence) = TabulatedPdf::from_log_density(a, b, &log_post)
        .ok_or_else(|| Error::inference(parameter, format!("reading {z} has zero likelihood on the grid")))?;
    if log_evidence < MIN_EVIDENCE.ln() {
        return Err(Error::inference(
            parameter,
            format!("reading {z} is inconsistent with the prior (log evidence {log_evidence:.1})"),
        ));
    }
    Ok(ScalarDensity::Tabulated(pdf))
}

/// Update one building's prior with a monitoring reading. Unobserved
/// components keep their prior.
pub fn posterior_update(prior: &PriorSpec, msmt: &Measurement, model: &MeasurementModel) -> Result<BuildingPosterior> {
    let type_dist = match &msmt.observed_type {
        Some(t) => {
            if !prior.type_ids.contains(t) {
                return Err(Error::inference(
                    "type",
                    format!("observed type `{t}` has zero prior mass"),
                ));
            }
            Categorical::Known(t.clone())
        }
        None => Categorical::Uniform(prior.type_ids.clone()),
    };
    let mean = match msmt.z_mean {
        Some(z) => {
            let (lo, hi) = prior.mean_support();
            let (mu, sigma) = (prior.mean_mu, prior.mean_sigma);
            grid_posterior("mean", lo, hi, z, model.eps_mean, |th| log_normal_pdf(th, mu, sigma))?
        }
        None => ScalarDensity::Normal {
            mu: prior.mean_mu,
            sigma: prior.mean_sigma,
        },
    };
    let peak = match msmt.z_peak {
        Some(z) => {
            let width = prior.peak_max - prior.peak_min;
            grid_posterior("peak", prior.peak_min, prior.peak_max, z, model.eps_peak, |_| {
                -width.ln()
            })?
        }
        None => ScalarDensity::Uniform {
            lo: prior.peak_min,
            hi: prior.peak_max,
        },
    };
    Ok(BuildingPosterior {
        type_dist,
        mean,
        peak,
        observed_year: msmt.observed_year.clone(),
    })
}

/// Posterior over a whole district.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictPosterior {
    pub year: Categorical,
    pub buildings: Vec<BuildingPosterior>,
}

impl DistrictPosterior {
    pub fn new(prior: &PriorSpec, buildings: Vec<BuildingPosterior>) -> Self {
        let year = match buildings.iter().find_map(|b| b.observed_year.clone()) {
            Some(y) => Categorical::Known(y),
            None => Categorical::Uniform(prior.year_ids.clone()),
        };
        Self { year, buildings }
    }

    /// The posterior of a district nobody has measured.
    pub fn from_prior(prior: &PriorSpec, n_buildings: usize) -> Result<Self> {
        let empty = Measurement::empty();
        let buildings = (0..n_buildings)
            .map(|_| posterior_update(prior, &empty, &MeasurementModel::default()))
            .collect::<Result<_>>()?;
        Ok(Self::new(prior, buildings))
    }

    /// Posterior mean of each building's mean load.
    pub fn mean_loads(&self) -> Vec<f64> {
        self.buildings.iter().map(|b| b.mean.mean()).collect()
    }
}

/// Draw district parameters from a posterior. The shared year is drawn once;
/// each building's (mean, peak) pair is redrawn jointly until `0 < mean < peak`.
pub fn sample_posterior_params<R: Rng>(post: &DistrictPosterior, rng: &mut R) -> Result<Vec<BuildingLoadParams>> {
    if post.buildings.is_empty() {
        return Err(Error::Argument("posterior has no buildings".into()));
    }
    let year_id = post.year.sample(rng);
    post.buildings
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let type_id = b.type_dist.sample(rng);
            for _ in 0..MAX_JOINT_REDRAWS {
                let peak_kw = b.peak.sample(rng);
                let mean_kw = b.mean.sample(rng);
                if mean_kw > 0.0 && peak_kw > mean_kw {
                    return Ok(BuildingLoadParams {
                        type_id,
                        year_id: year_id.clone(),
                        mean_kw,
                        peak_kw,
                    });
                }
            }
            Err(Error::inference(
                "mean/peak",
                format!("building {i}: no draw with 0 < mean < peak in {MAX_JOINT_REDRAWS} attempts"),
            ))
        })
        .collect()
}

/// An hourly load profile in kWh per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub energy: Vec<f64>,
    /// Steps where the affine rescale went negative and was clamped to zero.
    pub clamped: usize,
}

/// Rescale the raw `(type, year)` profile so its mean and maximum power hit
/// the sampled `mean_kw` and `peak_kw`.
pub fn build_profile(params: &BuildingLoadParams, ds: &LoadDataset) -> Result<LoadProfile> {
    let raw = ds
        .profile(&params.type_id, &params.year_id)
        .ok_or_else(|| Error::Lookup(format!("({}, {})", params.type_id, params.year_id)))?;
    let dt = ds.timestep_hours();
    let (mean, max) = mean_max(raw);
    if !(max > mean) {
        return Err(Error::DegenerateProfile(format!(
            "({}, {})",
            params.type_id, params.year_id
        )));
    }
    let scale = (params.peak_kw * dt - params.mean_kw * dt) / (max - mean);
    let offset = params.mean_kw * dt - scale * mean;
    let mut clamped = 0;
    let energy = raw
        .iter()
        .map(|x| {
            let y = offset + scale * x;
            if y < 0.0 {
                clamped += 1;
                0.0
            } else {
                y
            }
        })
        .collect();
    Ok(LoadProfile { energy, clamped })
}
