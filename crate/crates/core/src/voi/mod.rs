//! On-policy value of information for load monitoring.
//!
//! The policy is fixed: sample scenarios from a load distribution, reduce them
//! with Fast-Forward, size the system with the sizing LP. Each resulting
//! design is then scored by receding-horizon simulation over fresh samples
//! of the same distribution. Comparing the prior design with designs made
//! after hypothetical measurements gives the expected value of imperfect
//! information.
//!
//! Random streams: design scenarios for the prior come from `prior-design`,
//! those for measurement `m` from `posterior-design/m`, the true parameters
//! and readings from `truth/m`, and evaluation sample `j` of every leg from
//! `evaluate/j`. Sharing `evaluate/j` between legs gives common random numbers.

pub mod exact;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designopt::{build_and_solve, DesignSolution, SystemDesign, SystemParams};
use crate::error::{Error, Result};
use crate::loadmodel::{
    posterior_update, sample_measurement, sample_posterior_params, BuildingLoadParams, DistrictPosterior, LoadDataset,
    Measurement, MeasurementModel, PriorSpec,
};
use crate::rng::{stream, StreamRng};
use crate::scenario::{assemble_one, reduce_fast_forward, Scenario, ScenarioSet, SolarDataset};
use crate::simulator::{evaluate_expected_cost, simulate, CostEvaluation, MpcParams};
use crate::stats::{self, convergence_trace, ConvergenceTrace, DistributionSummary};

pub const SCHEMA_VERSION: u32 = 1;

pub const STREAM_PRIOR_DESIGN: &str = "prior-design";
pub const STREAM_POSTERIOR_DESIGN: &str = "posterior-design";
pub const STREAM_TRUTH: &str = "truth";
pub const STREAM_EVALUATE: &str = "evaluate";

/// Which parameter groups a measurement informs. Unmeasured groups keep
/// their prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncertaintyMask {
    pub reduce_type: bool,
    pub reduce_mean: bool,
    pub reduce_peak: bool,
}

impl UncertaintyMask {
    pub const NONE: Self = Self::new(false, false, false);
    pub const TYPE: Self = Self::new(true, false, false);
    pub const MEAN: Self = Self::new(false, true, false);
    pub const PEAK: Self = Self::new(false, false, true);
    pub const ALL: Self = Self::new(true, true, true);

    pub const fn new(reduce_type: bool, reduce_mean: bool, reduce_peak: bool) -> Self {
        Self {
            reduce_type,
            reduce_mean,
            reduce_peak,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::NONE),
            "type" => Ok(Self::TYPE),
            "mean" => Ok(Self::MEAN),
            "peak" => Ok(Self::PEAK),
            "all" => Ok(Self::ALL),
            other => Err(Error::Argument(format!(
                "unknown mask `{other}` (expected none, type, mean, peak or all)"
            ))),
        }
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.reduce_type, "type"),
            (self.reduce_mean, "mean"),
            (self.reduce_peak, "peak"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        match parts.len() {
            0 => "none".into(),
            3 => "all".into(),
            _ => parts.join("+"),
        }
    }

    pub fn apply(&self, m: &Measurement) -> Measurement {
        m.restrict(self.reduce_type, self.reduce_mean, self.reduce_peak)
    }
}

impl Default for UncertaintyMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// Sample counts of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_buildings: usize,
    /// Scenarios drawn from a distribution before reduction, for each design.
    pub n_prior: usize,
    /// Evaluation samples simulated per design.
    pub n_posterior: usize,
    pub n_measurements: usize,
    /// Scenarios kept by Fast-Forward reduction.
    pub k_reduced: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_buildings: 5,
            n_prior: 1000,
            n_posterior: 256,
            n_measurements: 256,
            k_reduced: 10,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_buildings", self.n_buildings),
            ("n_prior", self.n_prior),
            ("n_posterior", self.n_posterior),
            ("n_measurements", self.n_measurements),
            ("k_reduced", self.k_reduced),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be at least 1")));
        }
        if self.k_reduced > self.n_prior {
            return Err(Error::Validation(format!(
                "k_reduced {} exceeds n_prior {}",
                self.k_reduced, self.n_prior
            )));
        }
        Ok(())
    }
}

/// Everything a run needs, validated and immutable.
#[derive(Debug, Clone)]
pub struct Study {
    pub loads: LoadDataset,
    pub solar: SolarDataset,
    pub prior: PriorSpec,
    pub measurement: MeasurementModel,
    pub system: SystemParams,
    pub mpc: MpcParams,
    pub sampling: SamplingConfig,
    pub seed: u64,
}

impl Study {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate_against(&self.loads)?;
        self.measurement.validate()?;
        self.mpc.validate()?;
        self.sampling.validate()?;
        if self.solar.horizon() != self.loads.horizon() {
            return Err(Error::Validation(format!(
                "solar horizon {} differs from load horizon {}",
                self.solar.horizon(),
                self.loads.horizon()
            )));
        }
        if self.system.timestep_hours != self.loads.timestep_hours() {
            return Err(Error::Validation("system and dataset timesteps differ".into()));
        }
        self.system.validate(self.loads.horizon())
    }

    pub fn prior_distribution(&self) -> Result<DistrictPosterior> {
        DistrictPosterior::from_prior(&self.prior, self.sampling.n_buildings)
    }

    fn draw_scenario(&self, dist: &DistrictPosterior, rng: &mut StreamRng) -> Result<Scenario> {
        let params = sample_posterior_params(dist, rng)?;
        assemble_one(&params, &self.loads, &self.solar, rng)
    }

    /// Evaluation scenario `j` of a distribution.
    pub fn evaluation_scenario(&self, dist: &DistrictPosterior, j: usize) -> Result<Scenario> {
        self.draw_scenario(dist, &mut stream(self.seed, STREAM_EVALUATE, j as u64))
    }

    /// `n_prior` equiprobable draws reduced to `k_reduced`.
    pub fn design_scenarios(&self, dist: &DistrictPosterior, label: &str, index: u64) -> Result<ScenarioSet> {
        let mut rng = stream(self.seed, label, index);
        let scenarios = (0..self.sampling.n_prior)
            .map(|_| self.draw_scenario(dist, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        reduce_fast_forward(&ScenarioSet::equiprobable(scenarios)?, self.sampling.k_reduced)
    }

    /// The policy: reduce, then solve the sizing LP.
    pub fn design(&self, dist: &DistrictPosterior, label: &str, index: u64) -> Result<DesignSolution> {
        let set = self.design_scenarios(dist, label, index)?;
        build_and_solve(&set, &self.system)
    }

    /// Simulate a design over the evaluation samples of a distribution.
    pub fn evaluate(&self, design: &SystemDesign, dist: &DistrictPosterior) -> Result<CostEvaluation> {
        evaluate_expected_cost(
            design,
            |j| self.evaluation_scenario(dist, j),
            self.sampling.n_posterior,
            &self.system,
            &self.mpc,
        )
    }

    /// A copy with a different measurement model.
    pub fn with_measurement(&self, measurement: MeasurementModel) -> Self {
        Self {
            measurement,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorLeg {
    pub design: SystemDesign,
    /// Sizing LP objective over the reduced prior scenarios.
    pub sp_objective: f64,
    pub costs: DistributionSummary,
    pub simultaneous_flow_steps: usize,
    pub max_conservation_residual: f64,
}

impl PriorLeg {
    pub fn expected_cost(&self) -> f64 {
        self.costs.mean
    }
}

pub fn prior_leg(study: &Study) -> Result<PriorLeg> {
    let dist = study.prior_distribution()?;
    let sol = study.design(&dist, STREAM_PRIOR_DESIGN, 0)?;
    let eval = study.evaluate(&sol.design, &dist)?;
    log::info!(
        "prior design: battery {:.1} kWh, solar {:.1} kWp, grid {:.1} kW, expected cost {:.0}",
        sol.design.total_battery(),
        sol.design.total_solar(),
        sol.design.grid_kw,
        eval.summary.mean
    );
    Ok(PriorLeg {
        design: sol.design,
        sp_objective: sol.objective_gbp,
        costs: eval.summary,
        simultaneous_flow_steps: sol.simultaneous_flow_steps,
        max_conservation_residual: eval.max_conservation_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub index: usize,
    pub truth: Vec<BuildingLoadParams>,
    /// Readings as seen after masking, one per building.
    pub measurement: Vec<Measurement>,
    /// Sum over buildings of the posterior mean of the mean load, kW.
    pub posterior_mean_load_kw: f64,
    pub posterior_design: SystemDesign,
    pub posterior_expected_cost: f64,
    pub posterior_cost_std: f64,
    pub posterior_cost_range: f64,
    pub posterior_standard_error: Option<f64>,
    pub sp_objective: f64,
    pub cost_samples: Vec<f64>,
    pub simultaneous_flow_steps: usize,
    pub max_conservation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreposteriorLeg {
    pub expected_cost: f64,
    /// Spread of the per-measurement means over `√n`.
    pub standard_error: Option<f64>,
    pub records: Vec<MeasurementRecord>,
    pub failures: Vec<MeasurementFailure>,
}

impl PreposteriorLeg {
    pub fn failure_fraction(&self) -> f64 {
        let n = self.records.len() + self.failures.len();
        if n == 0 {
            0.0
        } else {
            self.failures.len() as f64 / n as f64
        }
    }
}

/// Draw the true district and the masked readings for measurement `m`.
pub fn hypothesise_measurement(
    study: &Study,
    prior: &DistrictPosterior,
    mask: UncertaintyMask,
    m: usize,
) -> Result<(Vec<BuildingLoadParams>, Vec<Measurement>)> {
    let mut rng = stream(study.seed, STREAM_TRUTH, m as u64);
    let truth = sample_posterior_params(prior, &mut rng)?;
    let readings = truth
        .iter()
        .map(|t| mask.apply(&sample_measurement(t, &study.measurement, &mut rng)))
        .collect();
    Ok((truth, readings))
}

/// District posterior after per-building readings.
pub fn posterior_from_readings(study: &Study, readings: &[Measurement]) -> Result<DistrictPosterior> {
    let buildings = readings
        .iter()
        .map(|z| posterior_update(&study.prior, z, &study.measurement))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistrictPosterior::new(&study.prior, buildings))
}

fn run_measurement(
    study: &Study,
    prior: &DistrictPosterior,
    mask: UncertaintyMask,
    m: usize,
) -> Result<MeasurementRecord> {
    let (truth, measurement) = hypothesise_measurement(study, prior, mask, m)?;
    let post = posterior_from_readings(study, &measurement)?;
    let sol = study.design(&post, STREAM_POSTERIOR_DESIGN, m as u64)?;
    let eval = study.evaluate(&sol.design, &post)?;
    let s = eval.summary;
    Ok(MeasurementRecord {
        index: m,
        truth,
        measurement,
        posterior_mean_load_kw: post.mean_loads().iter().sum(),
        posterior_design: sol.design,
        posterior_expected_cost: s.mean,
        posterior_cost_std: s.std,
        posterior_cost_range: s.range(),
        posterior_standard_error: s.standard_error,
        sp_objective: sol.objective_gbp,
        cost_samples: s.samples,
        simultaneous_flow_steps: sol.simultaneous_flow_steps,
        max_conservation_residual: eval.max_conservation_residual,
    })
}

/// Measurements are independent; failures are recorded and the rest go on.
pub fn preposterior_leg(study: &Study, n_measurements: usize, mask: UncertaintyMask) -> Result<PreposteriorLeg> {
    if n_measurements == 0 {
        return Err(Error::Argument("need at least one measurement".into()));
    }
    let prior = study.prior_distribution()?;
    let outcomes: Vec<(usize, Result<MeasurementRecord>)> = (0..n_measurements)
        .into_par_iter()
        .map(|m| {
            let r = run_measurement(study, &prior, mask, m);
            match &r {
                Ok(rec) => log::info!("measurement {m}: expected cost {:.0}", rec.posterior_expected_cost),
                Err(e) => log::warn!("measurement {m} failed: {e}"),
            }
            (m, r)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (m, r) in outcomes {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(MeasurementFailure {
                index: m,
                error: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::PartialFailure {
            failed: failures.len(),
            total: n_measurements,
            first: failures[0].error.clone(),
        });
    }
    let means: Vec<f64> = records.iter().map(|r| r.posterior_expected_cost).collect();
    Ok(PreposteriorLeg {
        expected_cost: stats::mean(&means),
        standard_error: stats::standard_error(&means),
        records,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evii {
    pub evii: f64,
    pub evii_raw: f64,
    pub evii_pct: f64,
}

/// Value is a cost reduction, clipped at zero; the raw difference is kept.
pub fn compute_evii(prior_cost: f64, preposterior_cost: f64) -> Evii {
    let evii_raw = prior_cost - preposterior_cost;
    let evii = evii_raw.max(0.0);
    Evii {
        evii,
        evii_raw,
        evii_pct: if prior_cost != 0.0 {
            evii / prior_cost * 100.0
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpErrorReport {
    /// `(simulated − sp)/simulated·100` per record; positive means the LP
    /// under-estimates.
    pub errors_pct: Vec<f64>,
    pub mean_error_pct: f64,
    pub mean_abs_error_pct: f64,
}

pub fn sp_error_from_pairs(pairs: &[(f64, f64)]) -> SpErrorReport {
    let errors_pct: Vec<f64> = pairs
        .iter()
        .map(|(sp, sim)| if *sim != 0.0 { (sim - sp) / sim * 100.0 } else { 0.0 })
        .collect();
    let abs: Vec<f64> = errors_pct.iter().map(|e| e.abs()).collect();
    SpErrorReport {
        mean_error_pct: if errors_pct.is_empty() {
            0.0
        } else {
            stats::mean(&errors_pct)
        },
        mean_abs_error_pct: if abs.is_empty() { 0.0 } else { stats::mean(&abs) },
        errors_pct,
    }
}

pub fn sp_error_report(records: &[MeasurementRecord]) -> SpErrorReport {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.sp_objective, r.posterior_expected_cost))
        .collect();
    sp_error_from_pairs(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            min: stats::quantile(xs, 0.0),
            q25: stats::quantile(xs, 0.25),
            median: stats::quantile(xs, 0.5),
            q75: stats::quantile(xs, 0.75),
            max: stats::quantile(xs, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub std_ratios: Vec<f64>,
    pub range_ratios: Vec<f64>,
    pub std_ratio_quantiles: Quantiles,
    pub range_ratio_quantiles: Quantiles,
}

fn ratio(post: f64, prior: f64) -> f64 {
    if prior > 0.0 {
        post / prior
    } else if post == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Spread of each posterior cost distribution relative to the prior one.
pub fn risk_report(prior: &DistributionSummary, records: &[MeasurementRecord]) -> Result<RiskReport> {
    if records.is_empty() {
        return Err(Error::Argument("risk report needs at least one record".into()));
    }
    let std_ratios: Vec<f64> = records.iter().map(|r| ratio(r.posterior_cost_std, prior.std)).collect();
    let range_ratios: Vec<f64> = records
        .iter()
        .map(|r| ratio(r.posterior_cost_range, prior.range()))
        .collect();
    Ok(RiskReport {
        std_ratio_quantiles: Quantiles::of(&std_ratios),
        range_ratio_quantiles: Quantiles::of(&range_ratios),
        std_ratios,
        range_ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Over prior evaluation samples.
    pub prior: ConvergenceTrace,
    /// Over per-measurement posterior expected costs.
    pub preposterior: ConvergenceTrace,
    /// Over per-measurement value samples `prior − posterior`.
    pub voi: ConvergenceTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiResult {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub mask: UncertaintyMask,
    pub mask_label: String,
    /// Evaluation samples are shared by index between legs.
    pub common_random_numbers: bool,
    pub round_trip_efficiency: f64,
    pub prior: PriorLeg,
    pub prior_expected_cost: f64,
    pub preposterior_expected_cost: f64,
    pub prior_standard_error: Option<f64>,
    pub preposterior_standard_error: Option<f64>,
    /// `√(SE_prior² + SE_preposterior²)`.
    pub combined_standard_error: f64,
    pub evii: f64,
    pub evii_raw: f64,
    pub evii_pct: f64,
    pub n_measurements: usize,
    pub failed_measurements: usize,
    pub records: Vec<MeasurementRecord>,
    pub failures: Vec<MeasurementFailure>,
    pub sp_error: SpErrorReport,
    pub risk: RiskReport,
    pub convergence: Convergence,
}

impl VoiResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Combine the two legs into a result.
pub fn assemble_result(
    study: &Study,
    config_hash: &str,
    mask: UncertaintyMask,
    prior: PriorLeg,
    post: PreposteriorLeg,
) -> Result<VoiResult> {
    let e = compute_evii(prior.expected_cost(), post.expected_cost);
    let se_prior = prior.costs.standard_error;
    let combined = (se_prior.unwrap_or(0.0).powi(2) + post.standard_error.unwrap_or(0.0).powi(2)).sqrt();
    let post_means: Vec<f64> = post.records.iter().map(|r| r.posterior_expected_cost).collect();
    let voi_samples: Vec<f64> = post_means.iter().map(|c| prior.expected_cost() - c).collect();
    let convergence = Convergence {
        prior: convergence_trace(&prior.costs.samples),
        preposterior: convergence_trace(&post_means),
        voi: convergence_trace(&voi_samples),
    };
    Ok(VoiResult {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        seed: study.seed,
        mask,
        mask_label: mask.label(),
        common_random_numbers: true,
        round_trip_efficiency: study.system.round_trip_efficiency,
        prior_expected_cost: prior.expected_cost(),
        preposterior_expected_cost: post.expected_cost,
        prior_standard_error: se_prior,
        preposterior_standard_error: post.standard_error,
        combined_standard_error: combined,
        evii: e.evii,
        evii_raw: e.evii_raw,
        evii_pct: e.evii_pct,
        n_measurements: post.records.len() + post.failures.len(),
        failed_measurements: post.failures.len(),
        sp_error: sp_error_report(&post.records),
        risk: risk_report(&prior.costs, &post.records)?,
        convergence,
        records: post.records,
        failures: post.failures,
        prior,
    })
}

/// Prior leg, measurement sweep and summaries.
pub fn run_voi(study: &Study, mask: UncertaintyMask, config_hash: &str) -> Result<VoiResult> {
    study.validate()?;
    let prior = prior_leg(study)?;
    let post = preposterior_leg(study, study.sampling.n_measurements, mask)?;
    assemble_result(study, config_hash, mask, prior, post)
}

/// What "perfect" information covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvpiMode {
    /// Type, mean and peak known exactly; the shared year stays uncertain.
    #[default]
    ExcludeYear,
    /// The whole evaluation scenario, including year and solar year, known.
    FullScenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvpiResult {
    pub schema_version: u32,
    pub mode: EvpiMode,
    pub prior_expected_cost: f64,
    pub perfect_information_cost: f64,
    pub evpi: f64,
    pub evpi_raw: f64,
    pub standard_error: Option<f64>,
    /// Per-sample costs under perfect information.
    pub samples: Vec<f64>,
}

/// Expected value of perfect information against an already-run prior leg.
pub fn compute_evpi(study: &Study, prior: &PriorLeg, mode: EvpiMode) -> Result<EvpiResult> {
    let samples = match mode {
        EvpiMode::ExcludeYear => {
            let exact = study.with_measurement(MeasurementModel {
                eps_mean: 0.0,
                eps_peak: 0.0,
                type_observed: true,
                year_observed: false,
            });
            let leg = preposterior_leg(&exact, study.sampling.n_measurements, UncertaintyMask::ALL)?;
            if !leg.failures.is_empty() {
                return Err(Error::PartialFailure {
                    failed: leg.failures.len(),
                    total: study.sampling.n_measurements,
                    first: leg.failures[0].error.clone(),
                });
            }
            leg.records
                .iter()
                .map(|r| r.posterior_expected_cost)
                .collect::<Vec<_>>()
        }
        EvpiMode::FullScenario => {
            let dist = study.prior_distribution()?;
            (0..study.sampling.n_posterior)
                .into_par_iter()
                .map(|j| {
                    let s = study.evaluation_scenario(&dist, j)?;
                    let set = ScenarioSet::new(vec![s.clone()])?;
                    let sol = build_and_solve(&set, &study.system)?;
                    Ok(simulate(&sol.design, &s, &study.system, &study.mpc)?.costs.total)
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let perfect = stats::mean(&samples);
    let raw = prior.expected_cost() - perfect;
    Ok(EvpiResult {
        schema_version: SCHEMA_VERSION,
        mode,
        prior_expected_cost: prior.expected_cost(),
        perfect_information_cost: perfect,
        evpi: raw.max(0.0),
        evpi_raw: raw,
        standard_error: stats::standard_error(&samples),
        samples,
    })
}

/// Percentiles reported for load bands.
pub const BAND_PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

/// Per-step percentiles of aggregate district load (kW) across scenarios.
pub fn load_percentile_bands(scenarios: &[Scenario]) -> Vec<[f64; 5]> {
    let Some(first) = scenarios.first() else {
        return Vec::new();
    };
    let aggregates: Vec<Vec<f64>> = scenarios.iter().map(|s| s.aggregate_kw()).collect();
    (0..first.horizon())
        .map(|t| {
            let col: Vec<f64> = aggregates.iter().map(|a| a[t]).collect();
            BAND_PERCENTILES.map(|p| stats::quantile(&col, p / 100.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evii_examples() {
        let e = compute_evii(22.432e6, 22.147e6);
        assert!((e.evii - 285e3).abs() < 1.0);
        assert!((e.evii_pct - 1.27).abs() < 0.005, "{}", e.evii_pct);
        let e = compute_evii(10.0, 12.0);
        assert_eq!(e.evii, 0.0);
        assert_eq!(e.evii_raw, -2.0);
        assert_eq!(compute_evii(5.0, 5.0).evii, 0.0);
    }

    #[test]
    fn sp_error_arithmetic() {
        let r = sp_error_from_pairs(&[(98.0, 100.0), (102.0, 100.0)]);
        assert!(r.mean_error_pct.abs() < 1e-12);
        assert!((r.mean_abs_error_pct - 2.0).abs() < 1e-12);
        let r = sp_error_from_pairs(&[(5.0, 5.0), (7.0, 7.0)]);
        assert_eq!((r.mean_error_pct, r.mean_abs_error_pct), (0.0, 0.0));
    }

    #[test]
    fn mask_labels_round_trip() {
        for s in ["none", "type", "mean", "peak", "all"] {
            assert_eq!(UncertaintyMask::parse(s).unwrap().label(), s);
        }
        assert!(UncertaintyMask::parse("year").is_err());
    }

    fn record(std: f64, range: f64) -> MeasurementRecord {
        MeasurementRecord {
            index: 0,
            truth: vec![],
            measurement: vec![],
            posterior_mean_load_kw: 0.0,
            posterior_design: SystemDesign::zero(1),
            posterior_expected_cost: 1.0,
            posterior_cost_std: std,
            posterior_cost_range: range,
            posterior_standard_error: None,
            sp_objective: 1.0,
            cost_samples: vec![],
            simultaneous_flow_steps: 0,
            max_conservation_residual: 0.0,
        }
    }

    #[test]
    fn risk_ratios() {
        let prior = DistributionSummary::from_samples(vec![1.0, 2.0, 3.0]);
        let same = risk_report(&prior, &[record(prior.std, prior.range())]).unwrap();
        assert_eq!(same.std_ratios, vec![1.0]);
        assert_eq!(same.range_ratios, vec![1.0]);
        let point = risk_report(&prior, &[record(0.0, 0.0), record(0.0, 0.0)]).unwrap();
        assert!(point.std_ratios.iter().all(|r| *r == 0.0));
        assert!(risk_report(&prior, &[]).is_err());
    }

    #[test]
    fn bands_are_ordered() {
        let mk = |v: f64| Scenario {
            loads: vec![vec![v, 2.0 * v]],
            solar: vec![0.0, 0.0],
            probability: 0.25,
            timestep_hours: 1.0,
            provenance: vec![],
            solar_year: "s".into(),
        };
        let bands = load_percentile_bands(&[mk(1.0), mk(2.0), mk(3.0), mk(4.0)]);
        assert_eq!(bands.len(), 2);
        for b in bands {
            assert!(b.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
