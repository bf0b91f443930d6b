//! Run artifacts and the plot-data tables derived from them.
//!
//! A run directory holds `voi_result.json` plus a few CSVs written while the
//! study is still in memory. `write_report` then works from those files alone.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loadmodel::{format_float, DistrictPosterior};
use crate::stats::{self, histogram, ConvergenceTrace};
use crate::voi::{load_percentile_bands, posterior_from_readings, Study, VoiResult, BAND_PERCENTILES};

pub const RESULT_FILE: &str = "voi_result.json";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const LOAD_BANDS_FILE: &str = "load_bands.csv";

/// Tables emitted by `write_report`, one per figure family.
pub const REPORT_FILES: [&str; 7] = [
    "cost_histograms.csv",
    "design_scatter.csv",
    "capacity_correlation.csv",
    "risk_ratios.csv",
    "load_percentile_bands.csv",
    "convergence.csv",
    "sp_errors.csv",
];

fn f(x: f64) -> String {
    format_float(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

/// Write the result JSON and the per-run tables.
pub fn write_voi_artifacts(dir: &Path, study: &Study, result: &VoiResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESULT_FILE), result.to_json()?)?;
    write_measurements(&dir.join(MEASUREMENTS_FILE), result)?;
    write_convergence(&dir.join(CONVERGENCE_FILE), result)?;
    write_load_bands(&dir.join(LOAD_BANDS_FILE), study, result)
}

fn write_measurements(path: &Path, result: &VoiResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "measurement",
        "posterior_mean_load_kw",
        "battery_kwh",
        "solar_kwp",
        "grid_kw",
        "expected_cost_gbp",
        "cost_std_gbp",
        "cost_range_gbp",
        "standard_error_gbp",
        "sp_objective_gbp",
    ])?;
    for r in &result.records {
        let d = &r.posterior_design;
        w.write_record([
            r.index.to_string(),
            f(r.posterior_mean_load_kw),
            f(d.total_battery()),
            f(d.total_solar()),
            f(d.grid_kw),
            f(r.posterior_expected_cost),
            f(r.posterior_cost_std),
            f(r.posterior_cost_range),
            opt(r.posterior_standard_error),
            f(r.sp_objective),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_convergence(path: &Path, result: &VoiResult) -> Result<()> {
    let c = &result.convergence;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "n", "running_mean_gbp", "lower_gbp", "upper_gbp"])?;
    for (name, trace) in [("prior", &c.prior), ("preposterior", &c.preposterior), ("voi", &c.voi)] {
        write_trace(&mut w, name, trace)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(w: &mut csv::Writer<fs::File>, name: &str, trace: &ConvergenceTrace) -> Result<()> {
    let (lower, upper) = (trace.lower(), trace.upper());
    for (i, m) in trace.running_mean.iter().enumerate() {
        w.write_record([
            name.to_string(),
            (i + 1).to_string(),
            f(*m),
            opt(lower[i]),
            opt(upper[i]),
        ])?;
    }
    Ok(())
}

/// Aggregate load bands of the prior and of the first posterior, sampled
/// from the evaluation streams.
fn write_load_bands(path: &Path, study: &Study, result: &VoiResult) -> Result<()> {
    let sample = |dist: &DistrictPosterior| -> Result<Vec<[f64; 5]>> {
        let scenarios = (0..study.sampling.n_posterior)
            .map(|j| study.evaluation_scenario(dist, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(load_percentile_bands(&scenarios))
    };
    let mut series = vec![("prior".to_string(), sample(&study.prior_distribution()?)?)];
    if let Some(r) = result.records.first() {
        let post = posterior_from_readings(study, &r.measurement)?;
        series.push((format!("posterior_{}", r.index), sample(&post)?));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["distribution".to_string(), "t".to_string()];
    header.extend(BAND_PERCENTILES.iter().map(|p| format!("p{p}_kw")));
    w.write_record(&header)?;
    for (name, bands) in &series {
        for (t, b) in bands.iter().enumerate() {
            let mut row = vec![name.clone(), t.to_string()];
            row.extend(b.iter().map(|x| f(*x)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a run's result, failing with a message that names the directory.
pub fn read_result(run_dir: &Path) -> Result<VoiResult> {
    let path = run_dir.join(RESULT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Validation(format!(
            "{} is not a completed run ({}: {e})",
            run_dir.display(),
            RESULT_FILE
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Sturges' rule.
fn bin_count(n: usize) -> usize {
    (n.max(1) as f64).log2().ceil() as usize + 1
}

/// Pearson correlation; zero when either side is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (stats::mean(x), stats::mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        0.0
    }
}

/// Derive every plot-data table from a finished run. Nothing is recomputed.
pub fn write_report(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let result = read_result(run_dir)?;
    let bands_src = run_dir.join(LOAD_BANDS_FILE);
    if !bands_src.is_file() {
        return Err(Error::Validation(format!(
            "{} has no {LOAD_BANDS_FILE}",
            run_dir.display()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let path = |name: &str| out_dir.join(name);
    let records = &result.records;

    let mut w = csv::Writer::from_path(path(REPORT_FILES[0]))?;
    w.write_record(["series", "bin_lo_gbp", "bin_hi_gbp", "count"])?;
    let posterior_means: Vec<f64> = records.iter().map(|r| r.posterior_expected_cost).collect();
    for (name, xs) in [
        ("prior", &result.prior.costs.samples),
        ("posterior_expected", &posterior_means),
    ] {
        for b in histogram(xs, bin_count(xs.len())) {
            w.write_record([name.to_string(), f(b.lo), f(b.hi), b.count.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path(REPORT_FILES[1]))?;
    w.write_record([
        "measurement",
        "posterior_mean_load_kw",
        "battery_kwh",
        "solar_kwp",
        "grid_kw",
    ])?;
    for r in records {
        let d = &r.posterior_design;
        w.write_record([
            r.index.to_string(),
            f(r.posterior_mean_load_kw),
            f(d.total_battery()),
            f(d.total_solar()),
            f(d.grid_kw),
        ])?;
    }
    w.flush()?;

    let load: Vec<f64> = records.iter().map(|r| r.posterior_mean_load_kw).collect();
    let mut w = csv::Writer::from_path(path(REPORT_FILES[2]))?;
    w.write_record(["capacity", "pearson_r", "mean", "std"])?;
    let columns: [(&str, fn(&crate::designopt::SystemDesign) -> f64); 3] = [
        ("battery_kwh", |d| d.total_battery()),
        ("solar_kwp", |d| d.total_solar()),
        ("grid_kw", |d| d.grid_kw),
    ];
    for (name, get) in columns {
        let xs: Vec<f64> = records.iter().map(|r| get(&r.posterior_design)).collect();
        w.write_record([
            name.to_string(),
            f(correlation(&load, &xs)),
            f(stats::mean(&xs)),
            f(stats::std_dev(&xs)),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(path(REPORT_FILES[3]))?;
    w.write_record(["measurement", "std_ratio", "range_ratio"])?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            r.index.to_string(),
            f(result.risk.std_ratios[i]),
            f(result.risk.range_ratios[i]),
        ])?;
    }
    w.flush()?;

    fs::copy(&bands_src, path(REPORT_FILES[4]))?;

    write_convergence(&path(REPORT_FILES[5]), &result)?;

    let mut w = csv::Writer::from_path(path(REPORT_FILES[6]))?;
    w.write_record(["measurement", "sp_objective_gbp", "simulated_cost_gbp", "error_pct"])?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            r.index.to_string(),
            f(r.sp_objective),
            f(r.posterior_expected_cost),
            f(result.sp_error.errors_pct[i]),
        ])?;
    }
    w.flush()?;

    Ok(REPORT_FILES.iter().map(|n| path(n)).collect())
}
