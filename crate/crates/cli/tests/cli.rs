use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use district_voi::designopt::Tariff;
use district_voi::scenario::{Scenario, ScenarioSet};

fn dvoi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvoi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A district small enough for a full pipeline in about a second.
const TINY: &[&str] = &[
    "--profile",
    "desk",
    "--set",
    "data.synthetic.horizon=96",
    "--set",
    "sampling.n_prior=8",
    "--set",
    "sampling.k_reduced=2",
    "--set",
    "sampling.n_posterior=4",
    "--set",
    "sampling.n_measurements=3",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = TINY.to_vec();
    v.extend_from_slice(args);
    v
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn dataset_gen_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "dataset", "gen", "--types", "3", "--years", "6", "--hours", "8760", "--seed", "7",
    ];
    let mut a = args.to_vec();
    a.extend(["--out", "a"]);
    ok(&dvoi(dir.path(), &a));
    let mut b = args.to_vec();
    b.extend(["--out", "b"]);
    ok(&dvoi(dir.path(), &b));

    let loads = csv_rows(&dir.path().join("a/loads.csv"));
    let profiles: std::collections::BTreeSet<(String, String)> =
        loads.iter().map(|r| (r[0].to_string(), r[1].to_string())).collect();
    assert_eq!(profiles.len(), 18);
    assert_eq!(loads.len(), 18 * 8760);
    let solar_years: std::collections::BTreeSet<String> = csv_rows(&dir.path().join("a/solar.csv"))
        .iter()
        .map(|r| r[0].to_string())
        .collect();
    assert_eq!(solar_years.len(), 10);

    for f in ["loads.csv", "solar.csv", "tariff.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn short_horizon_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dvoi(dir.path(), &["dataset", "gen", "--hours", "12", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 24"));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn bad_config_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dvoi(
        dir.path(),
        &with_tiny(&["design", "--set", "sampling.bogus=1", "--out", "r"]),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = dvoi(
        dir.path(),
        &with_tiny(&["design", "--set", "sampling.n_prior=0", "--out", "r"]),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn design_round_trips_into_simulate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&dvoi(dir.path(), &with_tiny(&["design", "--out", "d"])));
    let rows = csv_rows(&dir.path().join("d/breakdown.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(
        names,
        [
            "Total",
            "LCOE",
            "Electricity",
            "Carbon",
            "Grid excess",
            "Grid connection",
            "Battery",
            "Solar"
        ]
    );
    assert_eq!(csv_rows(&dir.path().join("d/cost_distribution.csv")).len(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert!(manifest["finished_at"].is_string());

    ok(&dvoi(
        dir.path(),
        &with_tiny(&[
            "simulate",
            "--design",
            "d/design.json",
            "--scenario-index",
            "2",
            "--out",
            "s",
        ]),
    ));
    let ts = csv_rows(&dir.path().join("s/timeseries.csv"));
    assert_eq!(ts.len(), 97);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/simulation.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);

    let out = dvoi(
        dir.path(),
        &with_tiny(&[
            "simulate",
            "--design",
            "d/design.json",
            "--set",
            "sampling.n_buildings=2",
            "--out",
            "s2",
        ]),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn voi_run_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    ok(&dvoi(
        dir.path(),
        &with_tiny(&["voi", "run", "--mask", "all", "--seed", "1", "--out", "a"]),
    ));
    ok(&dvoi(
        dir.path(),
        &with_tiny(&["voi", "run", "--mask", "all", "--seed", "1", "--out", "b"]),
    ));
    let a = fs::read(dir.path().join("a/voi_result.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/voi_result.json")).unwrap());
    let result: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(result["schema_version"], 1);
    assert!(result["evii"].as_f64().unwrap() >= 0.0);

    ok(&dvoi(dir.path(), &["report", "--run", "a", "--out", "rep"]));
    let rep = dir.path().join("rep");
    for f in district_voi::report::REPORT_FILES {
        assert!(rep.join(f).is_file(), "{f}");
    }
    let hist = csv_rows(&rep.join("cost_histograms.csv"));
    for (series, n) in [("prior", 4), ("posterior_expected", 3)] {
        let total: usize = hist
            .iter()
            .filter(|r| &r[0] == series)
            .map(|r| r[3].parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, n, "{series}");
    }
    assert_eq!(csv_rows(&rep.join("design_scatter.csv")).len(), 3);

    let out = dvoi(dir.path(), &["report", "--run", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a completed run"));
}

#[test]
fn exact_evpi_on_two_flat_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let flat = |level: f64| Scenario {
        loads: vec![vec![level, level]],
        solar: vec![0.0, 0.0],
        probability: 0.5,
        timestep_hours: 1.0,
        provenance: vec![],
        solar_year: "s".into(),
    };
    let set_dir = dir.path().join("set");
    ScenarioSet::new(vec![flat(1.0), flat(3.0)])
        .unwrap()
        .write_dir(&set_dir, None)
        .unwrap();
    Tariff {
        price: vec![1.0, 1.0],
        carbon: vec![0.0, 0.0],
    }
    .write_csv(&set_dir.join("tariff.csv"))
    .unwrap();
    let grid = format!("system.grid_price_per_kw_day={}", 1.0 / 365.0);
    let excess = format!("system.excess_price_per_kw_day={}", 1.5 / 365.0);
    let args = [
        "voi",
        "evpi",
        "--scenarios",
        "set",
        "--groups",
        "0,1",
        "--out",
        "e",
        "--set",
        "system.battery_price=1e6",
        "--set",
        "system.solar_price=1e6",
        "--set",
        "system.carbon_price=0",
        "--set",
        "system.fos_design=1",
        "--set",
        "system.fos_op=1",
        "--set",
        &grid,
        "--set",
        &excess,
    ];
    ok(&dvoi(dir.path(), &args));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e/evpi_exact.json")).unwrap()).unwrap();
    let gamma = 20.0;
    assert!((v["prior_cost"].as_f64().unwrap() - 6.5 * gamma).abs() < 1e-6, "{v}");
    assert!((v["evpi"].as_f64().unwrap() - 0.5 * gamma).abs() < 1e-6, "{v}");
    assert!(v["evpi"].as_f64().unwrap() + 1e-9 >= v["evii"].as_f64().unwrap());
}
