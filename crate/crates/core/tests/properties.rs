mod common;

use std::collections::BTreeMap;

use common::*;
use district_voi::designopt::{build_and_solve, SystemDesign, SystemParams, Tariff};
use district_voi::loadmodel::{
    build_profile, posterior_update, sample_district_params, sample_measurement, BuildingLoadParams, LoadDataset,
    Measurement, MeasurementModel, PriorSpec,
};
use district_voi::scenario::{features, reduce_fast_forward, ScenarioSet};
use district_voi::simulator::{simulate, MpcParams};
use district_voi::voi::compute_evii;
use proptest::prelude::*;
use rand::Rng;

/// A small random single-scenario sizing problem.
fn small_problem(seed: u64, buildings: usize, horizon: usize) -> (ScenarioSet, SystemParams) {
    let mut rng = rng(seed);
    let loads = (0..buildings)
        .map(|_| (0..horizon).map(|_| rng.gen_range(0.5..6.0)).collect())
        .collect();
    let solar = (0..horizon)
        .map(|t| (((t % 24) as f64 - 6.0) / 12.0 * std::f64::consts::PI).sin().max(0.0))
        .collect();
    let params = SystemParams {
        energy_cost_scale: rng.gen_range(50.0..400.0),
        round_trip_efficiency: rng.gen_range(0.8..0.97),
        tariff: Tariff {
            price: (0..horizon).map(|_| rng.gen_range(0.05..0.5)).collect(),
            carbon: (0..horizon).map(|_| rng.gen_range(0.0..0.3)).collect(),
        },
        ..Default::default()
    };
    (ScenarioSet::new(vec![scenario(loads, solar, 1.0)]).unwrap(), params)
}

fn scale_prices(p: &SystemParams, k: f64) -> SystemParams {
    SystemParams {
        carbon_price: p.carbon_price * k,
        battery_price: p.battery_price * k,
        solar_price: p.solar_price * k,
        grid_price_per_kw_day: p.grid_price_per_kw_day * k,
        excess_price_per_kw_day: p.excess_price_per_kw_day * k,
        tariff: Tariff {
            price: p.tariff.price.iter().map(|x| x * k).collect(),
            carbon: p.tariff.carbon.clone(),
        },
        ..p.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scaling_every_price_scales_the_objective(seed in 0u64..1000, k in 0.1f64..10.0) {
        let (set, params) = small_problem(seed, 2, 24);
        let base = build_and_solve(&set, &params).unwrap();
        let scaled = build_and_solve(&set, &scale_prices(&params, k)).unwrap();
        let rel = (scaled.objective_gbp - k * base.objective_gbp).abs() / (k * base.objective_gbp).max(1.0);
        prop_assert!(rel < 1e-6, "{} vs {}", scaled.objective_gbp, k * base.objective_gbp);
    }

    #[test]
    fn pv_cap_never_lowers_the_objective(seed in 0u64..1000, cap in 0.0f64..5.0) {
        let (set, params) = small_problem(seed, 2, 24);
        let free = build_and_solve(&set, &params).unwrap();
        let capped_params = SystemParams { pv_cap_per_building: Some(cap), ..params };
        let capped = build_and_solve(&set, &capped_params).unwrap();
        prop_assert!(capped.objective_gbp >= free.objective_gbp * (1.0 - 1e-7));
        prop_assert!(capped.design.solar_kwp.iter().all(|s| *s <= cap + 1e-7));
    }

    #[test]
    fn optimal_dispatch_is_feasible_and_never_simultaneous(seed in 0u64..1000) {
        let (set, params) = small_problem(seed, 2, 24);
        let sol = build_and_solve(&set, &params).unwrap();
        let d = &sol.dispatch[0];
        let r = params.round_trip_efficiency.sqrt();
        for (i, cap) in sol.design.battery_kwh.iter().enumerate() {
            prop_assert!((d.soc[i][0] - params.initial_soc_frac * cap).abs() < 1e-6);
            for t in 0..24 {
                let (c, x) = (d.charge[i][t], d.discharge[i][t]);
                prop_assert!(c * x < 1e-6, "charge {c} and discharge {x} together");
                prop_assert!((d.soc[i][t + 1] - d.soc[i][t] - r * c + x / r).abs() < 1e-6);
                prop_assert!(d.soc[i][t + 1] >= -1e-6 && d.soc[i][t + 1] <= cap + 1e-6);
                let limit = params.discharge_ratio * cap * params.timestep_hours;
                prop_assert!(c <= limit + 1e-6 && x <= limit + 1e-6);
            }
        }
    }

    #[test]
    fn simulation_conserves_energy_and_respects_bounds(
        seed in 0u64..1000,
        horizon in 2usize..30,
        execute in 1usize..30,
        battery in 0.0f64..25.0,
        solar in 0.0f64..10.0,
        grid in 1.0f64..15.0,
    ) {
        let (set, params) = small_problem(seed, 1, 72);
        let mpc = MpcParams { horizon_steps: horizon, execute_steps: execute.min(horizon), fos_op: 1.01 };
        let design = SystemDesign { battery_kwh: vec![battery], solar_kwp: vec![solar], grid_kw: grid };
        let sim = simulate(&design, &set.scenarios[0], &params, &mpc).unwrap();
        let report = check_dynamics(&sim, &design, &params);
        prop_assert!(report.ok(), "{report:?}");
    }

    #[test]
    fn receding_horizon_costs_at_least_full_foresight(seed in 0u64..1000, battery in 0.0f64..25.0) {
        let (set, params) = small_problem(seed, 1, 72);
        let design = SystemDesign { battery_kwh: vec![battery], solar_kwp: vec![3.0], grid_kw: 6.0 };
        let foresight = simulate(&design, &set.scenarios[0], &params, &MpcParams::full_foresight(72, params.fos_op)).unwrap();
        let receding = simulate(&design, &set.scenarios[0], &params, &MpcParams { horizon_steps: 12, execute_steps: 6, fos_op: params.fos_op }).unwrap();
        prop_assert!(receding.costs.total >= foresight.costs.total * (1.0 - 1e-5));
    }

    #[test]
    fn storing_then_emptying_returns_eta_of_the_charge(eta in 0.5f64..1.0, charge in 0.1f64..10.0) {
        let params = SystemParams {
            round_trip_efficiency: eta,
            discharge_ratio: 1.0,
            energy_cost_scale: 1000.0,
            grid_price_per_kw_day: 0.0,
            excess_price_per_kw_day: 0.0,
            tariff: Tariff { price: vec![0.01, 1.0], carbon: vec![0.0, 0.0] },
            ..Default::default()
        };
        let design = SystemDesign { battery_kwh: vec![charge * eta.sqrt()], solar_kwp: vec![0.0], grid_kw: 100.0 };
        let s = scenario(vec![vec![0.0, 50.0]], vec![0.0, 0.0], 1.0);
        let sim = simulate(&design, &s, &params, &MpcParams::full_foresight(2, 1.0)).unwrap();
        let stored = sim.dispatch.charge[0][0];
        prop_assert!(stored > 0.0);
        prop_assert!((sim.dispatch.discharge[0][1] - eta * stored).abs() < 1e-6);
        prop_assert!(sim.dispatch.soc[0][2].abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tabulated_posteriors_integrate_to_one(
        z_mean in 20.0f64..200.0,
        z_peak in 150.0f64..450.0,
        eps in 0.01f64..0.5,
    ) {
        let prior = PriorSpec::with_ids(vec!["t".into()], vec!["y".into()]);
        let model = MeasurementModel { eps_mean: eps, eps_peak: eps, ..Default::default() };
        let m = Measurement { z_mean: Some(z_mean), z_peak: Some(z_peak), ..Measurement::empty() };
        let post = posterior_update(&prior, &m, &model).unwrap();
        for density in [&post.mean, &post.peak] {
            let pdf = density.as_tabulated().expect("noisy readings give a tabulated pdf");
            prop_assert!((pdf.integral() - 1.0).abs() < 1e-6);
        }
        let (lo, hi) = post.peak.as_tabulated().unwrap().support();
        prop_assert!(lo >= prior.peak_min - 1e-9 && hi <= prior.peak_max + 1e-9);
    }

    #[test]
    fn exact_reading_collapses_onto_it(z in 50.0f64..150.0) {
        let prior = PriorSpec::with_ids(vec!["t".into()], vec!["y".into()]);
        let model = MeasurementModel { eps_mean: 0.0, eps_peak: 0.0, ..Default::default() };
        let m = Measurement { z_mean: Some(z), ..Measurement::empty() };
        let post = posterior_update(&prior, &m, &model).unwrap();
        prop_assert!((post.mean.mean() - z).abs() < 1e-9);
    }

    #[test]
    fn doubling_mean_and_peak_doubles_the_profile(mean in 20.0f64..80.0, ratio in 1.2f64..1.6) {
        let raw: Vec<f64> = (0..48).map(|t| 5.0 + 0.8 * ((t as f64) / 7.6).sin()).collect();
        let mut profiles = BTreeMap::new();
        profiles.insert(("t".to_string(), "y".to_string()), raw);
        let ds = LoadDataset::new(profiles, 1.0).unwrap();
        let params = |m: f64| BuildingLoadParams { type_id: "t".into(), year_id: "y".into(), mean_kw: m, peak_kw: m * ratio };
        let single = build_profile(&params(mean), &ds).unwrap();
        let double = build_profile(&params(2.0 * mean), &ds).unwrap();
        prop_assume!(single.clamped == 0);
        for (a, b) in single.energy.iter().zip(&double.energy) {
            prop_assert!((2.0 * a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn reduction_keeps_the_weighted_mean_in_range(seed in 0u64..10_000, n in 2usize..15, k_frac in 0.0f64..1.0) {
        let mut rng = rng(seed);
        let scenarios: Vec<_> = (0..n)
            .map(|_| {
                let loads = (0..2).map(|_| (0..12).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
                scenario(loads, vec![0.0; 12], 1.0 / n as f64)
            })
            .collect();
        let set = ScenarioSet::new(scenarios).unwrap();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let reduced = reduce_fast_forward(&set, k).unwrap();
        let means: Vec<f64> = set.scenarios.iter().map(|s| features(s).as_array()[0]).collect();
        let weighted: f64 = reduced.scenarios.iter().map(|s| s.probability * features(s).as_array()[0]).sum();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(weighted >= lo - 1e-9 && weighted <= hi + 1e-9);
        prop_assert_eq!(reduced.len(), k);
        prop_assert_eq!(reduce_fast_forward(&set, k).unwrap().scenarios.iter().map(|s| s.loads.clone()).collect::<Vec<_>>(),
            reduced.scenarios.iter().map(|s| s.loads.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn evii_is_clipped_difference(prior in 0.0f64..1e8, prepost in 0.0f64..1e8) {
        let e = compute_evii(prior, prepost);
        prop_assert_eq!(e.evii_raw, prior - prepost);
        prop_assert_eq!(e.evii, (prior - prepost).max(0.0));
        prop_assert!(e.evii >= 0.0);
    }
}

/// Averaged over joint draws, the posterior variance of the mean-load
/// parameter cannot exceed its prior variance.
#[test]
fn posterior_contracts_on_average() {
    let prior = PriorSpec::with_ids(vec!["t".into()], vec!["y".into()]);
    let model = MeasurementModel {
        eps_mean: 0.2,
        eps_peak: 0.2,
        ..Default::default()
    };
    let mut rng = rng(17);
    let n = 300;
    let variances: Vec<f64> = (0..n)
        .map(|_| {
            let truth = &sample_district_params(&prior, 1, &mut rng).unwrap()[0];
            let m = sample_measurement(truth, &model, &mut rng).restrict(false, true, false);
            posterior_update(&prior, &m, &model).unwrap().mean.moments().1
        })
        .collect();
    let mean = variances.iter().sum::<f64>() / n as f64;
    let sd = (variances.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let prior_var = prior.mean_sigma.powi(2);
    assert!(
        mean <= prior_var + 3.0 * sd / (n as f64).sqrt(),
        "{mean} vs {prior_var}"
    );
}

#[test]
fn sampling_is_reproducible_under_a_seed() {
    let prior = PriorSpec::with_ids(vec!["a".into(), "b".into()], vec!["y1".into(), "y2".into()]);
    let draw = || sample_district_params(&prior, 5, &mut rng(99)).unwrap();
    assert_eq!(draw(), draw());
}
