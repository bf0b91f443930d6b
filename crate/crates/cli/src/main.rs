use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use district_voi::config::{PipelineConfig, RunManifest};
use district_voi::designopt::{SystemDesign, Tariff};
use district_voi::loadmodel::generate_synthetic_dataset;
use district_voi::report::{write_report, write_voi_artifacts};
use district_voi::scenario::{generate_synthetic_solar, ScenarioSet};
use district_voi::simulator::simulate;
use district_voi::stats;
use district_voi::voi::exact::{exact_voi, DiscreteProblem};
use district_voi::voi::{
    assemble_result, compute_evpi, preposterior_leg, prior_leg, EvpiMode, UncertaintyMask, STREAM_PRIOR_DESIGN,
};
use district_voi::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dvoi",
    version,
    about = "Value of load monitoring for district energy design"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (JSON). Defaults to the chosen profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in defaults when no config file is given.
    #[arg(long, global = true, default_value = "paper", value_parser = ["desk", "paper"])]
    profile: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_parser = ["none", "type", "mean", "peak", "all"])]
    mask: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override such as `sampling.n_prior=50`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic input data.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Size the system under the prior and cost it by simulation.
    Design,
    /// Operate a stored design on one evaluation scenario of the prior.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value_t = 0)]
        scenario_index: usize,
    },
    /// Value-of-information analyses.
    Voi {
        #[command(subcommand)]
        command: VoiCommand,
    },
    /// Print the resolved config as JSON.
    Config,
    /// Plot-data tables from a finished `voi run`.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    Gen {
        #[arg(long, default_value_t = 9)]
        types: usize,
        #[arg(long, default_value_t = 6)]
        years: usize,
        #[arg(long, default_value_t = 8760)]
        hours: usize,
        #[arg(long = "solar-years", default_value_t = 10)]
        solar_years: usize,
    },
}

#[derive(Subcommand)]
enum VoiCommand {
    /// Prior and pre-posterior legs for the configured mask.
    Run,
    /// Expected value of perfect information.
    Evpi {
        #[arg(long, value_parser = ["exclude_year", "full_scenario"])]
        mode: Option<String>,
        /// Finite scenario set written by `ScenarioSet::write_dir`; switches
        /// to exact enumeration.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Group label per scenario revealed by the measurement (exact mode).
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<usize>>,
        /// Tariff CSV for exact mode; defaults to `tariff.csv` in the set.
        #[arg(long)]
        tariff: Option<PathBuf>,
    },
}

/// Stored design, read back by `simulate`.
#[derive(Debug, Serialize, Deserialize)]
struct DesignFile {
    schema_version: u32,
    config_hash: String,
    design: SystemDesign,
    sp_objective_gbp: f64,
    expected_cost_gbp: f64,
    standard_error_gbp: Option<f64>,
    simultaneous_flow_steps: usize,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn resolve_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::profile(&g.profile)?,
    };
    cfg = cfg.with_overrides(&g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(mask) = &g.mask {
        cfg.mask = UncertaintyMask::parse(mask)?;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Manifest bookkeeping around one command.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, cfg: &PipelineConfig) -> anyhow::Result<Self> {
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
        let manifest = RunManifest::start(command, cfg, now())?;
        manifest.write(&dir)?;
        Ok(Self { dir, manifest })
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> district_voi::Result<T>) -> anyhow::Result<T> {
        let t0 = Instant::now();
        let out = f();
        self.manifest.record_stage(name, t0.elapsed().as_secs_f64());
        match out {
            Ok(v) => Ok(v),
            Err(e) => {
                self.finish("failed")?;
                Err(e.into())
            }
        }
    }

    fn finish(&mut self, status: &str) -> anyhow::Result<()> {
        self.manifest.finish(status, now());
        self.manifest.write(&self.dir)?;
        Ok(())
    }
}

fn dataset_gen(
    out: &Path,
    types: usize,
    years: usize,
    hours: usize,
    solar_years: usize,
    seed: u64,
) -> anyhow::Result<()> {
    if hours < 24 {
        return Err(Error::Argument(format!("--hours must be at least 24, got {hours}")).into());
    }
    let loads = generate_synthetic_dataset(types, years, hours, seed)?;
    let solar = generate_synthetic_solar(solar_years, hours, seed.wrapping_add(1))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    loads.write_csv(&out.join("loads.csv"))?;
    solar.write_csv(&out.join("solar.csv"))?;
    Tariff::synthetic(hours).write_csv(&out.join("tariff.csv"))?;

    let means: Vec<f64> = loads.profiles().map(|(_, p)| stats::mean(p)).collect();
    let peak = loads
        .profiles()
        .flat_map(|(_, p)| p.iter().copied())
        .fold(0.0, f64::max);
    println!("wrote {}", out.display());
    println!(
        "load profiles: {} ({} types x {} years), {} steps",
        means.len(),
        types,
        years,
        hours
    );
    println!(
        "mean load kW: min {:.2}, median {:.2}, max {:.2}; largest hourly peak {:.2}",
        stats::quantile(&means, 0.0),
        stats::median(&means),
        stats::quantile(&means, 1.0),
        peak
    );
    println!("solar years: {}", solar.year_ids().len());
    Ok(())
}

fn design(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let mut run = Run::start("design", cfg)?;
    let study = run.stage("load", || cfg.build_study())?;
    let dist = study.prior_distribution()?;
    let sol = run.stage("design", || study.design(&dist, STREAM_PRIOR_DESIGN, 0))?;
    let eval = run.stage("evaluate", || study.evaluate(&sol.design, &dist))?;

    let file = DesignFile {
        schema_version: 1,
        config_hash: cfg.hash()?,
        design: sol.design.clone(),
        sp_objective_gbp: sol.objective_gbp,
        expected_cost_gbp: eval.summary.mean,
        standard_error_gbp: eval.summary.standard_error,
        simultaneous_flow_steps: sol.simultaneous_flow_steps,
    };
    fs::write(run.dir.join("design.json"), serde_json::to_string_pretty(&file)?)?;

    let mut w = csv_writer(&run.dir.join("breakdown.csv"))?;
    w.write_record(["cost", "mean_gbp", "percentage", "std_gbp"])?;
    for row in eval.breakdown_table() {
        w.write_record([
            row.cost,
            row.mean.to_string(),
            row.percentage.map(|p| p.to_string()).unwrap_or_default(),
            row.std.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&run.dir.join("cost_distribution.csv"))?;
    w.write_record(["sample", "total_gbp", "lcoe_gbp_per_kwh"])?;
    for (j, c) in eval.costs.iter().enumerate() {
        w.write_record([j.to_string(), c.total.to_string(), c.lcoe.to_string()])?;
    }
    w.flush()?;

    println!(
        "battery {:.1} kWh, solar {:.1} kWp, grid {:.1} kW",
        sol.design.total_battery(),
        sol.design.total_solar(),
        sol.design.grid_kw
    );
    println!(
        "expected lifetime cost £{:.0} (LP objective £{:.0})",
        eval.summary.mean, sol.objective_gbp
    );
    run.finish("ok")
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("opening {}", path.display()))
}

fn simulate_cmd(cfg: &PipelineConfig, design_path: &Path, j: usize) -> anyhow::Result<()> {
    let text = fs::read_to_string(design_path).with_context(|| format!("reading {}", design_path.display()))?;
    let file: DesignFile =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", design_path.display())))?;
    let mut run = Run::start("simulate", cfg)?;
    let study = run.stage("load", || cfg.build_study())?;
    if file.design.n_buildings() != study.sampling.n_buildings {
        return Err(Error::Validation(format!(
            "design has {} buildings but the config samples {}",
            file.design.n_buildings(),
            study.sampling.n_buildings
        ))
        .into());
    }
    let dist = study.prior_distribution()?;
    let scenario = study.evaluation_scenario(&dist, j)?;
    let sim = run.stage("simulate", || {
        simulate(&file.design, &scenario, &study.system, &study.mpc)
    })?;
    sim.write_timeseries_csv(&run.dir.join("timeseries.csv"))?;
    sim.write_summary_json(&run.dir.join("simulation.json"))?;
    println!(
        "scenario {j}: total £{:.0}, LCOE {:.4} £/kWh, {} windows, {} excess steps",
        sim.costs.total, sim.costs.lcoe, sim.windows_solved, sim.excess_events
    );
    run.finish("ok")
}

fn voi_run(cfg: &PipelineConfig) -> anyhow::Result<ExitCode> {
    let mut run = Run::start("voi run", cfg)?;
    let study = run.stage("load", || cfg.build_study())?;
    let prior = run.stage("prior", || prior_leg(&study))?;
    let post = run.stage("preposterior", || {
        preposterior_leg(&study, study.sampling.n_measurements, cfg.mask)
    })?;
    let fraction = post.failure_fraction();
    let result = assemble_result(&study, &cfg.hash()?, cfg.mask, prior, post)?;
    let dir = run.dir.clone();
    run.stage("write", || write_voi_artifacts(&dir, &study, &result))?;

    println!("mask {}", result.mask_label);
    println!(
        "prior £{:.0}, pre-posterior £{:.0}, EVII £{:.0} ({:.3}%), raw £{:.0} ± {:.0}",
        result.prior_expected_cost,
        result.preposterior_expected_cost,
        result.evii,
        result.evii_pct,
        result.evii_raw,
        result.combined_standard_error
    );
    if fraction > cfg.max_failure_fraction {
        eprintln!(
            "error: {} of {} measurements failed, above the {:.1}% threshold",
            result.failed_measurements,
            result.n_measurements,
            cfg.max_failure_fraction * 100.0
        );
        run.finish("partial-failure")?;
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    run.finish("ok")?;
    Ok(ExitCode::SUCCESS)
}

fn voi_evpi(
    cfg: &PipelineConfig,
    mode: Option<&str>,
    scenarios: Option<&Path>,
    groups: Option<Vec<usize>>,
    tariff: Option<&Path>,
) -> anyhow::Result<()> {
    let mut run = Run::start("voi evpi", cfg)?;
    if let Some(dir) = scenarios {
        let set = run.stage("load", || ScenarioSet::read_dir(dir))?;
        let tariff_path = tariff.map(Path::to_path_buf).unwrap_or_else(|| dir.join("tariff.csv"));
        let params = district_voi::designopt::SystemParams {
            tariff: Tariff::read_csv(&tariff_path)?,
            ..cfg.system.clone()
        };
        let groups = groups.unwrap_or_else(|| (0..set.len()).collect());
        let problem = DiscreteProblem::partitioned(set, params, &groups)?;
        let exact = run.stage("enumerate", || exact_voi(&problem))?;
        fs::write(run.dir.join("evpi_exact.json"), serde_json::to_string_pretty(&exact)?)?;
        println!(
            "prior £{:.4}, perfect information £{:.4}, EVPI £{:.4}, EVII £{:.4}",
            exact.prior_cost, exact.perfect_information_cost, exact.evpi, exact.evii
        );
        return run.finish("ok");
    }
    let mode = match mode {
        Some("full_scenario") => EvpiMode::FullScenario,
        Some(_) => EvpiMode::ExcludeYear,
        None => cfg.evpi_mode,
    };
    let study = run.stage("load", || cfg.build_study())?;
    let prior = run.stage("prior", || prior_leg(&study))?;
    let evpi = run.stage("perfect", || compute_evpi(&study, &prior, mode))?;
    fs::write(run.dir.join("evpi.json"), serde_json::to_string_pretty(&evpi)?)?;
    println!(
        "prior £{:.0}, perfect information £{:.0}, EVPI £{:.0}",
        evpi.prior_expected_cost, evpi.perfect_information_cost, evpi.evpi
    );
    run.finish("ok")
}

fn report(run_dir: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("report"));
    for p in write_report(run_dir, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        if jobs == 0 {
            bail!(Error::Argument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Dataset {
            command:
                DatasetCommand::Gen {
                    types,
                    years,
                    hours,
                    solar_years,
                },
        } => {
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            dataset_gen(&out, types, years, hours, solar_years, g.seed.unwrap_or(7))?;
        }
        Command::Design => design(&resolve_config(g)?)?,
        Command::Simulate { design, scenario_index } => simulate_cmd(&resolve_config(g)?, &design, scenario_index)?,
        Command::Voi {
            command: VoiCommand::Run,
        } => return voi_run(&resolve_config(g)?),
        Command::Voi {
            command:
                VoiCommand::Evpi {
                    mode,
                    scenarios,
                    groups,
                    tariff,
                },
        } => voi_evpi(
            &resolve_config(g)?,
            mode.as_deref(),
            scenarios.as_deref(),
            groups,
            tariff.as_deref(),
        )?,
        Command::Config => println!("{}", resolve_config(g)?.to_json()?),
        Command::Report { run } => report(&run, g.out.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_solver() => EXIT_SOLVER,
        Some(Error::PartialFailure { .. }) => EXIT_PARTIAL,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
