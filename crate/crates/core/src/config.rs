//! Pipeline configuration, dotted-key overrides and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::designopt::{SystemParams, Tariff};
use crate::error::{Error, Result};
use crate::loadmodel::{generate_synthetic_dataset, load_dataset, LoadDataset, MeasurementModel, PriorSpec};
use crate::scenario::{generate_synthetic_solar, load_solar, SolarDataset};
use crate::simulator::MpcParams;
use crate::voi::{EvpiMode, SamplingConfig, Study, UncertaintyMask};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Parameters of the built-in synthetic data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub n_types: usize,
    pub n_years: usize,
    pub n_solar_years: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            n_types: 9,
            n_years: 6,
            n_solar_years: 10,
            horizon: 8760,
            seed: 7,
        }
    }
}

/// Input files; any that are unset come from the synthetic generator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub load_csv: Option<PathBuf>,
    pub solar_csv: Option<PathBuf>,
    pub tariff_csv: Option<PathBuf>,
    pub synthetic: SyntheticData,
}

/// Prior hyper-parameters; id sets default to everything in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mean_mu: f64,
    pub mean_sigma: f64,
    pub peak_min: f64,
    pub peak_max: f64,
    pub type_ids: Option<Vec<String>>,
    pub year_ids: Option<Vec<String>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let p = PriorSpec::with_ids(vec![], vec![]);
        Self {
            mean_mu: p.mean_mu,
            mean_sigma: p.mean_sigma,
            peak_min: p.peak_min,
            peak_max: p.peak_max,
            type_ids: None,
            year_ids: None,
        }
    }
}

impl PriorConfig {
    pub fn to_spec(&self, ds: &LoadDataset) -> PriorSpec {
        PriorSpec {
            type_ids: self.type_ids.clone().unwrap_or_else(|| ds.type_ids().to_vec()),
            year_ids: self.year_ids.clone().unwrap_or_else(|| ds.year_ids().to_vec()),
            mean_mu: self.mean_mu,
            mean_sigma: self.mean_sigma,
            peak_min: self.peak_min,
            peak_max: self.peak_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub measurement: MeasurementModel,
    pub system: SystemParams,
    pub mpc: MpcParams,
    pub sampling: SamplingConfig,
    pub mask: UncertaintyMask,
    pub evpi_mode: EvpiMode,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Largest tolerated share of failed measurements.
    pub max_failure_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl PipelineConfig {
    /// Full-size settings: a year of hourly data and the full sample counts.
    pub fn paper() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            data: DataConfig::default(),
            prior: PriorConfig::default(),
            measurement: MeasurementModel::default(),
            system: SystemParams::default(),
            mpc: MpcParams::default(),
            sampling: SamplingConfig::default(),
            mask: UncertaintyMask::ALL,
            evpi_mode: EvpiMode::default(),
            seed: 1,
            output_dir: PathBuf::from("runs/latest"),
            max_failure_fraction: 0.05,
        }
    }

    /// A month of data, three buildings and small sample counts; energy and
    /// carbon costs are scaled up to a year.
    pub fn desk() -> Self {
        let horizon = 720;
        let mut c = Self::paper();
        c.data.synthetic = SyntheticData {
            n_types: 3,
            n_years: 4,
            n_solar_years: 4,
            horizon,
            seed: 7,
        };
        c.system.energy_cost_scale = 8760.0 / horizon as f64;
        c.sampling = SamplingConfig {
            n_buildings: 3,
            n_prior: 200,
            n_posterior: 48,
            n_measurements: 24,
            k_reduced: 6,
        };
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Argument(format!(
                "unknown profile `{other}` (expected desk or paper)"
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Apply `key=value` overrides with dotted keys. Values parse as JSON
    /// when possible and fall back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        serde_json::from_value(tree).map_err(|e| Error::Argument(format!("override rejected: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON form. The output directory is left
    /// out since it does not affect results.
    pub fn hash(&self) -> Result<String> {
        let mut tree = serde_json::to_value(self)?;
        if let Some(obj) = tree.as_object_mut() {
            obj.remove("output_dir");
        }
        let text = serde_json::to_string(&tree)?;
        Ok(hex(&Sha256::digest(text.as_bytes())))
    }

    /// Check every nested invariant and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for path in [&self.data.load_csv, &self.data.solar_csv, &self.data.tariff_csv]
            .into_iter()
            .flatten()
        {
            if !path.is_file() {
                return Err(Error::Validation(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        let s = &self.data.synthetic;
        if s.n_types < 1 || s.n_years < 1 || s.n_solar_years < 1 || s.horizon < 24 {
            return Err(Error::Validation(
                "synthetic data needs ≥1 type, year and solar year and ≥24 steps".into(),
            ));
        }
        self.prior.to_spec_unchecked().validate()?;
        self.measurement.validate()?;
        self.system.validate_scalars()?;
        self.mpc.validate()?;
        self.sampling.validate()?;
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Validation("max_failure_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load_datasets(&self) -> Result<(LoadDataset, SolarDataset, Tariff)> {
        let s = &self.data.synthetic;
        let loads = match &self.data.load_csv {
            Some(p) => load_dataset(p, self.system.timestep_hours)?,
            None => generate_synthetic_dataset(s.n_types, s.n_years, s.horizon, s.seed)?,
        };
        let solar = match &self.data.solar_csv {
            Some(p) => load_solar(p)?,
            None => generate_synthetic_solar(s.n_solar_years, loads.horizon(), s.seed.wrapping_add(1))?,
        };
        let tariff = match &self.data.tariff_csv {
            Some(p) => Tariff::read_csv(p)?,
            None => Tariff::synthetic(loads.horizon()),
        };
        Ok((loads, solar, tariff))
    }

    /// Validate, load or synthesise the data, and assemble a study.
    pub fn build_study(&self) -> Result<Study> {
        self.validate()?;
        let (loads, solar, tariff) = self.load_datasets()?;
        let system = SystemParams {
            tariff,
            ..self.system.clone()
        };
        let study = Study {
            prior: self.prior.to_spec(&loads),
            loads,
            solar,
            measurement: self.measurement,
            system,
            mpc: self.mpc,
            sampling: self.sampling,
            seed: self.seed,
        };
        study.validate()?;
        Ok(study)
    }
}

impl PriorConfig {
    /// Spec with placeholder ids, for checking the numeric fields alone.
    fn to_spec_unchecked(&self) -> PriorSpec {
        PriorSpec {
            type_ids: self.type_ids.clone().unwrap_or_else(|| vec!["*".into()]),
            year_ids: self.year_ids.clone().unwrap_or_else(|| vec!["*".into()]),
            mean_mu: self.mean_mu,
            mean_sigma: self.mean_sigma,
            peak_min: self.peak_min,
            peak_max: self.peak_max,
        }
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Argument(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::Argument(format!("unknown config key `{key}`")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Argument(format!("unknown config key `{key}`")))?;
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Run provenance, written when a run starts and finalised when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    pub versions: Vec<(String, String)>,
    pub stages: Vec<StageTiming>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn start(command: &str, config: &PipelineConfig, started_at: String) -> Result<Self> {
        Ok(Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            command: command.to_string(),
            config_hash: config.hash()?,
            seed: config.seed,
            started_at,
            finished_at: None,
            status: "running".into(),
            versions: vec![("district-voi".into(), env!("CARGO_PKG_VERSION").into())],
            stages: Vec::new(),
        })
    }

    pub fn record_stage(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn finish(&mut self, status: &str, finished_at: String) {
        self.status = status.to_string();
        self.finished_at = Some(finished_at);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(Self::FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(Self::FILE))?)?)
    }
}
