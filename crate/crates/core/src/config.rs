//! One serializable bundle of every tunable, shared by the CLI commands.
//!
//! A config file only needs the keys it changes: it is merged key by key
//! over [`ExperimentConfig::default`] before deserialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::mpc::MpcConfig;
use crate::rl::DdpgConfig;
use crate::sl::{Architecture, TrainConfig};
use crate::trajgen::DatasetId;
use crate::vehicle::VehicleParams;

/// Name of the resolved-config file written next to every command's outputs.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub vehicle: VehicleParams,
    pub mpc: MpcConfig,
    pub dataset: DatasetSpec,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub ddpg: DdpgConfig,
    /// `x,y` waypoint CSV for evaluation; the built-in validation circuit when absent.
    pub track: Option<PathBuf>,
    /// Laps of the evaluation track per rollout.
    pub laps: usize,
    /// Control calls per latency measurement.
    pub bench_calls: usize,
    /// Distinct poses the latency benchmark cycles through.
    pub bench_instances: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            mpc: MpcConfig::default(),
            dataset: DatasetSpec::new(DatasetId::THREE, 50_000, 0),
            architecture: Architecture::headline(),
            train: TrainConfig::default(),
            ddpg: DdpgConfig::default(),
            track: None,
            laps: 1,
            bench_calls: 10_000,
            bench_instances: 200,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a possibly partial JSON document over the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let overrides: Value = serde_json::from_str(text)?;
        if !overrides.is_object() {
            return Err(Error::invalid("config must be a JSON object"));
        }
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, overrides, "")?;
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Writes `config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        self.save(&path)?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.mpc.validate()?;
        self.dataset.validate()?;
        self.architecture.validate()?;
        self.train.validate()?;
        self.ddpg.validate()?;
        if self.mpc.delta_max > self.vehicle.delta_max {
            return Err(Error::invalid("MPC steering bound exceeds the vehicle's"));
        }
        if self.laps == 0 || self.bench_calls == 0 || self.bench_instances == 0 {
            return Err(Error::invalid("laps, bench_calls and bench_instances must be positive"));
        }
        Ok(())
    }
}

/// Recursively overwrites `base` with `over`; objects merge, everything else replaces.
/// Keys absent from `base` are typos, not extensions.
fn merge(base: &mut Value, over: Value, at: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = format!("{at}/{k}");
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| Error::invalid(format!("unknown config key {path}")))?;
                merge(slot, v, &path)?;
            }
        }
        (slot, v) => *slot = v,
    }
    Ok(())
}
