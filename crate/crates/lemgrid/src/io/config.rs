//! Run configuration file: a TOML document naming the three input files and
//! exposing every tunable as a key with a stated default.
//!
//! ```toml
//! [run]
//! scenario = "I"       # I | II
//! seed = 42
//! slots = 96
//! slot_hours = 0.25
//!
//! [files]              # paths are relative to this file
//! network = "feeder.net"
//! profiles = "profiles.csv"
//! tariffs = "tariffs.csv"
//!
//! [market]             # optional, defaults shown
//! window_duration = 900.0
//! activations_per_trader = 10.0
//!
//! [permission]
//! v_min = 0.94
//! v_max = 1.10
//! voltage_guard = 0.005
//! capacity_guard = 0.02
//! congestion_price = 0.0
//! min_order_kwh = 0.05
//! buyer_share = 0.5
//!
//! [battery]            # optional; required when profiles contain prosumer2
//! power_kw = 3.0
//! capacity_kwh = 10.0
//! efficiency = 0.95
//! initial_soc_kwh = 5.0
//!
//! [hems]
//! soc_step_kwh = 0.1
//!
//! [ces]                # optional community storage
//! node = 12
//! buy_slots = [40, 56]   # half-open slot ranges
//! sell_slots = [68, 80]
//! [ces.battery]
//! power_kw = 25.0
//! capacity_kwh = 50.0
//! efficiency = 0.95
//! initial_soc_kwh = 10.0
//!
//! [redcap]
//! export_limit_kw = 3.0
//!
//! [droop]
//! v_cri = 1.06
//! relaxation = 0.5
//! max_iterations = 50
//! ```
//!
//! Unknown keys are rejected so typos cannot silently fall back to
//! defaults. Household → node assignment comes from the network file's
//! `bind` records.

use super::tables::{read_profiles, read_tariffs};
use crate::agents::{BatterySpec, CesSpec, DEFAULT_SOC_STEP_KWH};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::permission::PermissionConfig;
use crate::scenario::{DroopOptions, MarketOptions, RedCapOptions, ScenarioConfig, ScenarioKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Horizon, seed, and study selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub slots: usize,
    pub slot_hours: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::I,
            seed: 42,
            slots: 96,
            slot_hours: 0.25,
        }
    }
}

/// Input files, relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesSection {
    pub network: PathBuf,
    pub profiles: PathBuf,
    pub tariffs: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HemsSection {
    /// Battery state-of-charge discretization of the dispatch program.
    pub soc_step_kwh: f64,
}

impl Default for HemsSection {
    fn default() -> Self {
        Self {
            soc_step_kwh: DEFAULT_SOC_STEP_KWH,
        }
    }
}

/// The whole config file, with every default materialized after parsing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub files: FilesSection,
    #[serde(default)]
    pub market: MarketOptions,
    #[serde(default)]
    pub permission: PermissionConfig,
    #[serde(default)]
    pub battery: Option<BatterySpec>,
    #[serde(default)]
    pub hems: HemsSection,
    #[serde(default)]
    pub ces: Option<CesSpec>,
    #[serde(default)]
    pub redcap: RedCapOptions,
    #[serde(default)]
    pub droop: DroopOptions,
}

impl RunConfig {
    /// Parse a config file; the returned base directory anchors the
    /// relative paths in `files`.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            // The toml error text carries line/column context.
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((cfg, base))
    }

    /// Paths of the three input files, anchored at `base`.
    pub fn input_paths(&self, base: &Path) -> [PathBuf; 3] {
        [
            base.join(&self.files.network),
            base.join(&self.files.profiles),
            base.join(&self.files.tariffs),
        ]
    }

    /// Load the referenced files, bind households to nodes, and validate
    /// the assembled day.
    pub fn resolve(&self, base: &Path) -> Result<ScenarioConfig> {
        let [net_path, prof_path, tar_path] = self.input_paths(base);
        let network = Network::from_file(&net_path)?;
        let mut households = read_profiles(&prof_path)?;
        let tariffs = read_tariffs(&tar_path)?;

        for h in &mut households {
            match network.bindings().get(&h.id) {
                Some(&node) => h.node = Some(node),
                None => {
                    return Err(Error::Invalid(format!(
                        "household {} has no bind record in {}",
                        h.id,
                        net_path.display()
                    )))
                }
            }
        }

        let config = ScenarioConfig {
            network,
            households,
            tariffs,
            slots: self.run.slots,
            slot_hours: self.run.slot_hours,
            seed: self.run.seed,
            kind: self.run.scenario,
            battery: self.battery,
            ces: self.ces.clone(),
            permission: self.permission,
            market: self.market,
            soc_step_kwh: self.hems.soc_step_kwh,
            redcap: self.redcap,
            droop: self.droop,
        };
        config.validate()?;
        Ok(config)
    }
}
