//! Scene and run configuration files.

use crate::error::{Error, Result};
use crate::harness::EvalConfig;
use pvp_core::collect::{CollectConfig, KinestheticConfig};
use pvp_core::policy::TrainConfig;
use pvp_core::sim::SceneConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Optional sections of a run configuration file. Any field left out keeps
/// its default; explicit command-line flags override the file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    /// Built-in scene name or path to a scene file.
    pub scene: Option<String>,
    /// Plate count for the dish rack.
    pub plates: Option<usize>,
    pub collect: Option<CollectConfig>,
    pub kinesthetic: Option<KinestheticConfig>,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_PLATES: usize = 3;

/// Resolves `dishrack`, `table`, or a TOML scene file.
pub fn load_scene(name: &str, plates: usize) -> Result<SceneConfig> {
    let cfg = match name {
        "dishrack" => {
            if plates == 0 {
                return Err(Error::Config("dish rack needs at least one plate".into()));
            }
            SceneConfig::dishrack(plates)
        }
        "table" => SceneConfig::table(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("scene {path}: {e}")))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("scene {path}: {e}")))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}
