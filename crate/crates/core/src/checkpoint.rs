//! Versioned JSON checkpoints of network and optimizer state.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so a save/load cycle reproduces every parameter bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NodeNetError, Result};
use crate::neuralnet::{NetworkConfig, NetworkParameters};
use crate::trainer::AdamState;

pub const CHECKPOINT_FORMAT: &str = "nodenet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkConfig,
    pub seed: u64,
    pub params: NetworkParameters,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    /// Epoch the stored parameters come from.
    #[serde(default)]
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(network: NetworkConfig, seed: u64, params: NetworkParameters) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            network,
            seed,
            params,
            optimizer: None,
            epoch: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| NodeNetError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| NodeNetError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NodeNetError::Checkpoint(format!(
                "unexpected format tag {:?}",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NodeNetError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.network.validate()?;
        Ok(ckpt)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NodeNetError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Write-temp-then-rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| NodeNetError::io(dir, e))?;
    let file_name = path.file_name().ok_or_else(|| {
        NodeNetError::InvalidInput(format!("{} has no file name", path.display()))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| NodeNetError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| NodeNetError::io(&tmp, e))?;
        f.sync_all().map_err(|e| NodeNetError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| NodeNetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::init_params;

    #[test]
    fn rejects_other_versions() {
        let net = NetworkConfig::with_hidden(3, &[4], 2);
        let params = init_params(&net, 1).unwrap();
        let mut ckpt = Checkpoint::new(net, 1, params);
        ckpt.version = 99;
        let json = serde_json::to_string(&ckpt).unwrap();
        assert!(Checkpoint::from_json(&json).is_err());
    }
}
