//! Versioned JSON persistence for trained networks and resumable trainer state.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::neural::QNetwork;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub online: QNetwork,
    pub target: QNetwork,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    /// Environment steps taken, warm-up included.
    pub train_steps: u64,
    pub gradient_steps: u64,
    /// Training seed followed by the seeds of any resumed segments.
    pub seed_lineage: Vec<u64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_versioned_json(text, CHECKPOINT_VERSION)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Parses `text` after checking its top-level `version` field.
pub(crate) fn from_versioned_json<T: DeserializeOwned>(text: &str, expected: u32) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::from_json(text, &e))?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Contract("file has no numeric 'version' field".into()))?;
    if found != u64::from(expected) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected,
        });
    }
    serde_json::from_str(text).map_err(|e| Error::from_json(text, &e))
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
