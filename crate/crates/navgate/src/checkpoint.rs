//! Versioned JSON checkpoints of the policy and judge parameters.
//!
//! The format is a plain JSON document of named layers, each a shape plus a
//! flat scalar array, so it is byte-order independent and diffable. Layer
//! order is fixed by construction, which keeps single-worker runs
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Consistency data: a checkpoint only makes sense with the embeddings and
/// catalog it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub n_types: usize,
    pub d_emb: usize,
    pub embedding_seed: u64,
    pub recurrent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: CheckpointMeta,
    pub policy: NetworkParams,
    pub judge: NetworkParams,
    pub policy_version: u64,
    pub judge_version: u64,
}

impl Checkpoint {
    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        for params in [&self.policy, &self.judge] {
            if !params.is_finite() {
                return Err(Error::Checkpoint(
                    "checkpoint contains non-finite values".to_string(),
                ));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    checkpoint.validate()?;
    let json = serde_json::to_string(checkpoint)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;

    // Check the version tag before insisting on the full schema, so an old
    // or future checkpoint reports a version error rather than a parse one.
    #[derive(Deserialize)]
    struct VersionProbe {
        version: u32,
    }
    let probe: VersionProbe = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if probe.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            probe.version, CHECKPOINT_VERSION
        )));
    }

    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}
