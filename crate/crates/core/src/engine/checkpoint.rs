//! Single-file engine checkpoint: every trained parameter set plus the
//! catalog and reward configuration, as JSON with 17-digit reals.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActionCatalog, RewardConfig, SacParams};
use crate::fusion::FusionParams;
use crate::gnn::GnnParams;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineCheckpoint {
    pub format_version: u32,
    pub seed: u64,
    pub fusion: FusionParams,
    pub gnn: GnnParams,
    pub sac: SacParams,
    pub catalog: ActionCatalog,
    pub reward: RewardConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl EngineCheckpoint {
    pub fn new(
        seed: u64,
        fusion: FusionParams,
        gnn: GnnParams,
        sac: SacParams,
        catalog: ActionCatalog,
        reward: RewardConfig,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            seed,
            fusion,
            gnn,
            sac,
            catalog,
            reward,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if probe.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: probe.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    /// sha256 of the serialized form, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::engine::{Action, SacConfig};
    use crate::fusion::FusionDims;
    use crate::gnn::{Aggregation, GnnDims};

    fn sample() -> EngineCheckpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fusion = FusionParams::init(FusionDims { d_g: 6, d_m: 3, d_s: 4, d_a: 4 }, &mut rng);
        let gnn = GnnParams::init(GnnDims::for_metadata(3, 4, 4, 2), Aggregation::Attn, &mut rng);
        let catalog = ActionCatalog::new(
            (0..3)
                .map(|i| Action {
                    id: format!("a{i}"),
                    label: format!("a{i}"),
                    embedding: ActionCatalog::signed_basis_embedding(i, 3),
                    resource_demand: 0.1 * i as f64 + 1.0 / 3.0,
                    nominal_duration: 1.0,
                    cost: 10.0,
                })
                .collect(),
        )
        .unwrap();
        let sac = SacParams::init(9, catalog.dim(), 8, 4, SacConfig::default(), 12);
        EngineCheckpoint::new(11, fusion, gnn, sac, catalog, RewardConfig::default())
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.json");
        ck.save(&path).unwrap();
        let back = EngineCheckpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.hash(), ck.hash());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = sample().to_json().replacen(
            &format!("\"format_version\": {CHECKPOINT_FORMAT_VERSION}"),
            "\"format_version\": 999",
            1,
        );
        assert!(matches!(
            EngineCheckpoint::from_json(&text),
            Err(CheckpointError::VersionMismatch { found: 999, .. })
        ));
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(EngineCheckpoint::from_json("{"), Err(CheckpointError::Corrupt(_))));
    }
}
