//! Self-describing checkpoint document: format version, resolved training
//! config, model structure (permutations included), every parameter tensor,
//! and the data-standardisation statistics. JSON's shortest-roundtrip float
//! encoding makes a reload reproduce log_prob bit-identically.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::train::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "kernelflow-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub model: FlowModel,
    pub standardization: Standardization,
    pub dataset_name: String,
}

impl Checkpoint {
    pub fn new(
        config: &TrainConfig,
        model: &FlowModel,
        standardization: &Standardization,
        dataset_name: &str,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: config.clone(),
            model: model.clone(),
            standardization: standardization.clone(),
            dataset_name: dataset_name.to_string(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&content).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {:?}",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_moons, toy_dataset};
    use crate::train::{train, TrainConfig};

    #[test]
    fn save_load_reproduces_log_prob_bitwise() {
        let ds = toy_dataset("moons", |n, s| gen_moons(n, 0.1, s), 500, 50, 50, 1).unwrap();
        let cfg = TrainConfig {
            blocks: 2,
            aux_points: 8,
            iterations: 50,
            batch_size: 100,
            ..TrainConfig::default()
        };
        let mut model = cfg.build_model(2).unwrap();
        train(&mut model, &ds, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(&cfg, &model, &ds.standardization, "moons")
            .save(&path)
            .unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        let lp1 = model.log_prob(ds.test.view()).unwrap();
        let lp2 = loaded.model.log_prob(ds.test.view()).unwrap();
        for (a, b) in lp1.iter().zip(lp2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_format_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"format\":\"other\"}").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
