//! Model checkpoints as JSON. Weights are written with shortest round-trip
//! decimal formatting, so a load reproduces every `f64` bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, CONV1_LEN, HIDDEN, KERNEL};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub num_classes: usize,
    pub hidden_channels: usize,
    pub kernel_sizes: Vec<usize>,
}

impl ArchSpec {
    pub fn for_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            hidden_channels: HIDDEN,
            kernel_sizes: vec![KERNEL, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: String,
    pub schedule: String,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: ArchSpec,
    pub weights: ModelParams,
    pub meta: RunMeta,
}

impl Checkpoint {
    pub fn new(params: ModelParams, meta: RunMeta) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            arch: ArchSpec::for_classes(params.num_classes()),
            weights: params,
            meta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let expected = ArchSpec::for_classes(self.arch.num_classes);
        if self.arch != expected {
            return Err(Error::Checkpoint(format!(
                "unsupported architecture {:?}",
                self.arch
            )));
        }
        let c = self.arch.num_classes;
        let lens = [
            ("conv1_weights", self.weights.conv1_weights.len(), CONV1_LEN),
            ("conv1_bias", self.weights.conv1_bias.len(), HIDDEN),
            (
                "conv2_weights",
                self.weights.conv2_weights.len(),
                c * HIDDEN,
            ),
            ("conv2_bias", self.weights.conv2_bias.len(), c),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Checkpoint(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        Ok(())
    }

    /// Fails unless the checkpoint was trained for `num_classes` classes.
    pub fn expect_classes(&self, num_classes: usize) -> Result<()> {
        if self.arch.num_classes != num_classes {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {} classes, data has {num_classes}",
                self.arch.num_classes
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(params: &ModelParams, meta: &RunMeta, path: &Path) -> Result<()> {
    let json = Checkpoint::new(params.clone(), meta.clone()).to_json();
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, RunMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_json(&text)?;
    Ok((ckpt.weights, ckpt.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};

    fn meta() -> RunMeta {
        RunMeta {
            mode: "multi".into(),
            schedule: "linear".into(),
            epochs: 3,
            seed: 1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut params = init_params(3, 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for b in &mut params.conv2_bias {
            *b = rng.random::<f64>() * 1e-300 - 7.123456789e5 * rng.random::<f64>();
        }
        params.conv1_bias[0] = f64::MIN_POSITIVE;
        params.conv1_bias[1] = -0.1 - 0.2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&params, &meta(), &path).unwrap();
        let (back, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        for (a, b) in params.flatten().iter().zip(back.flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let mut ckpt = Checkpoint::new(init_params(1, 6), meta());
        ckpt.weights.conv2_weights.pop();
        let err = Checkpoint::from_json(&ckpt.to_json()).unwrap_err();
        assert!(err.to_string().contains("conv2_weights"), "{err}");
    }

    #[test]
    fn version_and_class_mismatch() {
        let mut ckpt = Checkpoint::new(init_params(1, 6), meta());
        assert!(ckpt.expect_classes(6).is_ok());
        assert!(matches!(ckpt.expect_classes(8), Err(Error::Checkpoint(_))));
        ckpt.version = 2;
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());
        assert!(Checkpoint::from_json("{\"version\": 1}").is_err());
    }
}
