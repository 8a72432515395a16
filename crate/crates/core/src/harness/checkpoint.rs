//! JSON checkpoints: architecture, scaling, parameters, optimizer and RNG.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, Param, ParamStore};
use crate::error::{Error, Result};
use crate::flowmatch::{FlowModel, ModelArch, Normalizer};

pub const CHECKPOINT_FORMAT: &str = "corridorflow-ckpt-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    /// Decimal; JSON numbers cannot hold 128 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub step: u64,
    pub arch: ModelArch,
    pub norm: Normalizer,
    pub params: Vec<Param>,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn capture(model: &FlowModel, optimizer: Option<&Adam>, rng: Option<&ChaCha8Rng>, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            step,
            arch: model.arch.clone(),
            norm: model.norm.clone(),
            params: model.store.params().to_vec(),
            optimizer: optimizer.cloned(),
            rng: rng.map(RngState::capture),
        }
    }

    pub fn model(&self) -> Result<FlowModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format `{}`", self.format)));
        }
        let mut store = ParamStore::new();
        for p in &self.params {
            if store.find(&p.name).is_some() {
                return Err(Error::Config(format!("duplicate parameter `{}`", p.name)));
            }
            if p.shape.iter().product::<usize>() != p.value.len() {
                return Err(Error::Config(format!("parameter `{}` does not match its shape", p.name)));
            }
            store.add(p.name.clone(), p.shape.clone(), p.value.clone());
        }
        FlowModel::from_parts(self.arch.clone(), self.norm.clone(), store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        // write-then-rename keeps the previous checkpoint intact on failure
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::AdamConfig;
    use crate::flowmatch::VelocityField;
    use rand::Rng;

    fn arch() -> ModelArch {
        ModelArch {
            context_dim: 5,
            cond_dim: 4,
            enc_hidden: 6,
            head_hidden: 6,
            hidden: 8,
            layers: 2,
            rows: 3,
            width: 7,
            anchors: 2,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FlowModel::new(arch(), Normalizer::identity(21), &mut rng).unwrap();
        let _: f64 = rng.random();
        let adam = Adam::new(AdamConfig::default(), &model.store);
        let ck = Checkpoint::capture(&model, Some(&adam), Some(&rng), 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let m2 = back.model().unwrap();
        let ctx = [0.1, -0.2, 0.3, 0.0, 1.0];
        let z: Vec<f64> = (0..21).map(|i| i as f64 * 0.01).collect();
        assert_eq!(model.velocity(&ctx, &z, 0.3).unwrap(), m2.velocity(&ctx, &z, 0.3).unwrap());
        let mut r2 = back.rng.unwrap().restore().unwrap();
        assert_eq!(rng.random::<u64>(), r2.random::<u64>());
    }

    #[test]
    fn foreign_format_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FlowModel::new(arch(), Normalizer::identity(21), &mut rng).unwrap();
        let mut ck = Checkpoint::capture(&model, None, None, 0);
        ck.format = "other".into();
        assert!(matches!(ck.model(), Err(Error::Config(_))));
    }
}
