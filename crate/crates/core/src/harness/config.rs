use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corridor::CorridorConfig;
use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::flowmatch::ModelArch;
use crate::synthdata::{DataConfig, TaskContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of the context embedding `H`.
    pub cond_dim: usize,
    pub enc_hidden: usize,
    pub head_hidden: usize,
    /// Hidden width of the velocity net.
    pub hidden: usize,
    /// Affine layers in the velocity net.
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cond_dim: 32,
            enc_hidden: 64,
            head_hidden: 64,
            hidden: 128,
            layers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: AdamConfig,
    /// Master seed for initialization and batching; required.
    pub seed: Option<u64>,
    /// Metrics (and a checkpoint) every this many steps.
    pub eval_every: usize,
    pub checkpoint: Option<PathBuf>,
    /// Every n-th episode (by first appearance) is held out.
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            batch_size: 32,
            steps: 2000,
            optimizer: AdamConfig::default(),
            seed: None,
            eval_every: 500,
            checkpoint: None,
            holdout_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sampler_steps: usize,
    /// Falls back to the training seed.
    pub seed: Option<u64>,
    /// Caps the number of held-out chunks scored.
    pub max_records: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sampler_steps: 10,
            seed: None,
            max_records: None,
        }
    }
}

/// One JSON document describing a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub corridor: CorridorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Structural checks; seeds are checked where they are needed.
    pub fn validate(&self) -> Result<()> {
        self.data.validate().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("data: {m}")),
            other => other,
        })?;
        self.corridor.validate()?;
        let m = &self.model;
        positive("model.cond_dim", m.cond_dim)?;
        positive("model.enc_hidden", m.enc_hidden)?;
        positive("model.head_hidden", m.head_hidden)?;
        positive("model.hidden", m.hidden)?;
        positive("model.layers", m.layers)?;
        let t = &self.train;
        positive("train.batch_size", t.batch_size)?;
        positive("train.eval_every", t.eval_every)?;
        if t.holdout_every < 2 {
            return Err(Error::Config("train.holdout_every must be >= 2".into()));
        }
        let o = &t.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("train.optimizer out of range".into()));
        }
        positive("eval.sampler_steps", self.eval.sampler_steps)?;
        if self.eval.max_records == Some(0) {
            return Err(Error::Config("eval.max_records must be positive".into()));
        }
        Ok(())
    }

    pub fn train_seed(&self) -> Result<u64> {
        self.train
            .seed
            .ok_or_else(|| Error::Config("missing field `train.seed` (seeds are mandatory)".into()))
    }

    pub fn eval_seed(&self) -> Result<u64> {
        match self.eval.seed {
            Some(s) => Ok(s),
            None => self.train_seed(),
        }
    }

    pub fn arch(&self) -> ModelArch {
        ModelArch {
            context_dim: TaskContext::DIM,
            cond_dim: self.model.cond_dim,
            enc_hidden: self.model.enc_hidden,
            head_hidden: self.model.head_hidden,
            hidden: self.model.hidden,
            layers: self.model.layers,
            rows: self.data.chunk_len,
            width: self.corridor.layout().width(),
            anchors: self.data.k,
        }
    }

    /// Pretty JSON with every default spelled out.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert!(matches!(c.train_seed(), Err(Error::Config(m)) if m.contains("train.seed")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"stepz": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": {}}"#).is_err());
    }

    #[test]
    fn resolved_roundtrip() {
        let mut c = RunConfig::default();
        c.train.seed = Some(3);
        c.corridor.enable_extra_a = false;
        let back = RunConfig::from_json(&c.resolved_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.arch().width, 4);
        assert_eq!(back.eval_seed().unwrap(), 3);
    }

    #[test]
    fn invalid_values() {
        let mut c = RunConfig::default();
        c.train.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.corridor.alpha = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.k = 0;
        assert!(c.validate().is_err());
    }
}
