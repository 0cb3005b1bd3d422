use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelRef, ModelSpec};
use crate::trainer::{EpochMetrics, ParameterStore, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or to translate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParameterStore,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn new(
        spec: ModelSpec,
        train: TrainConfig,
        params: ParameterStore,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
    ) -> Result<Self> {
        let c = Checkpoint {
            version: CHECKPOINT_VERSION,
            spec,
            train,
            epoch: 0,
            params,
            src_vocab,
            tgt_vocab,
            history: Vec::new(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn model(&self) -> ModelRef<'_> {
        ModelRef {
            spec: &self.spec,
            store: &self.params,
            seed: self.train.seed,
        }
    }

    /// Checks vocabularies and every parameter shape against the spec.
    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.src_vocab.len() != self.spec.src_vocab || self.tgt_vocab.len() != self.spec.tgt_vocab {
            return Err(Error::Checkpoint(format!(
                "vocabularies have {}/{} entries but the model expects {}/{}",
                self.src_vocab.len(),
                self.tgt_vocab.len(),
                self.spec.src_vocab,
                self.spec.tgt_vocab
            )));
        }
        let specs = self.spec.param_specs();
        if specs.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, {} expected",
                self.params.len(),
                specs.len()
            )));
        }
        for (name, shape, _) in specs {
            let p = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if p.value.shape() != shape.as_slice()
                || p.acc_grad.shape() != shape.as_slice()
                || p.acc_update.shape() != shape.as_slice()
            {
                return Err(Error::Checkpoint(format!("`{name}` does not have shape {shape:?}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(self.to_json()?.as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
