//! Versioned JSON checkpoints holding the model configuration, vocabulary
//! and every parameter array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{ModelConfig, Params};
use crate::treebank::Vocab;

pub const FORMAT: &str = "sentgram-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, vocab: Vocab, params: Params) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            vocab,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                ck.version
            )));
        }
        ck.vocab.reindex();
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Parameter shapes agree with the configuration and vocabulary.
    pub fn validate(&self) -> Result<()> {
        let expect = Params::init(&self.config, self.vocab.len());
        let shapes = |p: &Params| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
        if shapes(&expect) != shapes(&self.params) {
            return Err(Error::Checkpoint(
                "parameter shapes do not match the stored configuration".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::ModelKind;

    fn sample(kind: ModelKind) -> Checkpoint {
        let config = ModelConfig {
            kind,
            classes: 5,
            subtypes: 2,
            dim: 2,
            components: 1,
            budget: Some(50),
            embed_dim: 4,
            hidden: 3,
            dropout: 0.5,
            seed: 42,
        };
        let vocab = Vocab::from_tokens(["good", "bad", "film"].map(String::from));
        let params = Params::init(&config, vocab.len());
        Checkpoint::new(config, vocab, params)
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in [ModelKind::Baseline, ModelKind::Wg, ModelKind::Lvg, ModelKind::Lveg] {
            let ck = sample(kind);
            let text = ck.to_json();
            let back = Checkpoint::from_json(&text).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.vocab.lookup("film"), ck.vocab.lookup("film"));
            assert_eq!(back.to_json(), text);
        }
    }

    #[test]
    fn rejects_other_versions_and_shapes() {
        let mut ck = sample(ModelKind::Wg);
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
        let mut ck = sample(ModelKind::Wg);
        ck.config.hidden = 5;
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
    }
}
