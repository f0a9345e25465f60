//! Versioned JSON container for trained models.
//!
//! Floats are written in shortest round-trip form, so load(save(m)) == m
//! bit for bit and saving the same model twice yields identical bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};
use crate::scalar::Scalar;

pub const FORMAT: &str = "sscl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Teacher,
    Student,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<M> {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub scalar: String,
    /// Hash of the vocabulary the model's token indices refer to.
    pub vocab_hash: String,
    pub seed: u64,
    /// Configuration the model was trained with.
    pub config: serde_json::Value,
    pub model: M,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new<T: Scalar>(
        kind: ModelKind,
        vocab_hash: &str,
        seed: u64,
        config: &impl Serialize,
        model: M,
    ) -> Result<Self> {
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            scalar: T::NAME.into(),
            vocab_hash: vocab_hash.into(),
            seed,
            config: serde_json::to_value(config)?,
            model,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Parse and check format, version, kind and scalar type.
    pub fn from_json<T: Scalar>(text: &str, kind: ModelKind) -> Result<Self> {
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Schema(format!("not a checkpoint (format {:?})", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {}", header.version)));
        }
        if header.kind != kind {
            return Err(Error::Schema(format!("expected a {kind} checkpoint, found {}", header.kind)));
        }
        if header.scalar != T::NAME {
            return Err(Error::Schema(format!("checkpoint stores {} values, expected {}", header.scalar, T::NAME)));
        }
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("checkpoint: {e}")))
    }

    pub fn load<T: Scalar>(path: &Path, kind: ModelKind) -> Result<Self> {
        Self::from_json::<T>(&read_to_string(path)?, kind)
    }

    /// Refuse a checkpoint whose index space differs from `vocab_hash`.
    pub fn ensure_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(Error::Schema(format!(
                "checkpoint was trained on vocabulary {} but {} was supplied",
                short(&self.vocab_hash),
                short(vocab_hash)
            )));
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: ModelKind,
    scalar: String,
}
