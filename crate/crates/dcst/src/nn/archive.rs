//! Self-describing parameter archives.
//!
//! JSON with a schema version, a config echo, the vocabularies, and every
//! named tensor as shape + row-major f64 data. All maps are ordered, so the
//! same store always serializes to the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DcstError;

use super::store::{ParameterStore, TensorValue};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Archive {
    pub schema_version: u32,
    /// What the archive holds: "parser", "tagger", "hybrid".
    pub kind: String,
    /// Fully resolved configuration echo.
    pub config: BTreeMap<String, String>,
    pub vocabs: BTreeMap<String, Vec<String>>,
    pub tensors: BTreeMap<String, TensorValue>,
}

impl Archive {
    pub fn from_store(
        kind: &str,
        config: BTreeMap<String, String>,
        vocabs: BTreeMap<String, Vec<String>>,
        store: &ParameterStore,
    ) -> Self {
        let tensors = store
            .iter()
            .map(|(name, value)| (name.to_string(), TensorValue::from_array(value)))
            .collect();
        Archive { schema_version: SCHEMA_VERSION, kind: kind.to_string(), config, vocabs, tensors }
    }

    pub fn to_store(&self) -> Result<ParameterStore, DcstError> {
        let mut store = ParameterStore::new();
        for (name, tv) in &self.tensors {
            store.insert(name, tv.to_array()?);
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec(self).expect("archive serialization");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DcstError> {
        let archive: Archive =
            serde_json::from_slice(bytes).map_err(|e| DcstError::Archive(e.to_string()))?;
        if archive.schema_version != SCHEMA_VERSION {
            return Err(DcstError::Archive(format!(
                "unsupported schema version {}",
                archive.schema_version
            )));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<(), DcstError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DcstError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
