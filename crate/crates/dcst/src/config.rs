//! Flat key=value run configuration: a small, diff-friendly format shared
//! by all subcommands. Files hold `key = value` lines (with `#` comments);
//! command-line `--set key=value` flags override file entries. Unknown keys
//! are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::DcstError;
use crate::metrics::PdhVariant;
use crate::parser::ParserConfig;
use crate::pipeline::{FreezeMode, ModelKind, PipelineConfig};
use crate::tagger::TaggerConfig;
use crate::tree::{CoarsePosTable, Scheme};

/// Every key any subcommand understands.
pub const KNOWN_KEYS: &[&str] = &[
    // run layout
    "profile", "seed", "seeds", "out",
    // corpora
    "train", "dev", "test", "unlabeled",
    // experiment shape
    "models", "schemes", "n_train", "n_dev", "setup", "length_threshold",
    // parser hyperparameters
    "epochs", "batch", "lr", "dropout", "patience", "hidden", "layers",
    "arc_mlp", "label_mlp", "word_dim", "char_dim", "char_filters", "pos_dim",
    // tagger decoder + training
    "tagger_fc1", "tagger_fc2", "tagger_epochs",
    // pipeline behavior
    "freeze", "pdh_variant",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, DcstError> {
        let mut cfg = RunConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| DcstError::Parse {
                line: i + 1,
                message: format!("expected key = value, got {raw:?}"),
            })?;
            cfg.set_checked(key.trim(), value.trim()).map_err(|e| DcstError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, DcstError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one entry, rejecting unknown keys.
    pub fn set_checked(&mut self, key: &str, value: &str) -> Result<(), DcstError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(DcstError::Config(format!("unknown configuration key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply `key=value` override flags (highest precedence).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), DcstError> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| DcstError::Config(format!("expected key=value, got {o:?}")))?;
            self.set_checked(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn get_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, DcstError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                DcstError::Config(format!("key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    pub fn seed(&self) -> Result<u64, DcstError> {
        Ok(self.get_num("seed")?.unwrap_or(1))
    }

    pub fn seeds(&self) -> Result<Vec<u64>, DcstError> {
        match self.get("seeds") {
            None => Ok(vec![self.seed()?]),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| DcstError::Config(format!("bad seed {s:?}")))
                })
                .collect(),
        }
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>, DcstError> {
        match self.get("schemes") {
            None => Ok(vec![Scheme::Nc, Scheme::Dr, Scheme::Rpe]),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    Scheme::from_name(s.trim())
                        .ok_or_else(|| DcstError::Config(format!("unknown scheme {s:?}")))
                })
                .collect(),
        }
    }

    pub fn models(&self) -> Result<Vec<ModelKind>, DcstError> {
        match self.get("models") {
            None => Ok(ModelKind::ALL.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    ModelKind::from_name(s.trim())
                        .ok_or_else(|| DcstError::Config(format!("unknown model {s:?}")))
                })
                .collect(),
        }
    }

    pub fn pdh_variant(&self) -> Result<PdhVariant, DcstError> {
        match self.get("pdh_variant") {
            None | Some("intervening") => Ok(PdhVariant::Intervening),
            Some("offset") => Ok(PdhVariant::Offset),
            Some(other) => {
                Err(DcstError::Config(format!("unknown pdh_variant {other:?}")))
            }
        }
    }

    pub fn freeze(&self) -> Result<FreezeMode, DcstError> {
        match self.get("freeze") {
            None => Ok(FreezeMode::Frozen),
            Some(raw) => FreezeMode::from_name(raw)
                .ok_or_else(|| DcstError::Config(format!("unknown freeze mode {raw:?}"))),
        }
    }

    /// Parser profile plus individual overrides.
    pub fn parser(&self) -> Result<ParserConfig, DcstError> {
        let mut cfg = match self.get("profile") {
            None | Some("desk") => ParserConfig::desk(),
            Some("paper") => ParserConfig::paper(),
            Some(other) => {
                return Err(DcstError::Config(format!("unknown profile {other:?}")))
            }
        };
        if let Some(v) = self.get_num("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.get_num("batch")? {
            cfg.batch = v;
        }
        if let Some(v) = self.get_num("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = self.get_num("dropout")? {
            cfg.dropout = v;
        }
        if let Some(v) = self.get_num("patience")? {
            cfg.patience = v;
        }
        if let Some(v) = self.get_num("hidden")? {
            cfg.hidden = v;
        }
        if let Some(v) = self.get_num("layers")? {
            cfg.layers = v;
        }
        if let Some(v) = self.get_num("arc_mlp")? {
            cfg.arc_mlp = v;
        }
        if let Some(v) = self.get_num("label_mlp")? {
            cfg.label_mlp = v;
        }
        if let Some(v) = self.get_num("word_dim")? {
            cfg.dims.word = v;
        }
        if let Some(v) = self.get_num("char_dim")? {
            cfg.dims.char_emb = v;
        }
        if let Some(v) = self.get_num("char_filters")? {
            cfg.dims.char_filters = v;
        }
        if let Some(v) = self.get_num("pos_dim")? {
            cfg.dims.pos = v;
        }
        cfg.seed = self.seed()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tagger(&self) -> Result<TaggerConfig, DcstError> {
        let mut cfg = TaggerConfig::from_parser(&self.parser()?);
        if let Some(v) = self.get_num("tagger_fc1")? {
            cfg.fc1 = v;
        }
        if let Some(v) = self.get_num("tagger_fc2")? {
            cfg.fc2 = v;
        }
        if let Some(v) = self.get_num("tagger_epochs")? {
            cfg.epochs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, DcstError> {
        Ok(PipelineConfig {
            parser: self.parser()?,
            tagger: self.tagger()?,
            freeze: self.freeze()?,
            pos_table: CoarsePosTable::default(),
        })
    }

    pub fn n_train(&self) -> Result<usize, DcstError> {
        Ok(self.get_num("n_train")?.unwrap_or(100))
    }

    pub fn n_dev(&self) -> Result<usize, DcstError> {
        Ok(self.get_num("n_dev")?.unwrap_or(100))
    }

    pub fn length_threshold(&self) -> Result<usize, DcstError> {
        Ok(self.get_num("length_threshold")?.unwrap_or(10))
    }

    /// The fully resolved configuration, one `key = value` line per entry,
    /// suitable for echoing into a run directory and re-running from.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
