//! Pre-trained word embedding files: one entry per line, `token` followed by
//! whitespace-separated floats.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::DcstError;

/// An embedding table with its vocabulary. Row 0 is the zero-initialized
/// UNK row; file vocabulary starts at row 1.
#[derive(Debug, Clone)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub table: Array2<f64>,
    vocab: BTreeMap<String, usize>,
}

impl PretrainedEmbeddings {
    /// Row index for a token: exact match, then lowercase fallback, then UNK.
    pub fn lookup(&self, token: &str) -> usize {
        if let Some(&i) = self.vocab.get(token) {
            return i;
        }
        if let Some(&i) = self.vocab.get(&token.to_lowercase()) {
            return i;
        }
        0
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }
}

/// Parse an embedding text of dimension `dim`. A line whose float count
/// disagrees with `dim` is an error carrying its line number.
pub fn parse_embeddings(text: &str, dim: usize) -> Result<PretrainedEmbeddings, DcstError> {
    let mut vocab = BTreeMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap().to_string();
        let vals: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let vals = vals.map_err(|e| DcstError::Parse {
            line: lineno + 1,
            message: format!("bad float in embedding line: {e}"),
        })?;
        if vals.len() != dim {
            return Err(DcstError::Parse {
                line: lineno + 1,
                message: format!("expected {} floats, got {}", dim, vals.len()),
            });
        }
        if let std::collections::btree_map::Entry::Vacant(e) = vocab.entry(token) {
            e.insert(rows.len() + 1);
            rows.push(vals);
        }
    }
    let mut table = Array2::zeros((rows.len() + 1, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            table[(i + 1, j)] = v;
        }
    }
    Ok(PretrainedEmbeddings { dim, table, vocab })
}

/// Load an embedding file from disk.
pub fn load_pretrained_embeddings(
    path: &std::path::Path,
    dim: usize,
) -> Result<PretrainedEmbeddings, DcstError> {
    let text = std::fs::read_to_string(path)?;
    parse_embeddings(&text, dim)
}
