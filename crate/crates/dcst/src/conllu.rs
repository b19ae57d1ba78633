//! CoNLL-U reading and writing.
//!
//! Only the columns the pipeline consumes are retained: ID, FORM, LEMMA,
//! UPOS, HEAD and DEPREL. Multiword-token ranges (`3-4`) and empty nodes
//! (`5.1`) are skipped so that every sentence is a plain sequence of basic
//! tokens with ids `1..m`.

use crate::error::DcstError;

/// One token row of a sentence.
///
/// `head` is stored exactly as CoNLL-U does: 0 means ROOT, otherwise the
/// 1-based position of the head token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: Option<String>,
    pub upos: String,
    pub head: Option<usize>,
    pub deprel: Option<String>,
}

/// A tokenized sentence; token ids are always exactly `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn upos(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.upos.as_str()).collect()
    }

    /// Gold head array, if every token carries one.
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Gold label array, if every token carries one.
    pub fn deprels(&self) -> Option<Vec<String>> {
        self.tokens.iter().map(|t| t.deprel.clone()).collect()
    }
}

fn field(s: &str) -> Option<String> {
    if s == "_" {
        None
    } else {
        Some(s.to_string())
    }
}

/// Parse CoNLL-U text into sentences.
///
/// Range lines and empty-node lines are skipped; comment lines are ignored.
/// Malformed token lines report the 1-based line number they occur on.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>, DcstError> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();

    let mut flush = |current: &mut Vec<Token>| -> Result<(), DcstError> {
        if current.is_empty() {
            return Ok(());
        }
        let tokens = std::mem::take(current);
        for (i, tok) in tokens.iter().enumerate() {
            if tok.id != i + 1 {
                return Err(DcstError::Structure(format!(
                    "non-contiguous token ids: expected {}, got {}",
                    i + 1,
                    tok.id
                )));
            }
        }
        let m = tokens.len();
        for tok in &tokens {
            if let Some(h) = tok.head {
                if h > m || h == tok.id {
                    return Err(DcstError::Structure(format!(
                        "token {} has head {} out of range for sentence of length {}",
                        tok.id, h, m
                    )));
                }
            }
        }
        sentences.push(Sentence { tokens });
        Ok(())
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            flush(&mut current)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(DcstError::Parse {
                line: lineno,
                message: format!("expected 10 tab-separated columns, got {}", cols.len()),
            });
        }
        // Skip multiword-token ranges and empty nodes.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| DcstError::Parse {
            line: lineno,
            message: format!("non-integer token id {:?}", cols[0]),
        })?;
        if id == 0 {
            return Err(DcstError::Parse {
                line: lineno,
                message: "token id must be >= 1".into(),
            });
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| DcstError::Parse {
                line: lineno,
                message: format!("non-integer head {:?}", h),
            })?),
        };
        current.push(Token {
            id,
            form: cols[1].to_string(),
            lemma: field(cols[2]),
            upos: cols[3].to_string(),
            head,
            deprel: field(cols[7]),
        });
    }
    flush(&mut current)?;
    Ok(sentences)
}

/// Serialize sentences back to CoNLL-U text.
///
/// Unretained columns (XPOS, FEATS, DEPS, MISC) are written as `_`. Each
/// sentence ends with one blank line, so `parse(write(s))` round-trips.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sent in sentences {
        for tok in &sent.tokens {
            let head = tok.head.map(|h| h.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_\n",
                tok.id,
                tok.form,
                tok.lemma.as_deref().unwrap_or("_"),
                tok.upos,
                head.as_deref().unwrap_or("_"),
                tok.deprel.as_deref().unwrap_or("_"),
            ));
        }
        out.push('\n');
    }
    out
}

/// Drop head and deprel from every token, producing the unlabeled view.
pub fn strip_annotations(s: &Sentence) -> Sentence {
    Sentence {
        tokens: s
            .tokens
            .iter()
            .map(|t| Token {
                head: None,
                deprel: None,
                ..t.clone()
            })
            .collect(),
    }
}
