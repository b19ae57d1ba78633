//! Input vocabularies and the shared word + char-CNN + POS embedding layer.
//!
//! Parser and taggers own separate instances of these parameters; only the
//! layout is shared. All parameter names take a prefix so several embedders
//! can coexist in one store (the hybrid parser holds one per tagger stream).

use std::collections::BTreeMap;

use rand::Rng;

use crate::conllu::Sentence;
use crate::nn::init;
use crate::nn::store::ParameterStore;
use crate::nn::tape::{NodeId, Tape};

pub const UNK: &str = "<unk>";

/// String-to-index vocabulary. Open vocabularies reserve index 0 for UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: BTreeMap<String, usize>,
    has_unk: bool,
}

impl Vocab {
    fn build(iter: impl IntoIterator<Item = String>, has_unk: bool) -> Self {
        let mut items: Vec<String> = if has_unk { vec![UNK.to_string()] } else { Vec::new() };
        let mut index = BTreeMap::new();
        if has_unk {
            index.insert(UNK.to_string(), 0);
        }
        for item in iter {
            if !index.contains_key(&item) {
                index.insert(item.clone(), items.len());
                items.push(item);
            }
        }
        Vocab { items, index, has_unk }
    }

    pub fn with_unk(iter: impl IntoIterator<Item = String>) -> Self {
        Self::build(iter, true)
    }

    /// Closed vocabulary without an UNK entry (label sets).
    pub fn closed(iter: impl IntoIterator<Item = String>) -> Self {
        Self::build(iter, false)
    }

    pub fn from_items(items: Vec<String>, has_unk: bool) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { items, index, has_unk }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn get_or_unk(&self, item: &str) -> usize {
        match self.index.get(item) {
            Some(&i) => i,
            None => {
                assert!(self.has_unk, "closed vocabulary miss for {:?}", item);
                0
            }
        }
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn has_unk(&self) -> bool {
        self.has_unk
    }
}

/// Word, character and POS vocabularies of one embedder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputVocab {
    pub words: Vocab,
    pub chars: Vocab,
    pub pos: Vocab,
}

impl InputVocab {
    pub fn build(sentences: &[Sentence]) -> Self {
        let words = Vocab::with_unk(
            sentences.iter().flat_map(|s| s.tokens.iter().map(|t| t.form.clone())),
        );
        let chars = Vocab::with_unk(sentences.iter().flat_map(|s| {
            s.tokens.iter().flat_map(|t| t.form.chars().map(|c| c.to_string()))
        }));
        let pos = Vocab::with_unk(
            sentences
                .iter()
                .flat_map(|s| s.tokens.iter().map(|t| t.upos.clone()))
                .filter(|p| p != "_"),
        );
        InputVocab { words, chars, pos }
    }
}

/// Dimensions of the shared input embedding layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbedDims {
    pub word: usize,
    pub char_emb: usize,
    pub char_filters: usize,
    pub pos: usize,
}

impl EmbedDims {
    pub fn input_dim(&self) -> usize {
        self.word + self.char_filters + self.pos
    }
}

/// Register embedding parameters under `prefix`.
pub fn init_embed_params<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    dims: &EmbedDims,
    vocab: &InputVocab,
    rng: &mut R,
) {
    store.insert(&format!("{prefix}emb.word"), init::glorot(rng, vocab.words.len(), dims.word));
    store.insert(
        &format!("{prefix}emb.char"),
        init::glorot(rng, vocab.chars.len(), dims.char_emb),
    );
    store.insert(&format!("{prefix}emb.pos"), init::glorot(rng, vocab.pos.len(), dims.pos));
    store.insert(
        &format!("{prefix}cnn.w"),
        init::glorot(rng, dims.char_filters, 3 * dims.char_emb),
    );
    store.insert(
        &format!("{prefix}cnn.b"),
        ndarray::Array2::zeros((dims.char_filters, 1)),
    );
}

/// Tape nodes of one embedder's parameters, injected once per forward pass.
pub struct EmbedNodes {
    pub word: NodeId,
    pub char_emb: NodeId,
    pub pos: NodeId,
    pub cnn_w: NodeId,
    pub cnn_b: NodeId,
    dims: EmbedDims,
}

pub fn inject_embed_params(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    dims: &EmbedDims,
) -> EmbedNodes {
    let get = |tape: &mut Tape, suffix: &str| {
        let name = format!("{prefix}{suffix}");
        tape.param(&name, store.get(&name).clone())
    };
    EmbedNodes {
        word: get(tape, "emb.word"),
        char_emb: get(tape, "emb.char"),
        pos: get(tape, "emb.pos"),
        cnn_w: get(tape, "cnn.w"),
        cnn_b: get(tape, "cnn.b"),
        dims: *dims,
    }
}

/// Character CNN over one form: width-3 convolution with zero padding,
/// ReLU, max-pool over positions.
fn char_cnn(tape: &mut Tape, nodes: &EmbedNodes, vocab: &InputVocab, form: &str) -> NodeId {
    let idxs: Vec<usize> = form
        .chars()
        .map(|c| vocab.chars.get_or_unk(&c.to_string()))
        .collect();
    let rows = tape.select_rows(nodes.char_emb, &idxs);
    let c = tape.transpose(rows); // (char_emb, len)
    let len = idxs.len();
    let zero = tape.zeros(nodes.dims.char_emb, 1);
    let padded = tape.stack_cols(&[zero, c, zero]);
    let left: Vec<usize> = (0..len).collect();
    let mid: Vec<usize> = (1..len + 1).collect();
    let right: Vec<usize> = (2..len + 2).collect();
    let l = tape.select_cols(padded, &left);
    let m = tape.select_cols(padded, &mid);
    let r = tape.select_cols(padded, &right);
    let windows = tape.concat_rows(&[l, m, r]); // (3*char_emb, len)
    let conv = tape.affine(nodes.cnn_w, windows, nodes.cnn_b);
    let act = tape.relu(conv);
    tape.max_pool_cols(act) // (filters, 1)
}

/// Embed one token as the concatenation `[word; char-cnn; pos]`, a column
/// vector of `dims.input_dim()` entries. A `_` POS zeroes the POS channel.
pub fn embed_token(
    tape: &mut Tape,
    nodes: &EmbedNodes,
    vocab: &InputVocab,
    form: &str,
    upos: &str,
) -> NodeId {
    let widx = vocab.words.get_or_unk(form);
    let wrow = tape.select_rows(nodes.word, &[widx]);
    let w = tape.transpose(wrow);
    let ch = char_cnn(tape, nodes, vocab, form);
    let p = if upos == "_" {
        tape.zeros(nodes.dims.pos, 1)
    } else {
        let pidx = vocab.pos.get_or_unk(upos);
        let prow = tape.select_rows(nodes.pos, &[pidx]);
        tape.transpose(prow)
    };
    tape.concat_rows(&[w, ch, p])
}

/// Embed a batch of same-length sentences into per-timestep column-stacked
/// matrices of shape `(input_dim, batch)`.
pub fn embed_batch<R: Rng>(
    tape: &mut Tape,
    nodes: &EmbedNodes,
    vocab: &InputVocab,
    sents: &[&Sentence],
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> Vec<NodeId> {
    assert!(!sents.is_empty());
    let m = sents[0].len();
    assert!(sents.iter().all(|s| s.len() == m), "batch sentences must share length");
    (0..m)
        .map(|t| {
            let cols: Vec<NodeId> = sents
                .iter()
                .map(|s| {
                    let tok = &s.tokens[t];
                    embed_token(tape, nodes, vocab, &tok.form, &tok.upos)
                })
                .collect();
            let x = tape.stack_cols(&cols);
            tape.dropout(x, dropout, train, rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::parse_conllu;
    use crate::nn::substream;

    fn toy_corpus() -> Vec<Sentence> {
        parse_conllu(
            "1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
             2\tdog\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
             3\truns\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n\
             1\ta\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
             2\tcat\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
             3\tsleeps\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n",
        )
        .unwrap()
    }

    fn dims() -> EmbedDims {
        EmbedDims { word: 6, char_emb: 4, char_filters: 5, pos: 3 }
    }

    fn setup() -> (InputVocab, ParameterStore) {
        let corpus = toy_corpus();
        let vocab = InputVocab::build(&corpus);
        let mut store = ParameterStore::new();
        let mut rng = substream(1, "test.init");
        init_embed_params(&mut store, "", &dims(), &vocab, &mut rng);
        (vocab, store)
    }

    #[test]
    fn vocab_has_unk_at_zero() {
        let (vocab, _) = setup();
        assert_eq!(vocab.words.item(0), UNK);
        assert_eq!(vocab.words.get_or_unk("never-seen"), 0);
        assert!(vocab.words.get("dog").unwrap() > 0);
    }

    #[test]
    fn token_embedding_dims_and_determinism() {
        let (vocab, store) = setup();
        let d = dims();
        let mut tape = Tape::new();
        let nodes = inject_embed_params(&mut tape, &store, "", &d);
        let a = embed_token(&mut tape, &nodes, &vocab, "dog", "NOUN");
        let b = embed_token(&mut tape, &nodes, &vocab, "dog", "NOUN");
        assert_eq!(tape.shape(a), (d.input_dim(), 1));
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn single_char_token_is_finite() {
        let (vocab, store) = setup();
        let mut tape = Tape::new();
        let nodes = inject_embed_params(&mut tape, &store, "", &dims());
        let e = embed_token(&mut tape, &nodes, &vocab, "a", "DET");
        assert!(tape.value(e).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_pos_zeroes_pos_channel() {
        let (vocab, store) = setup();
        let d = dims();
        let mut tape = Tape::new();
        let nodes = inject_embed_params(&mut tape, &store, "", &d);
        let e = embed_token(&mut tape, &nodes, &vocab, "dog", "_");
        let v = tape.value(e);
        for i in d.word + d.char_filters..d.input_dim() {
            assert_eq!(v[(i, 0)], 0.0);
        }
    }

    #[test]
    fn batch_stacks_columns() {
        let corpus = toy_corpus();
        let (vocab, store) = setup();
        let d = dims();
        let mut tape = Tape::new();
        let nodes = inject_embed_params(&mut tape, &store, "", &d);
        let refs: Vec<&Sentence> = corpus.iter().collect();
        let mut rng = substream(1, "test.dropout");
        let steps = embed_batch(&mut tape, &nodes, &vocab, &refs, 0.0, false, &mut rng);
        assert_eq!(steps.len(), 3);
        for s in steps {
            assert_eq!(tape.shape(s), (d.input_dim(), 2));
        }
    }
}
