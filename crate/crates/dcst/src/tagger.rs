//! Auxiliary sequence taggers: a BiLSTM encoder plus a two-layer decoder,
//! trained either on tree-derived tag schemes or as a bidirectional language
//! model. Downstream, only the encoder (and its input embedder) is consumed
//! by the hybrid parser; the decoder exists for pre-training alone.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::Sentence;
use crate::error::DcstError;
use crate::features::{
    embed_batch, init_embed_params, inject_embed_params, EmbedDims, InputVocab, Vocab,
};
use crate::nn::init;
use crate::nn::lstm::BiLstmSpec;
use crate::nn::store::ParameterStore;
use crate::nn::substream;
use crate::nn::tape::{NodeId, Tape};
use crate::parser::{group_by_length, ParserConfig};
use crate::train::{run_train_loop, TrainHistory, TrainOptions};
use crate::tree::{encode_dr, encode_nc, encode_rpe, CoarsePosTable, DepTree, Scheme, TagSequence};

/// Vocabulary cap for the language-model objective: most frequent words
/// plus UNK.
pub const LM_VOCAB_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub dims: EmbedDims,
    pub hidden: usize,
    pub layers: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
    pub patience: usize,
    pub seed: u64,
}

impl TaggerConfig {
    /// Encoder dimensions copied from a parser config so the two encoders
    /// produce states of equal width, as the gating fusion requires.
    pub fn from_parser(cfg: &ParserConfig) -> Self {
        TaggerConfig {
            dims: cfg.dims,
            hidden: cfg.hidden,
            layers: cfg.layers,
            fc1: 128,
            fc2: 64,
            epochs: cfg.epochs,
            batch: cfg.batch,
            lr: cfg.lr,
            dropout: cfg.dropout,
            patience: cfg.patience,
            seed: cfg.seed,
        }
    }

    pub fn desk() -> Self {
        Self::from_parser(&ParserConfig::desk())
    }

    pub fn tiny() -> Self {
        let mut cfg = Self::from_parser(&ParserConfig::tiny());
        cfg.fc1 = 6;
        cfg.fc2 = 5;
        cfg
    }

    pub fn validate(&self) -> Result<(), DcstError> {
        let ok = self.dims.word >= 1
            && self.dims.char_emb >= 1
            && self.dims.char_filters >= 1
            && self.dims.pos >= 1
            && self.hidden >= 1
            && self.layers >= 1
            && self.fc1 >= 1
            && self.fc2 >= 1
            && self.epochs >= 1
            && self.batch >= 1;
        if !ok {
            return Err(DcstError::Config("all dims and counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DcstError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn encoder_out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        let json = serde_json::to_value(self).expect("config echo");
        let mut map = BTreeMap::new();
        if let serde_json::Value::Object(obj) = json {
            for (k, v) in obj {
                match v {
                    serde_json::Value::Object(inner) => {
                        for (k2, v2) in inner {
                            map.insert(format!("{k}.{k2}"), v2.to_string());
                        }
                    }
                    other => {
                        map.insert(k, other.to_string());
                    }
                }
            }
        }
        map
    }
}

/// Sentences paired with scheme tags of matching length.
#[derive(Debug, Clone)]
pub struct TaggedCorpus {
    pub scheme: Scheme,
    pub items: Vec<(Sentence, TagSequence)>,
}

impl TaggedCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Re-encode auto-parsed trees as word-level tags under one scheme.
pub fn derive_tagged_corpus(
    sents: &[Sentence],
    trees: &[DepTree],
    scheme: Scheme,
    table: &CoarsePosTable,
) -> Result<TaggedCorpus, DcstError> {
    if sents.len() != trees.len() {
        return Err(DcstError::Structure(format!(
            "{} sentences but {} trees",
            sents.len(),
            trees.len()
        )));
    }
    let mut items = Vec::with_capacity(sents.len());
    for (sent, tree) in sents.iter().zip(trees) {
        if sent.len() != tree.len() {
            return Err(DcstError::Structure(format!(
                "sentence length {} but tree length {}",
                sent.len(),
                tree.len()
            )));
        }
        let tags = match scheme {
            Scheme::Nc => encode_nc(tree),
            Scheme::Dr => encode_dr(tree),
            Scheme::Rpe => {
                let pos: Vec<&str> = sent.tokens.iter().map(|t| t.upos.as_str()).collect();
                encode_rpe(tree, &pos, table)
            }
            Scheme::Lm => {
                return Err(DcstError::Config(
                    "the LM objective has no tagged corpus; use train_lm_tagger".into(),
                ))
            }
        };
        items.push((sent.clone(), tags));
    }
    Ok(TaggedCorpus { scheme, items })
}

/// A trained tagger: config, input vocabularies, tag vocabulary, parameters.
///
/// Parameter names: `emb.*`/`cnn.*` (embedder), `enc.*` (BiLSTM), `dec.*`
/// (decoder). The hybrid parser absorbs everything under a stream prefix and
/// runs only the `emb`/`cnn`/`enc` part.
#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub cfg: TaggerConfig,
    pub scheme: Scheme,
    pub vocab: InputVocab,
    pub tags: Vocab,
    pub store: ParameterStore,
}

struct DecoderNodes {
    fc1_w: NodeId,
    fc1_b: NodeId,
    fc2_w: NodeId,
    fc2_b: NodeId,
    out_w: NodeId,
    out_b: NodeId,
}

fn init_decoder<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    in_dim: usize,
    cfg: &TaggerConfig,
    n_out: usize,
    rng: &mut R,
) {
    store.insert(&format!("{prefix}fc1.w"), init::glorot(rng, cfg.fc1, in_dim));
    store.insert(&format!("{prefix}fc1.b"), Array2::zeros((cfg.fc1, 1)));
    store.insert(&format!("{prefix}fc2.w"), init::glorot(rng, cfg.fc2, cfg.fc1));
    store.insert(&format!("{prefix}fc2.b"), Array2::zeros((cfg.fc2, 1)));
    store.insert(&format!("{prefix}out.w"), init::glorot(rng, n_out, cfg.fc2));
    store.insert(&format!("{prefix}out.b"), Array2::zeros((n_out, 1)));
}

fn inject_decoder(tape: &mut Tape, store: &ParameterStore, prefix: &str) -> DecoderNodes {
    let get = |tape: &mut Tape, suffix: &str| {
        let name = format!("{prefix}{suffix}");
        tape.param(&name, store.get(&name).clone())
    };
    DecoderNodes {
        fc1_w: get(tape, "fc1.w"),
        fc1_b: get(tape, "fc1.b"),
        fc2_w: get(tape, "fc2.w"),
        fc2_b: get(tape, "fc2.b"),
        out_w: get(tape, "out.w"),
        out_b: get(tape, "out.b"),
    }
}

/// FC + ELU + dropout, FC + ELU + dropout, linear projection to logits.
fn decoder_logits<R: Rng>(
    tape: &mut Tape,
    dec: &DecoderNodes,
    h: NodeId,
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> NodeId {
    let a1 = tape.affine(dec.fc1_w, h, dec.fc1_b);
    let a1 = tape.elu(a1);
    let a1 = tape.dropout(a1, dropout, train, rng);
    let a2 = tape.affine(dec.fc2_w, a1, dec.fc2_b);
    let a2 = tape.elu(a2);
    let a2 = tape.dropout(a2, dropout, train, rng);
    tape.affine(dec.out_w, a2, dec.out_b)
}

impl TaggerModel {
    /// An untrained tagger over a trivial tag vocabulary, used as the
    /// random encoder of the random-gating control.
    pub fn init_random(cfg: &TaggerConfig, vocab: InputVocab, stream: &str) -> Self {
        let tags = Vocab::with_unk(std::iter::empty());
        Self::init_scheme(cfg, Scheme::Nc, vocab, tags, stream)
    }

    fn init_scheme(
        cfg: &TaggerConfig,
        scheme: Scheme,
        vocab: InputVocab,
        tags: Vocab,
        stream: &str,
    ) -> Self {
        let mut store = ParameterStore::new();
        let mut rng = substream(cfg.seed, &format!("{stream}.init"));
        init_embed_params(&mut store, "", &cfg.dims, &vocab, &mut rng);
        BiLstmSpec::new("enc", cfg.dims.input_dim(), cfg.hidden, cfg.layers)
            .init(&mut store, &mut rng);
        match scheme {
            Scheme::Lm => {
                init_decoder(&mut store, "dec.fwd.", cfg.hidden, cfg, tags.len(), &mut rng);
                init_decoder(&mut store, "dec.bwd.", cfg.hidden, cfg, tags.len(), &mut rng);
            }
            _ => {
                init_decoder(&mut store, "dec.", cfg.encoder_out_dim(), cfg, tags.len(), &mut rng)
            }
        }
        TaggerModel { cfg: cfg.clone(), scheme, vocab, tags, store }
    }

    pub fn encoder_spec(&self) -> BiLstmSpec {
        BiLstmSpec::new("enc", self.cfg.dims.input_dim(), self.cfg.hidden, self.cfg.layers)
    }

    /// Encoder states of a batch of same-length sentences: one `(2h, b)`
    /// matrix per time step.
    pub fn encode_batch<R: Rng>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        sents: &[&Sentence],
        train: bool,
        rng: &mut R,
    ) -> Vec<NodeId> {
        let nodes = inject_embed_params(tape, store, "", &self.cfg.dims);
        let steps = embed_batch(tape, &nodes, &self.vocab, sents, self.cfg.dropout, train, rng);
        self.encoder_spec().encode(tape, store, &steps)
    }

    fn tag_id(&self, tag: &str) -> usize {
        self.tags.get_or_unk(tag)
    }

    /// Mean per-sentence tagging loss of a batch of same-length items.
    pub fn batch_loss<R: Rng>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        items: &[(&Sentence, &TagSequence)],
        train: bool,
        rng: &mut R,
    ) -> NodeId {
        assert_ne!(self.scheme, Scheme::Lm, "LM loss uses lm_batch_loss");
        let sents: Vec<&Sentence> = items.iter().map(|(s, _)| *s).collect();
        let enc = self.encode_batch(store, tape, &sents, train, rng);
        let dec = inject_decoder(tape, store, "dec.");
        let mut losses = Vec::with_capacity(enc.len());
        for (t, &h) in enc.iter().enumerate() {
            let logits = decoder_logits(tape, &dec, h, self.cfg.dropout, train, rng);
            let gold: Vec<usize> =
                items.iter().map(|(_, tags)| self.tag_id(&tags.tags[t])).collect();
            losses.push(tape.cross_entropy_cols(logits, &gold));
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l);
        }
        tape.scale(total, 1.0 / items.len() as f64)
    }

    /// Bidirectional LM loss of a batch: the forward half of the final layer
    /// predicts token t+1, the backward half predicts token t−1, both over
    /// the truncated target vocabulary. Sentences must have length >= 2.
    pub fn lm_batch_loss<R: Rng>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        sents: &[&Sentence],
        train: bool,
        rng: &mut R,
    ) -> NodeId {
        assert_eq!(self.scheme, Scheme::Lm);
        let m = sents[0].len();
        assert!(m >= 2, "LM loss needs length >= 2");
        let nodes = inject_embed_params(tape, store, "", &self.cfg.dims);
        let steps = embed_batch(tape, &nodes, &self.vocab, sents, self.cfg.dropout, train, rng);
        let (_, fwd, bwd) = self.encoder_spec().encode_split(tape, store, &steps);
        let dec_f = inject_decoder(tape, store, "dec.fwd.");
        let dec_b = inject_decoder(tape, store, "dec.bwd.");
        let target = |t: usize| -> Vec<usize> {
            sents.iter().map(|s| self.tag_id(&s.tokens[t].form)).collect()
        };
        let mut losses = Vec::new();
        for t in 0..m - 1 {
            let logits = decoder_logits(tape, &dec_f, fwd[t], self.cfg.dropout, train, rng);
            losses.push(tape.cross_entropy_cols(logits, &target(t + 1)));
        }
        for t in 1..m {
            let logits = decoder_logits(tape, &dec_b, bwd[t], self.cfg.dropout, train, rng);
            losses.push(tape.cross_entropy_cols(logits, &target(t - 1)));
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l);
        }
        tape.scale(total, 1.0 / sents.len() as f64)
    }

    /// Predicted tag strings for every sentence (argmax, no dropout).
    pub fn predict_tags(&self, store: &ParameterStore, sents: &[Sentence]) -> Vec<Vec<String>> {
        assert_ne!(self.scheme, Scheme::Lm, "LM models do not emit scheme tags");
        let mut out: Vec<Vec<String>> = vec![Vec::new(); sents.len()];
        let mut rng = substream(0, "tagger.eval");
        for group in group_by_length(sents, self.cfg.batch) {
            let refs: Vec<&Sentence> = group.iter().map(|&i| &sents[i]).collect();
            let mut tape = Tape::new();
            let enc = self.encode_batch(store, &mut tape, &refs, false, &mut rng);
            let dec = inject_decoder(&mut tape, store, "dec.");
            let logit_nodes: Vec<NodeId> = enc
                .iter()
                .map(|&h| decoder_logits(&mut tape, &dec, h, 0.0, false, &mut rng))
                .collect();
            for (b, &idx) in group.iter().enumerate() {
                let tags: Vec<String> = logit_nodes
                    .iter()
                    .map(|&n| {
                        let v = tape.value(n);
                        let mut best = 0;
                        for k in 1..v.nrows() {
                            if v[(k, b)] > v[(best, b)] {
                                best = k;
                            }
                        }
                        self.tags.item(best).to_string()
                    })
                    .collect();
                out[idx] = tags;
            }
        }
        out
    }
}

/// Token-level tag accuracy: per-sentence values plus the micro-average.
pub fn tag_accuracy(
    model: &TaggerModel,
    store: &ParameterStore,
    corpus: &TaggedCorpus,
) -> Result<(Vec<f64>, f64), DcstError> {
    if model.scheme != corpus.scheme {
        return Err(DcstError::Config(format!(
            "model tags {} but corpus is {}",
            model.scheme.name(),
            corpus.scheme.name()
        )));
    }
    if corpus.is_empty() {
        return Err(DcstError::EmptyInput("tagged corpus for accuracy".into()));
    }
    let sents: Vec<Sentence> = corpus.items.iter().map(|(s, _)| s.clone()).collect();
    let pred = model.predict_tags(store, &sents);
    let mut per_sentence = Vec::with_capacity(corpus.len());
    let (mut hit, mut total) = (0usize, 0usize);
    for ((_, gold), pred) in corpus.items.iter().zip(&pred) {
        // An unseen gold tag maps to the UNK class, matching the training
        // objective's view of the data.
        let correct = gold
            .tags
            .iter()
            .zip(pred)
            .filter(|(g, p)| model.tag_id(g) == model.tags.get_or_unk(p))
            .count();
        per_sentence.push(correct as f64 / gold.tags.len() as f64);
        hit += correct;
        total += gold.tags.len();
    }
    Ok((per_sentence, hit as f64 / total as f64))
}

/// Directional next/previous-token accuracy of an LM tagger (mean of both
/// directions), used as its dev early-stopping metric.
pub fn lm_accuracy(
    model: &TaggerModel,
    store: &ParameterStore,
    sents: &[Sentence],
) -> Result<f64, DcstError> {
    assert_eq!(model.scheme, Scheme::Lm);
    let usable: Vec<&Sentence> = sents.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(DcstError::EmptyInput("LM evaluation corpus".into()));
    }
    let mut rng = substream(0, "tagger.eval");
    let (mut hit, mut total) = (0usize, 0usize);
    let mut by_length: BTreeMap<usize, Vec<&Sentence>> = BTreeMap::new();
    for s in usable {
        by_length.entry(s.len()).or_default().push(s);
    }
    for (m, group) in by_length {
        for chunk in group.chunks(model.cfg.batch.max(1)) {
            let mut tape = Tape::new();
            let nodes = inject_embed_params(&mut tape, store, "", &model.cfg.dims);
            let steps =
                embed_batch(&mut tape, &nodes, &model.vocab, chunk, 0.0, false, &mut rng);
            let (_, fwd, bwd) = model.encoder_spec().encode_split(&mut tape, store, &steps);
            let dec_f = inject_decoder(&mut tape, store, "dec.fwd.");
            let dec_b = inject_decoder(&mut tape, store, "dec.bwd.");
            let mut count = |tape: &mut Tape,
                             dec: &DecoderNodes,
                             h: NodeId,
                             target_t: usize,
                             hit: &mut usize,
                             total: &mut usize| {
                let logits = decoder_logits(tape, dec, h, 0.0, false, &mut rng);
                let v = tape.value(logits);
                for (b, s) in chunk.iter().enumerate() {
                    let gold = model.tag_id(&s.tokens[target_t].form);
                    let mut best = 0;
                    for k in 1..v.nrows() {
                        if v[(k, b)] > v[(best, b)] {
                            best = k;
                        }
                    }
                    if best == gold {
                        *hit += 1;
                    }
                    *total += 1;
                }
            };
            for t in 0..m - 1 {
                count(&mut tape, &dec_f, fwd[t], t + 1, &mut hit, &mut total);
            }
            for t in 1..m {
                count(&mut tape, &dec_b, bwd[t], t - 1, &mut hit, &mut total);
            }
        }
    }
    Ok(hit as f64 / total as f64)
}

/// Train a scheme tagger on auto-tagged data, early-stopping on dev tag
/// accuracy (dev may be empty, disabling early stopping).
pub fn train_tagger(
    corpus: &TaggedCorpus,
    dev: &TaggedCorpus,
    cfg: &TaggerConfig,
    stream: &str,
) -> Result<(TaggerModel, TrainHistory), DcstError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(DcstError::EmptyInput("tagger training corpus".into()));
    }
    let sents: Vec<Sentence> = corpus.items.iter().map(|(s, _)| s.clone()).collect();
    let vocab = InputVocab::build(&sents);
    let tags = Vocab::with_unk(
        corpus.items.iter().flat_map(|(_, t)| t.tags.iter().cloned()),
    );
    let mut model = TaggerModel::init_scheme(cfg, corpus.scheme, vocab, tags, stream);

    let lengths: Vec<usize> = sents.iter().map(|s| s.len()).collect();
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        patience: cfg.patience,
        seed: cfg.seed,
        stream: stream.to_string(),
    };
    let model_ref = &model;
    let mut store = model.store.clone();
    let history = {
        let batch_loss = |store: &ParameterStore,
                          tape: &mut Tape,
                          batch: &[usize],
                          rng: &mut ChaCha8Rng|
         -> NodeId {
            let items: Vec<(&Sentence, &TagSequence)> =
                batch.iter().map(|&i| (&corpus.items[i].0, &corpus.items[i].1)).collect();
            model_ref.batch_loss(store, tape, &items, true, rng)
        };
        let dev_metric = |store: &ParameterStore| -> Option<f64> {
            if dev.is_empty() {
                None
            } else {
                let (_, acc) = tag_accuracy(model_ref, store, dev).expect("dev accuracy");
                Some(acc)
            }
        };
        run_train_loop(&mut store, &lengths, batch_loss, dev_metric, &|_| false, &opts)?
    };
    model.store = store;
    Ok((model, history))
}

/// Train a bidirectional LM tagger on raw sentences (DCST-LM baseline).
/// Length-1 sentences carry no LM signal and are skipped.
pub fn train_lm_tagger(
    unlabeled: &[Sentence],
    dev: &[Sentence],
    cfg: &TaggerConfig,
    stream: &str,
) -> Result<(TaggerModel, TrainHistory), DcstError> {
    cfg.validate()?;
    let usable: Vec<Sentence> = unlabeled.iter().filter(|s| s.len() >= 2).cloned().collect();
    if usable.is_empty() {
        return Err(DcstError::EmptyInput(
            "LM training corpus (length >= 2 sentences)".into(),
        ));
    }
    let vocab = InputVocab::build(&usable);
    let tags = lm_target_vocab(&usable, LM_VOCAB_CAP);
    let mut model = TaggerModel::init_scheme(cfg, Scheme::Lm, vocab, tags, stream);

    let lengths: Vec<usize> = usable.iter().map(|s| s.len()).collect();
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        patience: cfg.patience,
        seed: cfg.seed,
        stream: stream.to_string(),
    };
    let model_ref = &model;
    let mut store = model.store.clone();
    let history = {
        let batch_loss = |store: &ParameterStore,
                          tape: &mut Tape,
                          batch: &[usize],
                          rng: &mut ChaCha8Rng|
         -> NodeId {
            let refs: Vec<&Sentence> = batch.iter().map(|&i| &usable[i]).collect();
            model_ref.lm_batch_loss(store, tape, &refs, true, rng)
        };
        let dev_metric = |store: &ParameterStore| -> Option<f64> {
            if dev.iter().any(|s| s.len() >= 2) {
                Some(lm_accuracy(model_ref, store, dev).expect("dev LM accuracy"))
            } else {
                None
            }
        };
        run_train_loop(&mut store, &lengths, batch_loss, dev_metric, &|_| false, &opts)?
    };
    model.store = store;
    Ok((model, history))
}

/// Frequency-truncated LM target vocabulary: the `cap` most frequent forms
/// plus UNK at index 0. Ties break alphabetically for determinism.
fn lm_target_vocab(sents: &[Sentence], cap: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in sents {
        for t in &s.tokens {
            *counts.entry(t.form.clone()).or_insert(0) += 1;
        }
    }
    let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    by_freq.truncate(cap);
    Vocab::with_unk(by_freq.into_iter().map(|(w, _)| w))
}
