//! The biaffine parser: input embedding, stacked BiLSTM encoder, biaffine
//! arc and label scorers, training objective, and MST decoding.

pub mod mst;

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
use crate::metrics;
use crate::nn::init;
use crate::nn::lstm::BiLstmSpec;
use crate::nn::store::ParameterStore;
use crate::nn::substream;
use crate::nn::tape::{NodeId, Tape};
use crate::train::{run_train_loop, TrainHistory, TrainOptions};
use crate::tree::DepTree;

pub use mst::{brute_force_best_tree, decode_mst};

/// Parser hyperparameters. `paper()` carries the published scale; `desk()`
/// is small enough to train on a laptop in seconds to minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub dims: EmbedDims,
    pub hidden: usize,
    pub layers: usize,
    pub arc_mlp: usize,
    pub label_mlp: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
    pub patience: usize,
    pub seed: u64,
}

impl ParserConfig {
    pub fn paper() -> Self {
        ParserConfig {
            dims: EmbedDims { word: 300, char_emb: 100, char_filters: 100, pos: 100 },
            hidden: 1024,
            layers: 3,
            arc_mlp: 512,
            label_mlp: 128,
            epochs: 100,
            batch: 16,
            lr: 0.002,
            dropout: 0.33,
            patience: 10,
            seed: 1,
        }
    }

    pub fn desk() -> Self {
        ParserConfig {
            dims: EmbedDims { word: 50, char_emb: 16, char_filters: 30, pos: 16 },
            hidden: 128,
            layers: 3,
            arc_mlp: 64,
            label_mlp: 64,
            epochs: 30,
            batch: 16,
            lr: 0.002,
            dropout: 0.33,
            patience: 5,
            seed: 1,
        }
    }

    /// Tiny dimensions for gradient checking; full finite differences over
    /// every coordinate stay fast.
    pub fn tiny() -> Self {
        ParserConfig {
            dims: EmbedDims { word: 4, char_emb: 3, char_filters: 4, pos: 3 },
            hidden: 4,
            layers: 2,
            arc_mlp: 5,
            label_mlp: 4,
            epochs: 5,
            batch: 4,
            lr: 0.002,
            dropout: 0.33,
            patience: 2,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), DcstError> {
        let dims_ok = self.dims.word >= 1
            && self.dims.char_emb >= 1
            && self.dims.char_filters >= 1
            && self.dims.pos >= 1
            && self.hidden >= 1
            && self.layers >= 1
            && self.arc_mlp >= 1
            && self.label_mlp >= 1
            && self.epochs >= 1
            && self.batch >= 1;
        if !dims_ok {
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
        flatten_json("", &json, &mut map);
        map
    }
}

fn flatten_json(prefix: &str, value: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    match value {
        serde_json::Value::Object(obj) => {
            for (k, v) in obj {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Tape nodes of the biaffine scorer parameters.
pub struct ScorerNodes {
    pub root: NodeId,
    arc_w: NodeId,
    arc_b: NodeId,
    arc_u: NodeId,
    arc_bias: NodeId,
    lab_w: NodeId,
    lab_b: NodeId,
    lab_u: NodeId,
    lab_aff: NodeId,
    lab_bias: NodeId,
    n_labels: usize,
    label_mlp: usize,
}

/// Register encoder-independent scorer parameters under `prefix`.
pub fn init_scorer_params<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &ParserConfig,
    n_labels: usize,
    rng: &mut R,
) {
    let d = cfg.encoder_out_dim();
    let (a, l) = (cfg.arc_mlp, cfg.label_mlp);
    store.insert(&format!("{prefix}root"), init::glorot(rng, d, 1));
    store.insert(&format!("{prefix}arc_mlp.w"), init::glorot(rng, a, d));
    store.insert(&format!("{prefix}arc_mlp.b"), Array2::zeros((a, 1)));
    store.insert(&format!("{prefix}arc.u"), init::glorot(rng, a, a));
    store.insert(&format!("{prefix}arc.bias"), init::glorot(rng, a, 1));
    store.insert(&format!("{prefix}lab_mlp.w"), init::glorot(rng, l, d));
    store.insert(&format!("{prefix}lab_mlp.b"), Array2::zeros((l, 1)));
    store.insert(&format!("{prefix}lab.u"), init::glorot(rng, n_labels * l, l));
    store.insert(&format!("{prefix}lab.w"), init::glorot(rng, n_labels, 2 * l));
    store.insert(&format!("{prefix}lab.b"), Array2::zeros((n_labels, 1)));
}

pub fn inject_scorer_params(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    cfg: &ParserConfig,
    n_labels: usize,
) -> ScorerNodes {
    let get = |tape: &mut Tape, suffix: &str| {
        let name = format!("{prefix}{suffix}");
        tape.param(&name, store.get(&name).clone())
    };
    ScorerNodes {
        root: get(tape, "root"),
        arc_w: get(tape, "arc_mlp.w"),
        arc_b: get(tape, "arc_mlp.b"),
        arc_u: get(tape, "arc.u"),
        arc_bias: get(tape, "arc.bias"),
        lab_w: get(tape, "lab_mlp.w"),
        lab_b: get(tape, "lab_mlp.b"),
        lab_u: get(tape, "lab.u"),
        lab_aff: get(tape, "lab.w"),
        lab_bias: get(tape, "lab.b"),
        n_labels,
        label_mlp: cfg.label_mlp,
    }
}

/// Arc scores for one sentence: `s[i][j] = r_i' U r_j + w' r_j` with
/// `r = ELU(arc-MLP(h))`. Input `h_sent` is `(2h, m+1)` with the ROOT state
/// in column 0; output is `(m, m+1)` with heads along columns.
pub fn score_arcs<R: Rng>(
    tape: &mut Tape,
    sn: &ScorerNodes,
    h_sent: NodeId,
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> NodeId {
    let (_, cols) = tape.shape(h_sent);
    let m = cols - 1;
    let pre = tape.affine(sn.arc_w, h_sent, sn.arc_b);
    let r = tape.elu(pre);
    let r = tape.dropout(r, dropout, train, rng);
    let ur = tape.matmul(sn.arc_u, r);
    let rt = tape.transpose(r);
    let bilinear = tape.matmul(rt, ur); // (m+1, m+1)
    let wt = tape.transpose(sn.arc_bias);
    let head_prior = tape.matmul(wt, r); // (1, m+1)
    let full = tape.add_row_broadcast(bilinear, head_prior);
    tape.slice_rows(full, 1, m + 1)
}

/// Label MLP states for one sentence, `(label_mlp, m+1)`.
pub fn label_states<R: Rng>(
    tape: &mut Tape,
    sn: &ScorerNodes,
    h_sent: NodeId,
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> NodeId {
    let pre = tape.affine(sn.lab_w, h_sent, sn.lab_b);
    let q = tape.elu(pre);
    tape.dropout(q, dropout, train, rng)
}

/// Label logits `(n_labels, m)` for the given heads (gold at train time,
/// predicted at inference): `l_k = q_i' U_k q_j + w_k' [q_i; q_j] + b_k`.
pub fn score_labels(tape: &mut Tape, sn: &ScorerNodes, q: NodeId, heads: &[usize]) -> NodeId {
    let m = heads.len();
    let cols: Vec<NodeId> = (1..=m)
        .map(|i| {
            let j = heads[i - 1];
            let qi = tape.select_cols(q, &[i]);
            let qj = tape.select_cols(q, &[j]);
            let uqj = tape.matmul(sn.lab_u, qj);
            let uqj = tape.reshape(uqj, sn.n_labels, sn.label_mlp);
            let bilinear = tape.matmul(uqj, qi); // (K, 1)
            let qq = tape.concat_rows(&[qi, qj]);
            let affine = tape.affine(sn.lab_aff, qq, sn.lab_bias);
            tape.add(bilinear, affine)
        })
        .collect();
    tape.stack_cols(&cols)
}

/// Training objective for one sentence: summed head cross-entropy (softmax
/// over the m+1 candidate heads) plus label cross-entropy at the gold heads.
pub fn parse_loss(
    tape: &mut Tape,
    arc_scores: NodeId,
    label_logits: NodeId,
    gold: &DepTree,
    label_ids: &[usize],
) -> NodeId {
    let (m, cols) = tape.shape(arc_scores);
    assert_eq!(gold.len(), m);
    assert_eq!(cols, m + 1);
    let logits_per_dep = tape.transpose(arc_scores); // (m+1, m)
    let head_ce = tape.cross_entropy_cols(logits_per_dep, &gold.heads);
    let label_ce = tape.cross_entropy_cols(label_logits, label_ids);
    tape.add(head_ce, label_ce)
}

/// A trained biaffine parser: config, vocabularies, and parameters.
#[derive(Debug, Clone)]
pub struct ParserModel {
    pub cfg: ParserConfig,
    pub vocab: InputVocab,
    pub labels: Vocab,
    pub store: ParameterStore,
}

impl ParserModel {
    /// Freshly initialized parameters for the given vocabularies.
    pub fn init(cfg: &ParserConfig, vocab: InputVocab, labels: Vocab, seed: u64, stream: &str) -> Self {
        let mut store = ParameterStore::new();
        let mut rng = substream(seed, &format!("{stream}.init"));
        init_embed_params(&mut store, "", &cfg.dims, &vocab, &mut rng);
        BiLstmSpec::new("enc", cfg.dims.input_dim(), cfg.hidden, cfg.layers)
            .init(&mut store, &mut rng);
        init_scorer_params(&mut store, "", cfg, labels.len(), &mut rng);
        ParserModel { cfg: cfg.clone(), vocab, labels, store }
    }

    pub fn encoder_spec(&self) -> BiLstmSpec {
        BiLstmSpec::new("enc", self.cfg.dims.input_dim(), self.cfg.hidden, self.cfg.layers)
    }

    fn label_id(&self, deprel: &str) -> usize {
        self.labels.get(deprel).unwrap_or(0)
    }

    /// Encode a batch of same-length sentences: per-timestep `(2h, b)` states.
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
        let enc = self.encoder_spec().encode(tape, store, &steps);
        enc.into_iter()
            .map(|h| tape.dropout(h, self.cfg.dropout, train, rng))
            .collect()
    }

    /// Mean per-sentence parse loss of a batch of same-length gold sentences.
    pub fn batch_loss<R: Rng>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        sents: &[&Sentence],
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId, DcstError> {
        let enc = self.encode_batch(store, tape, sents, train, rng);
        let sn = inject_scorer_params(tape, store, "", &self.cfg, self.labels.len());
        let mut losses = Vec::with_capacity(sents.len());
        for (b, sent) in sents.iter().enumerate() {
            let gold = DepTree::from_sentence(sent)?;
            let label_ids: Vec<usize> = sent
                .tokens
                .iter()
                .map(|t| self.label_id(t.deprel.as_deref().unwrap_or("")))
                .collect();
            let h_sent = sentence_hidden(tape, &enc, b, sn.root);
            let arcs = score_arcs(tape, &sn, h_sent, self.cfg.dropout, train, rng);
            let q = label_states(tape, &sn, h_sent, self.cfg.dropout, train, rng);
            let labels = score_labels(tape, &sn, q, &gold.heads);
            losses.push(parse_loss(tape, arcs, labels, &gold, &label_ids));
        }
        let total = if losses.len() == 1 { losses[0] } else { sum_nodes(tape, &losses) };
        Ok(tape.scale(total, 1.0 / sents.len() as f64))
    }

    /// Raw arc score matrix of one sentence (no dropout).
    pub fn arc_score_values(&self, store: &ParameterStore, sent: &Sentence) -> Array2<f64> {
        let mut rng = substream(0, "parser.eval");
        let mut tape = Tape::new();
        let enc = self.encode_batch(store, &mut tape, &[sent], false, &mut rng);
        let sn = inject_scorer_params(&mut tape, store, "", &self.cfg, self.labels.len());
        let h_sent = sentence_hidden(&mut tape, &enc, 0, sn.root);
        let arcs = score_arcs(&mut tape, &sn, h_sent, 0.0, false, &mut rng);
        tape.value(arcs).clone()
    }

    /// MST-decode heads and argmax labels for a batch of sentences.
    pub fn predict_with_store(
        &self,
        store: &ParameterStore,
        sents: &[Sentence],
    ) -> Vec<DepTree> {
        let mut out: Vec<Option<DepTree>> = vec![None; sents.len()];
        let mut rng = substream(0, "parser.eval");
        for group in group_by_length(sents, self.cfg.batch) {
            let refs: Vec<&Sentence> = group.iter().map(|&i| &sents[i]).collect();
            let mut tape = Tape::new();
            let enc = self.encode_batch(store, &mut tape, &refs, false, &mut rng);
            let sn = inject_scorer_params(&mut tape, store, "", &self.cfg, self.labels.len());
            for (b, &idx) in group.iter().enumerate() {
                let h_sent = sentence_hidden(&mut tape, &enc, b, sn.root);
                let tree =
                    decode_sentence(&mut tape, &sn, h_sent, &self.labels, &mut rng);
                out[idx] = Some(tree);
            }
        }
        out.into_iter().map(|t| t.expect("all sentences decoded")).collect()
    }

    pub fn predict(&self, sents: &[Sentence]) -> Vec<DepTree> {
        self.predict_with_store(&self.store, sents)
    }

    /// UAS/LAS of this model on a gold corpus.
    pub fn evaluate(
        &self,
        store: &ParameterStore,
        gold: &[Sentence],
    ) -> Result<(f64, f64), DcstError> {
        let gold_trees: Result<Vec<DepTree>, _> =
            gold.iter().map(DepTree::from_sentence).collect();
        let pred = self.predict_with_store(store, gold);
        metrics::uas_las(&gold_trees?, &pred)
    }
}

/// Decode one sentence from its hidden states already on the tape.
pub fn decode_sentence<R: Rng>(
    tape: &mut Tape,
    sn: &ScorerNodes,
    h_sent: NodeId,
    labels: &Vocab,
    rng: &mut R,
) -> DepTree {
    let arcs = score_arcs(tape, sn, h_sent, 0.0, false, rng);
    let mut scores = tape.value(arcs).clone();
    let m = scores.nrows();
    // The model never proposes self-attachment; mask the diagonal.
    for i in 0..m {
        scores[(i, i + 1)] = f64::NEG_INFINITY;
    }
    let heads = decode_mst(&scores);
    let q = label_states(tape, sn, h_sent, 0.0, false, rng);
    let logits = score_labels(tape, sn, q, &heads);
    let values = tape.value(logits);
    let labels: Vec<String> = (0..m)
        .map(|i| {
            let mut best = 0;
            for k in 1..values.nrows() {
                if values[(k, i)] > values[(best, i)] {
                    best = k;
                }
            }
            labels.item(best).to_string()
        })
        .collect();
    DepTree::new(heads, Some(labels)).expect("MST output is a valid tree")
}

/// Column-stack the learned ROOT state with sentence `b`'s encoder states.
pub fn sentence_hidden(tape: &mut Tape, enc: &[NodeId], b: usize, root: NodeId) -> NodeId {
    let mut cols = vec![root];
    for &step in enc {
        cols.push(tape.select_cols(step, &[b]));
    }
    tape.stack_cols(&cols)
}

fn sum_nodes(tape: &mut Tape, nodes: &[NodeId]) -> NodeId {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = tape.add(acc, n);
    }
    acc
}

/// Stable grouping of sentence indices into same-length batches.
pub fn group_by_length(sents: &[Sentence], batch: usize) -> Vec<Vec<usize>> {
    let mut by_length: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in sents.iter().enumerate() {
        by_length.entry(s.len()).or_default().push(i);
    }
    let mut groups = Vec::new();
    for idxs in by_length.values() {
        for chunk in idxs.chunks(batch.max(1)) {
            groups.push(chunk.to_vec());
        }
    }
    groups
}

/// Train a biaffine parser on a labeled corpus with early stopping on dev
/// LAS. Dev may be empty, disabling early stopping.
pub fn train_parser(
    labeled: &[Sentence],
    dev: &[Sentence],
    cfg: &ParserConfig,
    stream: &str,
) -> Result<(ParserModel, TrainHistory), DcstError> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(DcstError::EmptyInput("labeled training corpus".into()));
    }
    for s in labeled {
        DepTree::from_sentence(s)?;
    }
    let vocab = InputVocab::build(labeled);
    let labels = Vocab::closed(
        labeled
            .iter()
            .flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone())),
    );
    let mut model = ParserModel::init(cfg, vocab, labels, cfg.seed, stream);

    let lengths: Vec<usize> = labeled.iter().map(|s| s.len()).collect();
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
            let refs: Vec<&Sentence> = batch.iter().map(|&i| &labeled[i]).collect();
            model_ref
                .batch_loss(store, tape, &refs, true, rng)
                .expect("validated corpus")
        };
        let dev_metric = |store: &ParameterStore| -> Option<f64> {
            if dev.is_empty() {
                None
            } else {
                let (_, las) = model_ref.evaluate(store, dev).expect("dev evaluation");
                Some(las)
            }
        };
        run_train_loop(&mut store, &lengths, batch_loss, dev_metric, &|_| false, &opts)?
    };
    model.store = store;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::parse_conllu;
    use approx::assert_abs_diff_eq;

    fn toy() -> Vec<Sentence> {
        parse_conllu(
            "1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
             2\tdog\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
             3\truns\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n\
             1\ta\t_\tDET\t_\t_\t2\tdet\t_\t_\n\
             2\tcat\t_\tNOUN\t_\t_\t4\tnsubj\t_\t_\n\
             3\toften\t_\tADV\t_\t_\t4\tadvmod\t_\t_\n\
             4\tsleeps\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n",
        )
        .unwrap()
    }

    fn toy_model() -> (ParserModel, Vec<Sentence>) {
        let corpus = toy();
        let cfg = ParserConfig::tiny();
        let vocab = InputVocab::build(&corpus);
        let labels = Vocab::closed(
            corpus
                .iter()
                .flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone())),
        );
        (ParserModel::init(&cfg, vocab, labels, 7, "parser"), corpus)
    }

    #[test]
    fn arc_scores_shape() {
        let (model, corpus) = toy_model();
        let scores = model.arc_score_values(&model.store, &corpus[1]);
        assert_eq!(scores.dim(), (4, 5));
        assert!(scores.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_scorer_params_give_zero_scores_and_uniform_loss() {
        let (mut model, corpus) = toy_model();
        // Zero every scorer parameter; MLP biases are zero so ELU(0) = 0.
        for name in ["arc.u", "arc.bias", "arc_mlp.w", "lab_mlp.w", "lab.u", "lab.w"] {
            let dim = model.store.get(name).dim();
            model.store.set(name, Array2::zeros(dim));
        }
        let scores = model.arc_score_values(&model.store, &corpus[0]);
        assert!(scores.iter().all(|&v| v == 0.0));

        // Uniform-score loss closed form: m (ln(m+1) + ln K).
        let mut rng = substream(0, "t");
        let mut tape = Tape::new();
        let loss = model
            .batch_loss(&model.store, &mut tape, &[&corpus[0]], false, &mut rng)
            .unwrap();
        let m = 3.0f64;
        let k = model.labels.len() as f64;
        assert_abs_diff_eq!(
            tape.scalar_value(loss),
            m * ((m + 1.0).ln() + k.ln()),
            epsilon = 1e-9
        );
    }

    #[test]
    fn uniform_loss_closed_form_any_scores() {
        // parse_loss directly on zero score leaves.
        let mut tape = Tape::new();
        let m = 5;
        let k = 7;
        let arcs = tape.leaf(Array2::zeros((m, m + 1)));
        let labels = tape.leaf(Array2::zeros((k, m)));
        let gold = DepTree::new(vec![0, 1, 2, 1, 4], None).unwrap();
        let loss = parse_loss(&mut tape, arcs, labels, &gold, &[0, 1, 2, 3, 4]);
        assert_abs_diff_eq!(
            tape.scalar_value(loss),
            5.0 * (6f64.ln() + 7f64.ln()),
            epsilon = 1e-9
        );
    }

    #[test]
    fn peaked_scores_drive_loss_to_zero() {
        let mut tape = Tape::new();
        let gold = DepTree::new(vec![2, 0], None).unwrap();
        let mut arcs = Array2::zeros((2, 3));
        arcs[(0, 2)] = 1e6;
        arcs[(1, 0)] = 1e6;
        let mut labels = Array2::zeros((3, 2));
        labels[(1, 0)] = 1e6;
        labels[(2, 1)] = 1e6;
        let a = tape.leaf(arcs);
        let l = tape.leaf(labels);
        let loss = parse_loss(&mut tape, a, l, &gold, &[1, 2]);
        assert!(tape.scalar_value(loss) < 1e-9);
    }

    #[test]
    fn predictions_are_valid_trees_under_random_weights() {
        let (model, _) = toy_model();
        // Random-weight model over random sentences: every output validates.
        let corpus = toy();
        for _ in 0..20 {
            let pred = model.predict(&corpus);
            for t in &pred {
                assert!(crate::tree::validate_tree(&t.heads).is_ok());
            }
        }
        // 1-token sentence.
        let one = parse_conllu("1\thi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n\n").unwrap();
        let pred = model.predict(&one);
        assert_eq!(pred[0].heads, vec![0]);
    }

    #[test]
    fn loss_decreases_over_adam_steps() {
        let (model, corpus) = toy_model();
        let mut store = model.store.clone();
        let mut rng = substream(3, "t");
        let mut first = None;
        let mut last = None;
        for _ in 0..200 {
            let mut tape = Tape::new();
            let loss = model.batch_loss(&store, &mut tape, &[&corpus[0]], false, &mut rng).unwrap();
            let v = tape.scalar_value(loss);
            first.get_or_insert(v);
            last = Some(v);
            let grads = tape.backward(loss);
            store
                .adam_update(&grads, &crate::nn::store::AdamConfig::default(), &|_| false)
                .unwrap();
        }
        assert!(last.unwrap() < 0.5 * first.unwrap(), "{:?} -> {:?}", first, last);
    }

    #[test]
    fn gradients_match_finite_differences_on_toy_batch() {
        let (model, corpus) = toy_model();
        let refs: Vec<&Sentence> = vec![&corpus[1]];
        let report = crate::nn::grad_check(
            &model.store,
            |store, tape| {
                let mut rng = substream(0, "gc");
                model.batch_loss(store, tape, &refs, false, &mut rng).unwrap()
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "failures: {:?}", report.failures());
    }

    #[test]
    fn training_is_deterministic_and_overfits() {
        let corpus = toy();
        let mut cfg = ParserConfig::tiny();
        cfg.dims = EmbedDims { word: 16, char_emb: 8, char_filters: 8, pos: 8 };
        cfg.hidden = 24;
        cfg.arc_mlp = 16;
        cfg.label_mlp = 12;
        cfg.epochs = 60;
        cfg.dropout = 0.0;
        let (model_a, _) = train_parser(&corpus, &[], &cfg, "parser").unwrap();
        let (model_b, _) = train_parser(&corpus, &[], &cfg, "parser").unwrap();
        for (name, value) in model_a.store.iter() {
            assert_eq!(value, model_b.store.get(name), "parameter {name} differs");
        }
        let (uas, _) = model_a.evaluate(&model_a.store, &corpus).unwrap();
        assert!(uas >= 0.9, "train UAS {}", uas);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(train_parser(&[], &[], &ParserConfig::tiny(), "parser").is_err());
    }
}
