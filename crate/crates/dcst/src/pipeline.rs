//! Orchestration of the full self-training pipeline and the experimental
//! protocols around it: the five-step DCST procedure, classic self-training,
//! the random-gating control, and the multi-model experiment harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conllu::{strip_annotations, Sentence};
use crate::error::DcstError;
use crate::features::{
    embed_batch, init_embed_params, inject_embed_params, EmbedDims, InputVocab, Vocab,
};
use crate::gating::{gate2, gate_n, init_gate2_params, init_gate_n_params};
use crate::metrics;
use crate::nn::lstm::BiLstmSpec;
use crate::nn::store::ParameterStore;
use crate::nn::substream;
use crate::nn::tape::{NodeId, Tape};
use crate::nn::Archive;
use crate::parser::{
    decode_sentence, group_by_length, init_scorer_params, inject_scorer_params, parse_loss,
    score_arcs, score_labels, sentence_hidden, train_parser, label_states, ParserConfig,
    ParserModel,
};
use crate::tagger::{
    derive_tagged_corpus, tag_accuracy, train_lm_tagger, train_tagger, TaggedCorpus,
    TaggerConfig, TaggerModel,
};
use crate::train::{run_train_loop, TrainHistory, TrainOptions};
use crate::tree::{CoarsePosTable, DepTree, Scheme};

/// Whether the hybrid keeps tagger-stream parameters fixed during step 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeMode {
    Frozen,
    Trainable,
    /// Train both variants and keep the better dev LAS.
    TuneOnDev,
}

impl FreezeMode {
    pub fn name(self) -> &'static str {
        match self {
            FreezeMode::Frozen => "frozen",
            FreezeMode::Trainable => "trainable",
            FreezeMode::TuneOnDev => "tune_on_dev",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "frozen" | "true" => Some(FreezeMode::Frozen),
            "trainable" | "false" => Some(FreezeMode::Trainable),
            "tune_on_dev" => Some(FreezeMode::TuneOnDev),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub parser: ParserConfig,
    pub tagger: TaggerConfig,
    pub freeze: FreezeMode,
    pub pos_table: CoarsePosTable,
}

impl PipelineConfig {
    pub fn desk() -> Self {
        PipelineConfig {
            parser: ParserConfig::desk(),
            tagger: TaggerConfig::desk(),
            freeze: FreezeMode::Frozen,
            pos_table: CoarsePosTable::default(),
        }
    }
}

/// One auxiliary encoder stream inside the hybrid: its own embedder and
/// BiLSTM, all parameters prefixed `tgr.{name}.`.
#[derive(Debug, Clone)]
pub struct TaggerStream {
    pub name: String,
    pub vocab: InputVocab,
    pub dims: EmbedDims,
    pub hidden: usize,
    pub layers: usize,
}

impl TaggerStream {
    fn prefix(&self) -> String {
        format!("tgr.{}.", self.name)
    }

    fn encoder_spec(&self) -> BiLstmSpec {
        BiLstmSpec::new(&format!("tgr.{}.enc", self.name), self.dims.input_dim(), self.hidden, self.layers)
    }
}

/// The step-5 parser: a freshly initialized biaffine parser whose encoder
/// states are fused with one or more tagger encoders through a gate before
/// the scorer MLPs. The ROOT dummy state bypasses gating.
#[derive(Debug, Clone)]
pub struct HybridParser {
    pub cfg: ParserConfig,
    pub vocab: InputVocab,
    pub labels: Vocab,
    pub streams: Vec<TaggerStream>,
    pub frozen: bool,
    pub store: ParameterStore,
}

/// Update filter for hybrid training: tagger streams are skipped when
/// frozen.
pub fn hybrid_skip(frozen: bool) -> impl Fn(&str) -> bool {
    move |name: &str| frozen && name.starts_with("tgr.")
}

/// Assemble a hybrid: fresh parser and gate parameters, tagger embedder and
/// encoder tensors copied from the given models (decoders are dropped).
pub fn build_hybrid(
    cfg: &ParserConfig,
    vocab: InputVocab,
    labels: Vocab,
    taggers: &[(&str, &TaggerModel)],
    frozen: bool,
    stream: &str,
) -> Result<HybridParser, DcstError> {
    if taggers.is_empty() {
        return Err(DcstError::Config("hybrid needs at least one tagger stream".into()));
    }
    let d = cfg.encoder_out_dim();
    let mut store = ParameterStore::new();
    let mut rng = substream(cfg.seed, &format!("{stream}.init"));
    init_embed_params(&mut store, "", &cfg.dims, &vocab, &mut rng);
    BiLstmSpec::new("enc", cfg.dims.input_dim(), cfg.hidden, cfg.layers)
        .init(&mut store, &mut rng);
    init_scorer_params(&mut store, "", cfg, labels.len(), &mut rng);

    let mut streams = Vec::with_capacity(taggers.len());
    for (name, tm) in taggers {
        if tm.cfg.encoder_out_dim() != d {
            return Err(DcstError::Shape(format!(
                "tagger stream {name} has encoder dim {} but parser has {d}",
                tm.cfg.encoder_out_dim()
            )));
        }
        let s = TaggerStream {
            name: name.to_string(),
            vocab: tm.vocab.clone(),
            dims: tm.cfg.dims,
            hidden: tm.cfg.hidden,
            layers: tm.cfg.layers,
        };
        for (pname, value) in tm.store.iter() {
            if pname.starts_with("dec.") {
                continue;
            }
            store.insert(&format!("{}{pname}", s.prefix()), value.clone());
        }
        streams.push(s);
    }
    if streams.len() == 1 {
        init_gate2_params(&mut store, "gate.", d, &mut rng);
    } else {
        init_gate_n_params(&mut store, "gate.", d, streams.len(), &mut rng);
    }
    Ok(HybridParser { cfg: cfg.clone(), vocab, labels, streams, frozen, store })
}

impl HybridParser {
    fn label_id(&self, deprel: &str) -> usize {
        self.labels.get(deprel).unwrap_or(0)
    }

    /// Fused encoder states of a batch of same-length sentences, one
    /// `(2h, b)` matrix per time step.
    pub fn encode_fused<R: rand::Rng>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        sents: &[&Sentence],
        train: bool,
        rng: &mut R,
    ) -> Vec<NodeId> {
        let nodes = inject_embed_params(tape, store, "", &self.cfg.dims);
        let steps = embed_batch(tape, &nodes, &self.vocab, sents, self.cfg.dropout, train, rng);
        let p_states = BiLstmSpec::new("enc", self.cfg.dims.input_dim(), self.cfg.hidden, self.cfg.layers)
            .encode(tape, store, &steps);
        let mut stream_states: Vec<Vec<NodeId>> = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            let nodes = inject_embed_params(tape, store, &s.prefix(), &s.dims);
            // Tagger streams are feature extractors here; no input dropout.
            let steps = embed_batch(tape, &nodes, &s.vocab, sents, 0.0, false, rng);
            stream_states.push(s.encoder_spec().encode(tape, store, &steps));
        }
        (0..p_states.len())
            .map(|t| {
                let fused = if self.streams.len() == 1 {
                    gate2(tape, store, "gate.", p_states[t], stream_states[0][t])
                } else {
                    let taggers: Vec<NodeId> =
                        stream_states.iter().map(|s| s[t]).collect();
                    gate_n(tape, store, "gate.", p_states[t], &taggers)
                };
                tape.dropout(fused, self.cfg.dropout, train, rng)
            })
            .collect()
    }

    /// Mean per-sentence parse loss of a batch of same-length sentences.
    pub fn batch_loss<R: rand::Rng>(
        &self,
        store: &ParameterStore,
        tape: &mut Tape,
        sents: &[&Sentence],
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId, DcstError> {
        let enc = self.encode_fused(store, tape, sents, train, rng);
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
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l);
        }
        Ok(tape.scale(total, 1.0 / sents.len() as f64))
    }

    pub fn predict_with_store(
        &self,
        store: &ParameterStore,
        sents: &[Sentence],
    ) -> Vec<DepTree> {
        let mut out: Vec<Option<DepTree>> = vec![None; sents.len()];
        let mut rng = substream(0, "hybrid.eval");
        for group in group_by_length(sents, self.cfg.batch) {
            let refs: Vec<&Sentence> = group.iter().map(|&i| &sents[i]).collect();
            let mut tape = Tape::new();
            let enc = self.encode_fused(store, &mut tape, &refs, false, &mut rng);
            let sn = inject_scorer_params(&mut tape, store, "", &self.cfg, self.labels.len());
            for (b, &idx) in group.iter().enumerate() {
                let h_sent = sentence_hidden(&mut tape, &enc, b, sn.root);
                out[idx] = Some(decode_sentence(&mut tape, &sn, h_sent, &self.labels, &mut rng));
            }
        }
        out.into_iter().map(|t| t.expect("all sentences decoded")).collect()
    }

    pub fn predict(&self, sents: &[Sentence]) -> Vec<DepTree> {
        self.predict_with_store(&self.store, sents)
    }

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

/// Train an assembled hybrid on labeled data with early stopping on dev LAS.
pub fn train_hybrid(
    hybrid: &mut HybridParser,
    labeled: &[Sentence],
    dev: &[Sentence],
    stream: &str,
) -> Result<TrainHistory, DcstError> {
    if labeled.is_empty() {
        return Err(DcstError::EmptyInput("hybrid training corpus".into()));
    }
    let cfg = hybrid.cfg.clone();
    let lengths: Vec<usize> = labeled.iter().map(|s| s.len()).collect();
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        patience: cfg.patience,
        seed: cfg.seed,
        stream: stream.to_string(),
    };
    let skip = hybrid_skip(hybrid.frozen);
    let hybrid_ref = &*hybrid;
    let mut store = hybrid.store.clone();
    let history = {
        let batch_loss = |store: &ParameterStore,
                          tape: &mut Tape,
                          batch: &[usize],
                          rng: &mut ChaCha8Rng|
         -> NodeId {
            let refs: Vec<&Sentence> = batch.iter().map(|&i| &labeled[i]).collect();
            hybrid_ref.batch_loss(store, tape, &refs, true, rng).expect("validated corpus")
        };
        let dev_metric = |store: &ParameterStore| -> Option<f64> {
            if dev.is_empty() {
                None
            } else {
                let (_, las) = hybrid_ref.evaluate(store, dev).expect("dev evaluation");
                Some(las)
            }
        };
        run_train_loop(&mut store, &lengths, batch_loss, dev_metric, &skip, &opts)?
    };
    hybrid.store = store;
    Ok(history)
}

/// Seeded uniform split of a gold corpus into labeled train, dev, and the
/// stripped remainder used as unlabeled data.
pub fn sample_split(
    corpus: &[Sentence],
    n_train: usize,
    n_dev: usize,
    seed: u64,
) -> Result<(Vec<Sentence>, Vec<Sentence>, Vec<Sentence>), DcstError> {
    if corpus.len() < n_train + n_dev {
        return Err(DcstError::Config(format!(
            "corpus of {} sentences cannot supply {} train + {} dev",
            corpus.len(),
            n_train,
            n_dev
        )));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = substream(seed, "split");
    idx.shuffle(&mut rng);
    let train = idx[..n_train].iter().map(|&i| corpus[i].clone()).collect();
    let dev = idx[n_train..n_train + n_dev].iter().map(|&i| corpus[i].clone()).collect();
    let unlabeled = idx[n_train + n_dev..]
        .iter()
        .map(|&i| strip_annotations(&corpus[i]))
        .collect();
    Ok((train, dev, unlabeled))
}

/// Partition by sentence length: `(m <= threshold, rest)`.
pub fn split_by_length(corpus: &[Sentence], threshold: usize) -> (Vec<Sentence>, Vec<Sentence>) {
    let (short, long): (Vec<_>, Vec<_>) =
        corpus.iter().cloned().partition(|s| s.len() <= threshold);
    (short, long)
}

/// Copy predicted heads and labels onto (stripped) sentences.
pub fn annotate(sents: &[Sentence], trees: &[DepTree]) -> Result<Vec<Sentence>, DcstError> {
    if sents.len() != trees.len() {
        return Err(DcstError::Structure(format!(
            "{} sentences but {} trees",
            sents.len(),
            trees.len()
        )));
    }
    sents
        .iter()
        .zip(trees)
        .map(|(s, t)| {
            if s.len() != t.len() {
                return Err(DcstError::Structure(format!(
                    "sentence length {} but tree length {}",
                    s.len(),
                    t.len()
                )));
            }
            let mut s = s.clone();
            for (i, tok) in s.tokens.iter_mut().enumerate() {
                tok.head = Some(t.heads[i]);
                tok.deprel = Some(match &t.labels {
                    Some(labels) => labels[i].clone(),
                    None => "dep".to_string(),
                });
            }
            Ok(s)
        })
        .collect()
}

/// Per-stage metrics of one DCST run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageReport {
    pub base_dev_uas: Option<f64>,
    pub base_dev_las: Option<f64>,
    pub tagger_dev_acc: BTreeMap<String, f64>,
    pub hybrid_dev_uas: Option<f64>,
    pub hybrid_dev_las: Option<f64>,
    pub frozen: bool,
}

pub struct DcstOutcome {
    pub base: ParserModel,
    pub taggers: Vec<(Scheme, TaggerModel)>,
    pub hybrid: HybridParser,
    pub report: StageReport,
}

/// Hold out the tail of the auto-tagged corpus as the tagger's dev set.
fn tagger_dev_split(corpus: TaggedCorpus) -> (TaggedCorpus, TaggedCorpus) {
    let n = corpus.len();
    let n_dev = (n / 10).max(1).min(n.saturating_sub(1));
    let scheme = corpus.scheme;
    let mut items = corpus.items;
    let dev_items = items.split_off(n - n_dev);
    (
        TaggedCorpus { scheme, items },
        TaggedCorpus { scheme, items: dev_items },
    )
}

/// The five-step procedure: base parser on L, auto-parse U, re-encode as
/// tags, pre-train one tagger per scheme, then train the gated hybrid on L.
pub fn run_dcst(
    labeled: &[Sentence],
    dev: &[Sentence],
    unlabeled: &[Sentence],
    schemes: &[Scheme],
    cfg: &PipelineConfig,
    stream: &str,
) -> Result<DcstOutcome, DcstError> {
    if schemes.is_empty() {
        return Err(DcstError::Config("DCST needs at least one tagging scheme".into()));
    }
    if unlabeled.is_empty() {
        return Err(DcstError::EmptyInput("unlabeled corpus".into()));
    }
    // Step 1: base parser.
    let (base, _) = train_parser(labeled, dev, &cfg.parser, &format!("{stream}.base"))?;
    let mut report = StageReport::default();
    if !dev.is_empty() {
        let (uas, las) = base.evaluate(&base.store, dev)?;
        report.base_dev_uas = Some(uas);
        report.base_dev_las = Some(las);
    }
    // Step 2: auto-parse U.
    let stripped: Vec<Sentence> = unlabeled.iter().map(strip_annotations).collect();
    let auto_trees = base.predict(&stripped);
    // Steps 3 + 4: one tagger per scheme.
    let mut taggers: Vec<(Scheme, TaggerModel)> = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let tstream = format!("{stream}.tgr.{}", scheme.name());
        let (model, _) = match scheme {
            Scheme::Lm => {
                let n = stripped.len();
                let n_dev = (n / 10).max(1).min(n.saturating_sub(1));
                let (train, tdev) = stripped.split_at(n - n_dev);
                let out = train_lm_tagger(train, tdev, &cfg.tagger, &tstream)?;
                let acc =
                    crate::tagger::lm_accuracy(&out.0, &out.0.store, tdev).unwrap_or(0.0);
                report.tagger_dev_acc.insert(scheme.name().to_string(), acc);
                out
            }
            _ => {
                let corpus =
                    derive_tagged_corpus(&stripped, &auto_trees, scheme, &cfg.pos_table)?;
                let (train, tdev) = tagger_dev_split(corpus);
                let out = train_tagger(&train, &tdev, &cfg.tagger, &tstream)?;
                let (_, acc) = tag_accuracy(&out.0, &out.0.store, &tdev)?;
                report.tagger_dev_acc.insert(scheme.name().to_string(), acc);
                out
            }
        };
        taggers.push((scheme, model));
    }
    // Step 5: gated hybrid with a fresh parser.
    let named: Vec<(&str, &TaggerModel)> =
        taggers.iter().map(|(s, m)| (s.name(), m)).collect();
    let hybrid = train_hybrid_with_freeze(
        &cfg.parser,
        &base,
        &named,
        labeled,
        dev,
        cfg.freeze,
        stream,
        &mut report,
    )?;
    Ok(DcstOutcome { base, taggers, hybrid, report })
}

#[allow(clippy::too_many_arguments)]
fn train_hybrid_with_freeze(
    parser_cfg: &ParserConfig,
    base: &ParserModel,
    taggers: &[(&str, &TaggerModel)],
    labeled: &[Sentence],
    dev: &[Sentence],
    freeze: FreezeMode,
    stream: &str,
    report: &mut StageReport,
) -> Result<HybridParser, DcstError> {
    let run = |frozen: bool| -> Result<(HybridParser, Option<f64>, Option<f64>), DcstError> {
        let mut hybrid = build_hybrid(
            parser_cfg,
            base.vocab.clone(),
            base.labels.clone(),
            taggers,
            frozen,
            &format!("{stream}.hybrid"),
        )?;
        train_hybrid(&mut hybrid, labeled, dev, &format!("{stream}.hybrid"))?;
        let (uas, las) = if dev.is_empty() {
            (None, None)
        } else {
            let (u, l) = hybrid.evaluate(&hybrid.store, dev)?;
            (Some(u), Some(l))
        };
        Ok((hybrid, uas, las))
    };
    let (hybrid, uas, las) = match freeze {
        FreezeMode::Frozen => run(true)?,
        FreezeMode::Trainable => run(false)?,
        FreezeMode::TuneOnDev => {
            if dev.is_empty() {
                run(true)?
            } else {
                let frozen = run(true)?;
                let trainable = run(false)?;
                if trainable.2 > frozen.2 {
                    trainable
                } else {
                    frozen
                }
            }
        }
    };
    report.hybrid_dev_uas = uas;
    report.hybrid_dev_las = las;
    report.frozen = hybrid.frozen;
    Ok(hybrid)
}

/// Classic self-training: one round of retraining a fresh parser on the
/// union of gold L and auto-parsed U.
pub fn run_self_training(
    labeled: &[Sentence],
    dev: &[Sentence],
    unlabeled: &[Sentence],
    cfg: &PipelineConfig,
    stream: &str,
) -> Result<(ParserModel, TrainHistory), DcstError> {
    let (base, _) = train_parser(labeled, dev, &cfg.parser, &format!("{stream}.base"))?;
    let stripped: Vec<Sentence> = unlabeled.iter().map(strip_annotations).collect();
    let auto = annotate(&stripped, &base.predict(&stripped))?;
    let mut combined = labeled.to_vec();
    combined.extend(auto);
    train_parser(&combined, dev, &cfg.parser, &format!("{stream}.st"))
}

/// The random-gating control: a hybrid over one untrained, randomly
/// initialized tagger encoder, with no pre-training stages.
pub fn run_random_gating(
    labeled: &[Sentence],
    dev: &[Sentence],
    cfg: &PipelineConfig,
    trained: bool,
    stream: &str,
) -> Result<(HybridParser, StageReport), DcstError> {
    let (base, _) = train_parser(labeled, dev, &cfg.parser, &format!("{stream}.base"))?;
    let vocab = InputVocab::build(labeled);
    let random_tagger =
        TaggerModel::init_random(&cfg.tagger, vocab, &format!("{stream}.rg"));
    let mut report = StageReport::default();
    if !dev.is_empty() {
        let (uas, las) = base.evaluate(&base.store, dev)?;
        report.base_dev_uas = Some(uas);
        report.base_dev_las = Some(las);
    }
    let freeze = if trained { FreezeMode::Trainable } else { FreezeMode::Frozen };
    let hybrid = train_hybrid_with_freeze(
        &cfg.parser,
        &base,
        &[("rg", &random_tagger)],
        labeled,
        dev,
        freeze,
        stream,
        &mut report,
    )?;
    Ok((hybrid, report))
}

/// The model zoo of the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Base,
    BaseFs,
    BaseRg,
    SelfTraining,
    DcstLm,
    DcstNc,
    DcstDr,
    DcstRpe,
    DcstEns,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Base,
        ModelKind::BaseFs,
        ModelKind::BaseRg,
        ModelKind::SelfTraining,
        ModelKind::DcstLm,
        ModelKind::DcstNc,
        ModelKind::DcstDr,
        ModelKind::DcstRpe,
        ModelKind::DcstEns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::BaseFs => "base-fs",
            ModelKind::BaseRg => "base-rg",
            ModelKind::SelfTraining => "self-training",
            ModelKind::DcstLm => "dcst-lm",
            ModelKind::DcstNc => "dcst-nc",
            ModelKind::DcstDr => "dcst-dr",
            ModelKind::DcstRpe => "dcst-rpe",
            ModelKind::DcstEns => "dcst-ens",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn schemes(self) -> Option<Vec<Scheme>> {
        match self {
            ModelKind::DcstLm => Some(vec![Scheme::Lm]),
            ModelKind::DcstNc => Some(vec![Scheme::Nc]),
            ModelKind::DcstDr => Some(vec![Scheme::Dr]),
            ModelKind::DcstRpe => Some(vec![Scheme::Rpe]),
            ModelKind::DcstEns => Some(vec![Scheme::Nc, Scheme::Dr, Scheme::Rpe]),
            _ => None,
        }
    }
}

/// Which corpora feed which stage.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// Gold pool that L and dev are sampled from.
    pub train_pool: Vec<Sentence>,
    /// Gold test set the table reports on.
    pub test: Vec<Sentence>,
    /// Unlabeled pool for steps 2-4. None: use the un-sampled remainder of
    /// the train pool (lightly-supervised setup). Some: an external corpus,
    /// stripped before use (domain / length adaptation).
    pub unlabeled: Option<Vec<Sentence>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_dev: usize,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub model: String,
    pub seed: u64,
    pub test_uas: f64,
    pub test_las: f64,
    pub dev_las: Option<f64>,
    pub tagger_dev_acc: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_uas: f64,
    pub mean_las: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<RunRecord>,
    pub summary: Vec<ModelSummary>,
}

impl ExperimentReport {
    /// Human-readable results table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>6} {:>8} {:>8}\n", "model", "seed", "UAS", "LAS"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>6} {:>8.2} {:>8.2}\n",
                r.model,
                r.seed,
                100.0 * r.test_uas,
                100.0 * r.test_las
            ));
        }
        out.push_str(&format!("{:<14} {:>6} {:>8} {:>8}\n", "mean", "", "UAS", "LAS"));
        for s in &self.summary {
            out.push_str(&format!(
                "{:<14} {:>6} {:>8.2} {:>8.2}\n",
                s.model,
                s.seeds,
                100.0 * s.mean_uas,
                100.0 * s.mean_las
            ));
        }
        out
    }
}

/// Run the requested models over all seeds, writing per-stage archives and
/// flushing the report after every model when an output directory is given.
pub fn run_experiment(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport, DcstError> {
    if spec.models.is_empty() {
        return Err(DcstError::Config("no models requested".into()));
    }
    let mut rows: Vec<RunRecord> = Vec::new();
    for &seed in &spec.seeds {
        let mut cfg = spec.pipeline.clone();
        cfg.parser.seed = seed;
        cfg.tagger.seed = seed;
        let (labeled, dev, remainder) =
            sample_split(&data.train_pool, spec.n_train, spec.n_dev, seed)?;
        let unlabeled: Vec<Sentence> = match &data.unlabeled {
            Some(u) => u.iter().map(strip_annotations).collect(),
            None => remainder,
        };
        for &model in &spec.models {
            let start = Instant::now();
            let mut tagger_dev_acc = BTreeMap::new();
            let mut dev_las = None;
            let stream = format!("{}.s{seed}", model.name());
            let (test_uas, test_las) = match model {
                ModelKind::Base => {
                    let (m, _) = train_parser(&labeled, &dev, &cfg.parser, &stream)?;
                    record_dev(&m, &dev, &mut dev_las)?;
                    save_parser(out_dir, &stream, &m)?;
                    m.evaluate(&m.store, &data.test)?
                }
                ModelKind::BaseFs => {
                    // Upper bound: the full pool minus the sampled dev set.
                    let full: Vec<Sentence> = data
                        .train_pool
                        .iter()
                        .filter(|s| !dev.contains(s))
                        .cloned()
                        .collect();
                    let (m, _) = train_parser(&full, &dev, &cfg.parser, &stream)?;
                    record_dev(&m, &dev, &mut dev_las)?;
                    save_parser(out_dir, &stream, &m)?;
                    m.evaluate(&m.store, &data.test)?
                }
                ModelKind::SelfTraining => {
                    let (m, _) =
                        run_self_training(&labeled, &dev, &unlabeled, &cfg, &stream)?;
                    record_dev(&m, &dev, &mut dev_las)?;
                    save_parser(out_dir, &stream, &m)?;
                    m.evaluate(&m.store, &data.test)?
                }
                ModelKind::BaseRg => {
                    let (h, report) =
                        run_random_gating(&labeled, &dev, &cfg, true, &stream)?;
                    dev_las = report.hybrid_dev_las;
                    save_hybrid(out_dir, &stream, &h)?;
                    h.evaluate(&h.store, &data.test)?
                }
                _ => {
                    let schemes = model.schemes().expect("DCST variant");
                    let outcome =
                        run_dcst(&labeled, &dev, &unlabeled, &schemes, &cfg, &stream)?;
                    tagger_dev_acc = outcome.report.tagger_dev_acc.clone();
                    dev_las = outcome.report.hybrid_dev_las;
                    save_parser(out_dir, &format!("{stream}.base"), &outcome.base)?;
                    for (scheme, tm) in &outcome.taggers {
                        save_tagger(out_dir, &format!("{stream}.tgr-{}", scheme.name()), tm)?;
                    }
                    save_hybrid(out_dir, &stream, &outcome.hybrid)?;
                    outcome.hybrid.evaluate(&outcome.hybrid.store, &data.test)?
                }
            };
            rows.push(RunRecord {
                model: model.name().to_string(),
                seed,
                test_uas,
                test_las,
                dev_las,
                tagger_dev_acc,
                seconds: start.elapsed().as_secs_f64(),
            });
            if let Some(dir) = out_dir {
                flush_report(dir, &rows, spec)?;
            }
        }
    }
    let report = ExperimentReport { summary: summarize(&rows, spec), rows };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("results.txt"), report.table())?;
    }
    Ok(report)
}

fn record_dev(
    m: &ParserModel,
    dev: &[Sentence],
    dev_las: &mut Option<f64>,
) -> Result<(), DcstError> {
    if !dev.is_empty() {
        let (_, las) = m.evaluate(&m.store, dev)?;
        *dev_las = Some(las);
    }
    Ok(())
}

fn summarize(rows: &[RunRecord], spec: &ExperimentSpec) -> Vec<ModelSummary> {
    spec.models
        .iter()
        .map(|m| {
            let rs: Vec<&RunRecord> =
                rows.iter().filter(|r| r.model == m.name()).collect();
            let n = rs.len().max(1) as f64;
            ModelSummary {
                model: m.name().to_string(),
                mean_uas: rs.iter().map(|r| r.test_uas).sum::<f64>() / n,
                mean_las: rs.iter().map(|r| r.test_las).sum::<f64>() / n,
                seeds: rs.len(),
            }
        })
        .collect()
}

fn flush_report(
    dir: &Path,
    rows: &[RunRecord],
    spec: &ExperimentSpec,
) -> Result<(), DcstError> {
    let report = ExperimentReport { summary: summarize(rows, spec), rows: rows.to_vec() };
    let mut bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| DcstError::Archive(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(dir.join("results.json"), bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Archives: models round-trip through the shared parameter-archive format.

fn input_vocab_map(prefix: &str, v: &InputVocab, out: &mut BTreeMap<String, Vec<String>>) {
    out.insert(format!("{prefix}words"), v.words.items().to_vec());
    out.insert(format!("{prefix}chars"), v.chars.items().to_vec());
    out.insert(format!("{prefix}pos"), v.pos.items().to_vec());
}

fn input_vocab_from_map(
    prefix: &str,
    map: &BTreeMap<String, Vec<String>>,
) -> Result<InputVocab, DcstError> {
    let get = |key: &str| -> Result<Vec<String>, DcstError> {
        map.get(&format!("{prefix}{key}"))
            .cloned()
            .ok_or_else(|| DcstError::Archive(format!("missing vocab {prefix}{key}")))
    };
    Ok(InputVocab {
        words: Vocab::from_items(get("words")?, true),
        chars: Vocab::from_items(get("chars")?, true),
        pos: Vocab::from_items(get("pos")?, true),
    })
}

fn config_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config serialization")
}

fn config_from_json<T: for<'de> Deserialize<'de>>(
    config: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, DcstError> {
    let raw = config
        .get(key)
        .ok_or_else(|| DcstError::Archive(format!("missing config entry {key}")))?;
    serde_json::from_str(raw).map_err(|e| DcstError::Archive(e.to_string()))
}

pub fn parser_archive(model: &ParserModel) -> Archive {
    let mut config = model.cfg.echo();
    config.insert("json".to_string(), config_json(&model.cfg));
    let mut vocabs = BTreeMap::new();
    input_vocab_map("", &model.vocab, &mut vocabs);
    vocabs.insert("labels".to_string(), model.labels.items().to_vec());
    Archive::from_store("parser", config, vocabs, &model.store)
}

pub fn parser_from_archive(archive: &Archive) -> Result<ParserModel, DcstError> {
    if archive.kind != "parser" {
        return Err(DcstError::Archive(format!("expected a parser archive, got {}", archive.kind)));
    }
    let cfg: ParserConfig = config_from_json(&archive.config, "json")?;
    let vocab = input_vocab_from_map("", &archive.vocabs)?;
    let labels = Vocab::from_items(
        archive
            .vocabs
            .get("labels")
            .cloned()
            .ok_or_else(|| DcstError::Archive("missing vocab labels".into()))?,
        false,
    );
    Ok(ParserModel { cfg, vocab, labels, store: archive.to_store()? })
}

pub fn tagger_archive(model: &TaggerModel) -> Archive {
    let mut config = model.cfg.echo();
    config.insert("json".to_string(), config_json(&model.cfg));
    config.insert("scheme".to_string(), model.scheme.name().to_string());
    let mut vocabs = BTreeMap::new();
    input_vocab_map("", &model.vocab, &mut vocabs);
    vocabs.insert("tags".to_string(), model.tags.items().to_vec());
    Archive::from_store("tagger", config, vocabs, &model.store)
}

pub fn tagger_from_archive(archive: &Archive) -> Result<TaggerModel, DcstError> {
    if archive.kind != "tagger" {
        return Err(DcstError::Archive(format!("expected a tagger archive, got {}", archive.kind)));
    }
    let cfg: TaggerConfig = config_from_json(&archive.config, "json")?;
    let scheme_name = archive
        .config
        .get("scheme")
        .ok_or_else(|| DcstError::Archive("missing config entry scheme".into()))?;
    let scheme = Scheme::from_name(scheme_name)
        .ok_or_else(|| DcstError::Archive(format!("unknown scheme {scheme_name}")))?;
    let vocab = input_vocab_from_map("", &archive.vocabs)?;
    let tags = Vocab::from_items(
        archive
            .vocabs
            .get("tags")
            .cloned()
            .ok_or_else(|| DcstError::Archive("missing vocab tags".into()))?,
        true,
    );
    Ok(TaggerModel { cfg, scheme, vocab, tags, store: archive.to_store()? })
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamSpec {
    name: String,
    dims: EmbedDims,
    hidden: usize,
    layers: usize,
}

pub fn hybrid_archive(model: &HybridParser) -> Archive {
    let mut config = model.cfg.echo();
    config.insert("json".to_string(), config_json(&model.cfg));
    config.insert("frozen".to_string(), model.frozen.to_string());
    let specs: Vec<StreamSpec> = model
        .streams
        .iter()
        .map(|s| StreamSpec {
            name: s.name.clone(),
            dims: s.dims,
            hidden: s.hidden,
            layers: s.layers,
        })
        .collect();
    config.insert("streams".to_string(), config_json(&specs));
    let mut vocabs = BTreeMap::new();
    input_vocab_map("", &model.vocab, &mut vocabs);
    vocabs.insert("labels".to_string(), model.labels.items().to_vec());
    for s in &model.streams {
        input_vocab_map(&s.prefix(), &s.vocab, &mut vocabs);
    }
    Archive::from_store("hybrid", config, vocabs, &model.store)
}

pub fn hybrid_from_archive(archive: &Archive) -> Result<HybridParser, DcstError> {
    if archive.kind != "hybrid" {
        return Err(DcstError::Archive(format!("expected a hybrid archive, got {}", archive.kind)));
    }
    let cfg: ParserConfig = config_from_json(&archive.config, "json")?;
    let frozen = archive.config.get("frozen").map(|s| s == "true").unwrap_or(true);
    let specs: Vec<StreamSpec> = config_from_json(&archive.config, "streams")?;
    let vocab = input_vocab_from_map("", &archive.vocabs)?;
    let labels = Vocab::from_items(
        archive
            .vocabs
            .get("labels")
            .cloned()
            .ok_or_else(|| DcstError::Archive("missing vocab labels".into()))?,
        false,
    );
    let streams = specs
        .into_iter()
        .map(|s| {
            let vocab = input_vocab_from_map(&format!("tgr.{}.", s.name), &archive.vocabs)?;
            Ok(TaggerStream {
                name: s.name,
                vocab,
                dims: s.dims,
                hidden: s.hidden,
                layers: s.layers,
            })
        })
        .collect::<Result<Vec<_>, DcstError>>()?;
    Ok(HybridParser { cfg, vocab, labels, streams, frozen, store: archive.to_store()? })
}

fn save_parser(dir: Option<&Path>, name: &str, m: &ParserModel) -> Result<(), DcstError> {
    if let Some(dir) = dir {
        parser_archive(m).save(&dir.join(format!("{name}.json")))?;
    }
    Ok(())
}

fn save_tagger(dir: Option<&Path>, name: &str, m: &TaggerModel) -> Result<(), DcstError> {
    if let Some(dir) = dir {
        tagger_archive(m).save(&dir.join(format!("{name}.json")))?;
    }
    Ok(())
}

fn save_hybrid(dir: Option<&Path>, name: &str, m: &HybridParser) -> Result<(), DcstError> {
    if let Some(dir) = dir {
        hybrid_archive(m).save(&dir.join(format!("{name}.json")))?;
    }
    Ok(())
}
