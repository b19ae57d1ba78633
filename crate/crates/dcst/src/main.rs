//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dcst::config::RunConfig;
use dcst::conllu::{parse_conllu, strip_annotations, write_conllu, Sentence};
use dcst::error::DcstError;
use dcst::metrics;
use dcst::nn::Archive;
use dcst::pipeline::{
    annotate, hybrid_archive, hybrid_from_archive, parser_archive, parser_from_archive,
    run_dcst, run_random_gating, run_self_training, split_by_length, tagger_archive,
    ExperimentData, ExperimentSpec,
};
use dcst::synth::generate_corpus;
use dcst::tagger::{derive_tagged_corpus, tag_accuracy, train_lm_tagger, train_tagger, TaggedCorpus};
use dcst::tree::{
    encode_dr, encode_nc, encode_rpe, parse_tagged, write_tagged, CoarsePosTable, DepTree,
    Scheme,
};

#[derive(Parser)]
#[command(name = "dcst", about = "Self-training for graph-based dependency parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual key=value overrides (highest precedence).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, DcstError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::new(),
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a base biaffine parser on a labeled treebank.
    TrainBase {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Parse sentences with a trained parser or hybrid archive.
    Parse {
        /// Model archive (parser or hybrid).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-encode gold trees as scheme tags (two-column dump).
    EncodeTags {
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one sequence tagger on trees (.conllu) or a tag dump.
    TrainTagger {
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the self-training pipeline or one of its baselines.
    Selftrain {
        /// dcst | classic | rg | lm
        #[arg(long)]
        mode: String,
        /// Comma-separated schemes for dcst mode (default nc,dr,rpe).
        #[arg(long)]
        schemes: Option<String>,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predictions against gold trees (all metrics).
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run a multi-model comparison from a configuration file.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic desk corpus.
    SynthCorpus {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes, everything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                DcstError::Numeric(_) | DcstError::Degenerate(_) => 3,
                DcstError::Config(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn load_conllu(path: &Path) -> Result<Vec<Sentence>, DcstError> {
    parse_conllu(&std::fs::read_to_string(path)?)
}

/// Corpus argument: a CoNLL-U path, or `synth:<seed>:<n>` for generated data.
fn load_corpus_spec(spec: &str) -> Result<Vec<Sentence>, DcstError> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let (seed, n) = rest
            .split_once(':')
            .ok_or_else(|| DcstError::Config(format!("expected synth:<seed>:<n>, got {spec:?}")))?;
        let seed = seed
            .parse()
            .map_err(|_| DcstError::Config(format!("bad synth seed in {spec:?}")))?;
        let n = n
            .parse()
            .map_err(|_| DcstError::Config(format!("bad synth size in {spec:?}")))?;
        Ok(generate_corpus(seed, n))
    } else {
        load_conllu(Path::new(spec))
    }
}

fn prepare_out_dir(out: &Path, cfg: &RunConfig) -> Result<(), DcstError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.txt"), cfg.echo())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), DcstError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| DcstError::Archive(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn scheme_arg(name: &str) -> Result<Scheme, DcstError> {
    Scheme::from_name(name).ok_or_else(|| DcstError::Config(format!("unknown scheme {name:?}")))
}

fn run(command: Command) -> Result<(), DcstError> {
    match command {
        Command::TrainBase { train, dev, out, config } => {
            let cfg = config.resolve()?;
            let train_corpus = load_conllu(&train)?;
            let dev_corpus = dev.map(|p| load_conllu(&p)).transpose()?.unwrap_or_default();
            let parser_cfg = cfg.parser()?;
            prepare_out_dir(&out, &cfg)?;
            let (model, history) =
                dcst::parser::train_parser(&train_corpus, &dev_corpus, &parser_cfg, "parser")?;
            parser_archive(&model).save(&out.join("parser.json"))?;
            write_json(&out.join("history.json"), &history)?;
            if !dev_corpus.is_empty() {
                let (uas, las) = model.evaluate(&model.store, &dev_corpus)?;
                println!("dev UAS {:.4} LAS {:.4}", uas, las);
                write_json(
                    &out.join("metrics.json"),
                    &serde_json::json!({ "dev_uas": uas, "dev_las": las }),
                )?;
            }
            Ok(())
        }
        Command::Parse { model, input, out } => {
            let archive = Archive::load(&model)?;
            let sents: Vec<Sentence> =
                load_conllu(&input)?.iter().map(strip_annotations).collect();
            let trees = match archive.kind.as_str() {
                "parser" => parser_from_archive(&archive)?.predict(&sents),
                "hybrid" => hybrid_from_archive(&archive)?.predict(&sents),
                other => {
                    return Err(DcstError::Archive(format!(
                        "cannot parse with archive of kind {other:?}"
                    )))
                }
            };
            let annotated = annotate(&sents, &trees)?;
            std::fs::write(&out, write_conllu(&annotated))?;
            println!("parsed {} sentences", annotated.len());
            Ok(())
        }
        Command::EncodeTags { scheme, input, out } => {
            let scheme = scheme_arg(&scheme)?;
            let sents = load_conllu(&input)?;
            let trees = gold_trees_of(&sents)?;
            let table = CoarsePosTable::default();
            let tags: Vec<_> = sents
                .iter()
                .zip(&trees)
                .map(|(s, t)| match scheme {
                    Scheme::Nc => Ok(encode_nc(t)),
                    Scheme::Dr => Ok(encode_dr(t)),
                    Scheme::Rpe => Ok(encode_rpe(t, &s.upos(), &table)),
                    Scheme::Lm => {
                        Err(DcstError::Config("the lm scheme has no tag encoding".into()))
                    }
                })
                .collect::<Result<_, _>>()?;
            let pairs: Vec<_> = sents.iter().zip(tags.iter()).collect();
            std::fs::write(&out, write_tagged(&pairs))?;
            println!("encoded {} sentences as {} tags", sents.len(), scheme.name());
            Ok(())
        }
        Command::TrainTagger { scheme, input, dev, out, config } => {
            let scheme = scheme_arg(&scheme)?;
            let cfg = config.resolve()?;
            let tagger_cfg = cfg.tagger()?;
            prepare_out_dir(&out, &cfg)?;
            if scheme == Scheme::Lm {
                let sents = load_conllu(&input)?;
                let dev_sents =
                    dev.map(|p| load_conllu(&p)).transpose()?.unwrap_or_default();
                let (model, history) =
                    train_lm_tagger(&sents, &dev_sents, &tagger_cfg, "tagger.lm")?;
                tagger_archive(&model).save(&out.join("tagger.json"))?;
                write_json(&out.join("history.json"), &history)?;
                return Ok(());
            }
            let corpus = load_tagged_corpus(&input, scheme)?;
            let dev_corpus = match dev {
                Some(p) => load_tagged_corpus(&p, scheme)?,
                None => TaggedCorpus { scheme, items: vec![] },
            };
            let (model, history) = train_tagger(
                &corpus,
                &dev_corpus,
                &tagger_cfg,
                &format!("tagger.{}", scheme.name()),
            )?;
            tagger_archive(&model).save(&out.join("tagger.json"))?;
            write_json(&out.join("history.json"), &history)?;
            if !dev_corpus.is_empty() {
                let (_, acc) = tag_accuracy(&model, &model.store, &dev_corpus)?;
                println!("dev tag accuracy {:.4}", acc);
            }
            Ok(())
        }
        Command::Selftrain { mode, schemes, labeled, unlabeled, dev, out, config } => {
            let cfg = config.resolve()?;
            let pipeline = cfg.pipeline()?;
            let labeled = load_conllu(&labeled)?;
            let dev = dev.map(|p| load_conllu(&p)).transpose()?.unwrap_or_default();
            let unlabeled = unlabeled.map(|p| load_conllu(&p)).transpose()?.unwrap_or_default();
            prepare_out_dir(&out, &cfg)?;
            match mode.as_str() {
                "dcst" | "lm" => {
                    let schemes = if mode == "lm" {
                        vec![Scheme::Lm]
                    } else {
                        match schemes {
                            Some(raw) => raw
                                .split(',')
                                .map(|s| scheme_arg(s.trim()))
                                .collect::<Result<_, _>>()?,
                            None => vec![Scheme::Nc, Scheme::Dr, Scheme::Rpe],
                        }
                    };
                    let outcome =
                        run_dcst(&labeled, &dev, &unlabeled, &schemes, &pipeline, "run")?;
                    parser_archive(&outcome.base).save(&out.join("base.json"))?;
                    for (scheme, tm) in &outcome.taggers {
                        tagger_archive(tm)
                            .save(&out.join(format!("tagger-{}.json", scheme.name())))?;
                    }
                    hybrid_archive(&outcome.hybrid).save(&out.join("hybrid.json"))?;
                    write_json(&out.join("report.json"), &outcome.report)?;
                    if let (Some(u), Some(l)) =
                        (outcome.report.hybrid_dev_uas, outcome.report.hybrid_dev_las)
                    {
                        println!("hybrid dev UAS {:.4} LAS {:.4}", u, l);
                    }
                }
                "classic" => {
                    let (model, history) =
                        run_self_training(&labeled, &dev, &unlabeled, &pipeline, "run")?;
                    parser_archive(&model).save(&out.join("parser.json"))?;
                    write_json(&out.join("history.json"), &history)?;
                    if !dev.is_empty() {
                        let (uas, las) = model.evaluate(&model.store, &dev)?;
                        println!("dev UAS {:.4} LAS {:.4}", uas, las);
                    }
                }
                "rg" => {
                    let (hybrid, report) =
                        run_random_gating(&labeled, &dev, &pipeline, true, "run")?;
                    hybrid_archive(&hybrid).save(&out.join("hybrid.json"))?;
                    write_json(&out.join("report.json"), &report)?;
                }
                other => {
                    return Err(DcstError::Config(format!(
                        "unknown mode {other:?}; expected dcst, classic, rg, or lm"
                    )))
                }
            }
            Ok(())
        }
        Command::Evaluate { gold, pred, config } => {
            let cfg = config.resolve()?;
            let gold_sents = load_conllu(&gold)?;
            let pred_sents = load_conllu(&pred)?;
            let gold_trees = gold_trees_of(&gold_sents)?;
            let pred_trees = gold_trees_of(&pred_sents)?;
            let pos: Vec<Vec<String>> = gold_sents
                .iter()
                .map(|s| s.tokens.iter().map(|t| t.upos.clone()).collect())
                .collect();
            let report =
                metrics::evaluate(&gold_trees, &pred_trees, &pos, cfg.pdh_variant()?)?;
            println!("UAS {:.4} LAS {:.4}", report.uas, report.las);
            println!(
                "AD-NC {:.4} AD-DR {:.4} AD-PDH {:.4} POS-Head-Error {:.4}",
                report.ad_nc, report.ad_dr, report.ad_pdh, report.pos_head_error
            );
            if let Some(out) = cfg.get("out") {
                std::fs::create_dir_all(out)?;
                write_json(&Path::new(out).join("eval.json"), &report)?;
            }
            Ok(())
        }
        Command::Experiment { config } => {
            let cfg = config.resolve()?;
            let out = PathBuf::from(
                cfg.get("out")
                    .ok_or_else(|| DcstError::Config("experiment needs out = <dir>".into()))?,
            );
            prepare_out_dir(&out, &cfg)?;
            let train_pool = load_corpus_spec(
                cfg.get("train")
                    .ok_or_else(|| DcstError::Config("experiment needs train = <corpus>".into()))?,
            )?;
            let spec = ExperimentSpec {
                models: cfg.models()?,
                seeds: cfg.seeds()?,
                n_train: cfg.n_train()?,
                n_dev: cfg.n_dev()?,
                pipeline: cfg.pipeline()?,
            };
            let unlabeled =
                cfg.get("unlabeled").map(load_corpus_spec).transpose()?;
            let data = match cfg.get("setup") {
                None | Some("lightly_supervised") => ExperimentData {
                    test: load_corpus_spec(cfg.get("test").ok_or_else(|| {
                        DcstError::Config("experiment needs test = <corpus>".into())
                    })?)?,
                    train_pool,
                    unlabeled,
                },
                Some("domain_adaptation") => ExperimentData {
                    test: load_corpus_spec(cfg.get("test").ok_or_else(|| {
                        DcstError::Config("experiment needs test = <corpus>".into())
                    })?)?,
                    train_pool,
                    unlabeled: Some(unlabeled.ok_or_else(|| {
                        DcstError::Config(
                            "domain_adaptation needs unlabeled = <target corpus>".into(),
                        )
                    })?),
                },
                Some("length_adaptation") => {
                    let (short, long) = split_by_length(&train_pool, cfg.length_threshold()?);
                    let test = match cfg.get("test") {
                        Some(t) => load_corpus_spec(t)?,
                        None => long.clone(),
                    };
                    ExperimentData { train_pool: short, test, unlabeled: Some(long) }
                }
                Some(other) => {
                    return Err(DcstError::Config(format!("unknown setup {other:?}")))
                }
            };
            let report = dcst::pipeline::run_experiment(&spec, &data, Some(&out))?;
            print!("{}", report.table());
            Ok(())
        }
        Command::SynthCorpus { seed, n, out } => {
            std::fs::create_dir_all(&out)?;
            let corpus = generate_corpus(seed, n);
            std::fs::write(out.join("corpus.conllu"), write_conllu(&corpus))?;
            println!("wrote {} sentences to {}", n, out.join("corpus.conllu").display());
            Ok(())
        }
    }
}

fn gold_trees_of(sents: &[Sentence]) -> Result<Vec<DepTree>, DcstError> {
    sents.iter().map(DepTree::from_sentence).collect()
}

/// A tagger corpus from either gold trees (.conllu) or a two-column dump.
fn load_tagged_corpus(path: &Path, scheme: Scheme) -> Result<TaggedCorpus, DcstError> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("conllu") {
        let sents = parse_conllu(&text)?;
        let trees = gold_trees_of(&sents)?;
        derive_tagged_corpus(&sents, &trees, scheme, &CoarsePosTable::default())
    } else {
        let items = parse_tagged(&text, scheme)?
            .into_iter()
            .map(|(forms, tags)| {
                let tokens = forms
                    .into_iter()
                    .enumerate()
                    .map(|(i, form)| dcst::conllu::Token {
                        id: i + 1,
                        form,
                        lemma: None,
                        upos: "_".to_string(),
                        head: None,
                        deprel: None,
                    })
                    .collect();
                (Sentence { tokens }, tags)
            })
            .collect();
        Ok(TaggedCorpus { scheme, items })
    }
}
