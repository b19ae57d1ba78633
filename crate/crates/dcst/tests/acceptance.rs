//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see them on success).

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcst::features::{InputVocab, Vocab};
use dcst::gating::{gate2, gate_n_with_weights, init_gate2_params, init_gate_n_params};
use dcst::metrics::{paired_t_test, uas_las, PdhVariant};
use dcst::nn::{grad_check, substream, ParameterStore, Tape};
use dcst::parser::{
    brute_force_best_tree, decode_mst, parse_loss, train_parser, ParserConfig,
};
use dcst::pipeline::{
    build_hybrid, hybrid_archive, run_dcst, run_experiment, sample_split, train_hybrid,
    ExperimentData, ExperimentSpec, FreezeMode, ModelKind, PipelineConfig,
};
use dcst::synth::generate_corpus;
use dcst::tagger::{derive_tagged_corpus, tag_accuracy, train_tagger, TaggerConfig};
use dcst::tree::{
    decode_rpe, encode_dr, encode_nc, encode_rpe, random_tree, CoarsePosTable, DepTree,
    Scheme,
};

fn report(criterion: u32, name: &str, pass: bool, start: Instant, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "ACCEPTANCE {criterion} {name}: {verdict} ({:.1}s){}{}",
        start.elapsed().as_secs_f64(),
        if detail.is_empty() { "" } else { " — " },
        detail
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

/// 1. RPE decode∘encode is exact on 1000 random trees (m <= 15); NC sums to
/// m−1 and DR satisfies the parent+1 relation on 1000 random trees. < 5 s.
#[test]
fn criterion_1_codec_exactness() {
    let start = Instant::now();
    let table = CoarsePosTable::default();
    let pos_pool = ["NOUN", "VERB", "ADJ", "DET", "ADP", "ADV", "PROPN", "PUNCT"];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for i in 0..1000 {
        let m = 1 + i % 15;
        let tree = DepTree::new(random_tree(&mut rng, m), None).unwrap();
        let pos: Vec<&str> = (0..m).map(|_| pos_pool[rng.gen_range(0..pos_pool.len())]).collect();
        let tags = encode_rpe(&tree, &pos, &table);
        let decoded = decode_rpe(&tags, &pos, &table);
        assert_eq!(decoded.heads, tree.heads, "RPE round trip failed at tree {i}");
        assert!(decoded.failed.is_empty());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for i in 0..1000 {
        let m = 1 + i % 15;
        let tree = DepTree::new(random_tree(&mut rng, m), None).unwrap();
        let nc: usize =
            encode_nc(&tree).tags.iter().map(|t| t.parse::<usize>().unwrap()).sum();
        assert_eq!(nc, m - 1, "NC sum violated at tree {i}");
        let dr: Vec<usize> =
            encode_dr(&tree).tags.iter().map(|t| t.parse().unwrap()).collect();
        for (child, &head) in tree.heads.iter().enumerate() {
            if head == 0 {
                assert_eq!(dr[child], 1);
            } else {
                assert_eq!(dr[child], dr[head - 1] + 1, "DR relation violated at tree {i}");
            }
        }
    }
    let pass = start.elapsed().as_secs_f64() < 5.0;
    report(1, "codec-exactness", pass, start, "2000 random trees, exact");
}

/// 2. MST decoding matches the brute-force single-root oracle in total score
/// on 200 random matrices for each m in 2..=6. < 30 s.
#[test]
fn criterion_2_mst_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut checked = 0;
    for m in 2..=6 {
        for _ in 0..200 {
            let scores = Array2::from_shape_fn((m, m + 1), |_| rng.gen_range(-5.0..5.0));
            let fast = decode_mst(&scores);
            let oracle = brute_force_best_tree(&scores);
            let total = |heads: &[usize]| -> f64 {
                heads.iter().enumerate().map(|(i, &h)| scores[(i, h)]).sum()
            };
            let (a, b) = (total(&fast), total(&oracle));
            assert!(
                (a - b).abs() <= 1e-9,
                "m={m}: MST score {a} differs from oracle {b}"
            );
            checked += 1;
        }
    }
    let pass = start.elapsed().as_secs_f64() < 30.0;
    report(2, "mst-oracle", pass, start, &format!("{checked} matrices, tie-safe"));
}

fn tiny_corpus() -> Vec<dcst::conllu::Sentence> {
    dcst::conllu::parse_conllu(
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

/// 3. Gradient checks at tol 1e-4, h = 1e-5: (a) every tape primitive,
/// (b) the full biaffine loss on a 4-token batch, (c) the full hybrid with 3
/// gated tagger encoders on a 3-token batch. < 2 min.
#[test]
fn criterion_3_gradient_correctness() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str,
                     store: ParameterStore,
                     f: &dyn Fn(&ParameterStore, &mut Tape) -> dcst::nn::NodeId| {
        match grad_check(&store, f, 1e-5, 1e-4) {
            Ok(r) if r.passed() => {}
            Ok(r) => failures.push(format!("{name}: {:?}", r.failures())),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    };

    // (a) primitives, each exercised through a scalar objective.
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.5..1.5))
    };
    let mut store = ParameterStore::new();
    store.insert("a", rand_mat(&mut rng, 3, 4));
    store.insert("b", rand_mat(&mut rng, 4, 2));
    store.insert("c", rand_mat(&mut rng, 3, 4));
    store.insert("col", rand_mat(&mut rng, 3, 1));
    store.insert("row", rand_mat(&mut rng, 1, 4));
    // keep div denominators away from zero
    store.set("b", store.get("b").map(|v| v + 2.5));

    type Builder = Box<dyn Fn(&ParameterStore, &mut Tape) -> dcst::nn::NodeId>;
    let unary = |op: &'static str| -> Builder {
        Box::new(move |s: &ParameterStore, t: &mut Tape| {
            let a = t.param("a", s.get("a").clone());
            let v = match op {
                "sigmoid" => t.sigmoid(a),
                "tanh" => t.tanh(a),
                "elu" => t.elu(a),
                "relu" => t.relu(a),
                "exp" => t.exp(a),
                "scale" => t.scale(a, -1.7),
                "transpose" => t.transpose(a),
                "reshape" => t.reshape(a, 4, 3),
                "slice_rows" => t.slice_rows(a, 1, 3),
                "select_cols" => t.select_cols(a, &[3, 0, 0]),
                "select_rows" => t.select_rows(a, &[2, 1, 1]),
                "max_pool_cols" => t.max_pool_cols(a),
                "softmax_cols" => t.softmax_cols_node(a),
                "cross_entropy_cols" => t.cross_entropy_cols(a, &[2, 0, 1, 2]),
                "sum" => t.sum(a),
                other => unreachable!("{other}"),
            };
            if t.shape(v) == (1, 1) {
                v
            } else {
                // square first so every entry's sign matters
                let sq = t.mul(v, v);
                t.sum(sq)
            }
        })
    };
    for op in [
        "sigmoid", "tanh", "elu", "relu", "exp", "scale", "transpose", "reshape",
        "slice_rows", "select_cols", "select_rows", "max_pool_cols", "softmax_cols",
        "cross_entropy_cols", "sum",
    ] {
        check(op, store.clone(), &unary(op));
    }
    let binary = |op: &'static str| -> Builder {
        Box::new(move |s: &ParameterStore, t: &mut Tape| {
            let a = t.param("a", s.get("a").clone());
            let c = t.param("c", s.get("c").clone());
            let v = match op {
                "add" => t.add(a, c),
                "sub" => t.sub(a, c),
                "mul" => t.mul(a, c),
                "div" => {
                    let shifted = t.scale(c, 0.1);
                    let e = t.exp(shifted); // positive denominator
                    t.div(a, e)
                }
                "max_pair" => t.max_pair(a, c),
                "concat_rows" => t.concat_rows(&[a, c]),
                "stack_cols" => t.stack_cols(&[a, c]),
                other => unreachable!("{other}"),
            };
            let sq = t.mul(v, v);
            t.sum(sq)
        })
    };
    for op in ["add", "sub", "mul", "div", "max_pair", "concat_rows", "stack_cols"] {
        check(op, store.clone(), &binary(op));
    }
    check("matmul", store.clone(), &|s, t| {
        let a = t.param("a", s.get("a").clone());
        let b = t.param("b", s.get("b").clone());
        let v = t.matmul(a, b);
        let sq = t.mul(v, v);
        t.sum(sq)
    });
    check("add_col_broadcast", store.clone(), &|s, t| {
        let a = t.param("a", s.get("a").clone());
        let col = t.param("col", s.get("col").clone());
        let v = t.add_col_broadcast(a, col);
        let sq = t.mul(v, v);
        t.sum(sq)
    });
    check("add_row_broadcast", store.clone(), &|s, t| {
        let a = t.param("a", s.get("a").clone());
        let row = t.param("row", s.get("row").clone());
        let v = t.add_row_broadcast(a, row);
        let sq = t.mul(v, v);
        t.sum(sq)
    });
    check("dropout", store.clone(), &|s, t| {
        let a = t.param("a", s.get("a").clone());
        // fresh substream per call: identical mask on every evaluation
        let mut rng = substream(61, "gc.dropout");
        let v = t.dropout(a, 0.4, true, &mut rng);
        let sq = t.mul(v, v);
        t.sum(sq)
    });

    // (b) full biaffine loss, one 4-token sentence batch at tiny dims.
    let corpus = tiny_corpus();
    let mut cfg = ParserConfig::tiny();
    // keep the stack shallow so no gradient magnitude falls into the
    // finite-difference noise floor
    cfg.layers = 1;
    let vocab = InputVocab::build(&corpus);
    let labels = Vocab::closed(
        corpus.iter().flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone())),
    );
    let parser =
        dcst::parser::ParserModel::init(&cfg, vocab.clone(), labels.clone(), 7, "gc");
    let four_token = &corpus[1];
    check("biaffine-loss", parser.store.clone(), &|s, t| {
        let mut rng = substream(0, "gc");
        parser.batch_loss(s, t, &[four_token], false, &mut rng).unwrap()
    });

    // (c) full hybrid: parser + 3 gated tagger encoders, 3-token sentence.
    let mut tcfg = TaggerConfig::tiny();
    tcfg.hidden = cfg.hidden;
    tcfg.layers = cfg.layers;
    let taggers: Vec<(Scheme, dcst::tagger::TaggerModel)> = [Scheme::Nc, Scheme::Dr, Scheme::Rpe]
        .into_iter()
        .map(|scheme| {
            let tm = dcst::tagger::TaggerModel::init_random(
                &tcfg,
                vocab.clone(),
                &format!("gc.{}", scheme.name()),
            );
            (scheme, tm)
        })
        .collect();
    let named: Vec<(&str, &dcst::tagger::TaggerModel)> =
        taggers.iter().map(|(s, m)| (s.name(), m)).collect();
    let hybrid = build_hybrid(&cfg, vocab, labels, &named, false, "gc.hybrid").unwrap();
    let three_token = &corpus[0];
    check("hybrid-loss", hybrid.store.clone(), &|s, t| {
        let mut rng = substream(0, "gc");
        hybrid.batch_loss(s, t, &[three_token], false, &mut rng).unwrap()
    });

    let pass = failures.is_empty() && start.elapsed().as_secs_f64() < 120.0;
    let detail = if failures.is_empty() {
        "primitives + biaffine + hybrid".to_string()
    } else {
        failures.join("; ")
    };
    report(3, "gradient-correctness", pass, start, &detail);
}

/// 4. Uniform-score parse loss equals m(ln(m+1) + ln K) within 1e-9;
/// zero-parameter gates return exact stream means within 1e-12.
#[test]
fn criterion_4_closed_form_losses() {
    let start = Instant::now();
    for (m, k) in [(1usize, 2usize), (3, 5), (6, 11)] {
        let mut tape = Tape::new();
        let arcs = tape.leaf(Array2::from_elem((m, m + 1), 0.37));
        let labels = tape.leaf(Array2::from_elem((k, m), -1.4));
        let heads = random_tree(&mut ChaCha8Rng::seed_from_u64(m as u64), m);
        let gold = DepTree::new(heads, None).unwrap();
        let ids: Vec<usize> = (0..m).map(|i| i % k).collect();
        let loss = parse_loss(&mut tape, arcs, labels, &gold, &ids);
        let expected = m as f64 * (((m + 1) as f64).ln() + (k as f64).ln());
        assert!(
            (tape.scalar_value(loss) - expected).abs() < 1e-9,
            "uniform loss off for m={m}, K={k}"
        );
    }

    let d = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut store = ParameterStore::new();
    init_gate2_params(&mut store, "g2.", d, &mut rng);
    store.set("g2.w", Array2::zeros((d, 2 * d)));
    store.set("g2.b", Array2::zeros((d, 1)));
    init_gate_n_params(&mut store, "gn.", d, 2, &mut rng);
    for i in 1..=3 {
        store.set(&format!("gn.w.{i}"), Array2::zeros((d, 3 * d)));
        store.set(&format!("gn.b.{i}"), Array2::zeros((d, 1)));
    }
    let mut tape = Tape::new();
    let hp = tape.leaf(Array2::from_shape_fn((d, 2), |_| rng.gen_range(-2.0..2.0)));
    let h1 = tape.leaf(Array2::from_shape_fn((d, 2), |_| rng.gen_range(-2.0..2.0)));
    let h2 = tape.leaf(Array2::from_shape_fn((d, 2), |_| rng.gen_range(-2.0..2.0)));
    let g = gate2(&mut tape, &store, "g2.", hp, h1);
    let (vp, v1) = (tape.value(hp).clone(), tape.value(h1).clone());
    for (o, (p, t)) in tape.value(g).iter().zip(vp.iter().zip(v1.iter())) {
        assert!((o - 0.5 * (p + t)).abs() < 1e-12, "gate2 mean violated");
    }
    let (g, _) = gate_n_with_weights(&mut tape, &store, "gn.", hp, &[h1, h2]);
    let v2 = tape.value(h2).clone();
    let vg = tape.value(g).clone();
    for (i, o) in vg.iter().enumerate() {
        let (r, c) = (i / 2, i % 2);
        let mean = (vp[(r, c)] + v1[(r, c)] + v2[(r, c)]) / 3.0;
        assert!((o - mean).abs() < 1e-12, "gate_n mean violated");
    }
    report(4, "closed-form-losses", true, start, "1e-9 / 1e-12 tolerances");
}

/// 5. Base parser reaches >= 95% train UAS on 20 synthetic sentences at the
/// desk profile (< 2 min); each scheme tagger reaches >= 95% train accuracy
/// on 50 auto-tagged sentences.
#[test]
fn criterion_5_overfit_capacity() {
    let start = Instant::now();
    let mut cfg = ParserConfig::desk();
    cfg.dropout = 0.0; // pure capacity check
    let corpus = generate_corpus(71, 20);
    let (model, _) = train_parser(&corpus, &[], &cfg, "overfit").unwrap();
    let (uas, _) = model.evaluate(&model.store, &corpus).unwrap();
    assert!(uas >= 0.95, "base parser train UAS {uas} < 0.95");

    let pool = generate_corpus(73, 50);
    let auto = model.predict(
        &pool.iter().map(dcst::conllu::strip_annotations).collect::<Vec<_>>(),
    );
    let mut details = vec![format!("parser UAS {:.3}", uas)];
    for scheme in [Scheme::Nc, Scheme::Dr, Scheme::Rpe] {
        let tagged =
            derive_tagged_corpus(&pool, &auto, scheme, &CoarsePosTable::default()).unwrap();
        let mut tcfg = TaggerConfig::from_parser(&cfg);
        tcfg.dropout = 0.0;
        let empty = dcst::tagger::TaggedCorpus { scheme, items: vec![] };
        let (tm, _) =
            train_tagger(&tagged, &empty, &tcfg, &format!("overfit.{}", scheme.name()))
                .unwrap();
        let (_, acc) = tag_accuracy(&tm, &tm.store, &tagged).unwrap();
        assert!(acc >= 0.95, "{} tagger train accuracy {acc} < 0.95", scheme.name());
        details.push(format!("{} {:.3}", scheme.name(), acc));
    }
    let pass = start.elapsed().as_secs_f64() < 120.0;
    report(5, "overfit-capacity", pass, start, &details.join(", "));
}

/// Reduced profile for the trend check: small enough to finish well inside
/// the budget, big enough to leave the hybrid room to improve.
fn trend_pipeline() -> PipelineConfig {
    let mut parser = ParserConfig::desk();
    parser.dims = dcst::features::EmbedDims { word: 24, char_emb: 8, char_filters: 12, pos: 8 };
    parser.hidden = 32;
    parser.layers = 2;
    parser.arc_mlp = 32;
    parser.label_mlp = 24;
    parser.epochs = 8;
    parser.patience = 2;
    let mut tagger = TaggerConfig::from_parser(&parser);
    tagger.epochs = 5;
    PipelineConfig {
        parser,
        tagger,
        freeze: FreezeMode::Frozen,
        pos_table: CoarsePosTable::default(),
    }
}

/// 6. Trend check (soft): synthetic grammar, 100 labeled / 2000 unlabeled,
/// 3 seeds — ensemble test UAS >= base + 1.0 point and >= the LM variant.
/// A soft failure prints the numbers without rejecting the build. < 30 min.
#[test]
fn criterion_6_dcst_trend() {
    let start = Instant::now();
    let pool = generate_corpus(101, 2200);
    let test = generate_corpus(202, 300);
    let spec = ExperimentSpec {
        models: vec![ModelKind::Base, ModelKind::DcstLm, ModelKind::DcstEns],
        seeds: vec![1, 2, 3],
        n_train: 100,
        n_dev: 100,
        pipeline: trend_pipeline(),
    };
    let data = ExperimentData { train_pool: pool, test, unlabeled: None };
    let report_data = run_experiment(&spec, &data, None).unwrap();
    let mean = |m: ModelKind| {
        report_data
            .summary
            .iter()
            .find(|s| s.model == m.name())
            .map(|s| 100.0 * s.mean_uas)
            .unwrap()
    };
    let (base, lm, ens) = (mean(ModelKind::Base), mean(ModelKind::DcstLm), mean(ModelKind::DcstEns));
    let detail = format!("UAS base {base:.2}, lm {lm:.2}, ens {ens:.2} over 3 seeds");
    let trend_holds = ens >= base + 1.0 && ens >= lm;
    let within_budget = start.elapsed().as_secs_f64() < 1800.0;
    // Soft criterion: report the direction, only hard-fail on the budget.
    println!(
        "ACCEPTANCE 6 dcst-trend: {} ({:.1}s) — {detail}",
        if trend_holds && within_budget { "PASS" } else { "SOFT-FAIL (investigate)" },
        start.elapsed().as_secs_f64()
    );
    assert!(within_budget, "trend check exceeded its 30-minute budget");
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    // Independent coefficients (g = 5, n = 6) for the t-test oracle.
    const C: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut ser = 1.000000000190015;
    for (i, c) in C.iter().enumerate() {
        ser += c / (x + 1.0 + i as f64);
    }
    let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// 7. Metric oracles: hand-computed star/chain values, independent UAS
/// recount over 100 random corpora, t-test vs quadrature within 1e-6.
#[test]
fn criterion_7_metric_oracles() {
    let start = Instant::now();
    let star = vec![DepTree::new(vec![0, 1, 1, 1], None).unwrap()];
    let chain = vec![DepTree::new(vec![0, 1, 2, 3], None).unwrap()];
    assert!((dcst::metrics::ad_nc(&star, &chain).unwrap() - 1.0).abs() < 1e-12);
    assert!((dcst::metrics::ad_dr(&star, &chain).unwrap() - 0.75).abs() < 1e-12);
    let g = vec![DepTree::new(vec![0, 1, 1], None).unwrap()];
    let p = vec![DepTree::new(vec![0, 1, 2], None).unwrap()];
    assert!((dcst::metrics::ad_pdh(&g, &p, PdhVariant::Intervening).unwrap() - 0.5).abs() < 1e-12);
    let pos = vec![vec!["NOUN".to_string(), "VERB".to_string(), "NOUN".to_string()]];
    let g2 = vec![DepTree::new(vec![2, 0, 2], None).unwrap()];
    let p2 = vec![DepTree::new(vec![3, 0, 2], None).unwrap()];
    assert!(
        (dcst::metrics::pos_head_error(&g2, &p2, &pos).unwrap() - 1.0 / 3.0).abs() < 1e-12
    );

    let mut rng = ChaCha8Rng::seed_from_u64(83);
    for _ in 0..100 {
        let n = rng.gen_range(1..6);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..n {
            let m = rng.gen_range(1..8);
            gold.push(DepTree::new(random_tree(&mut rng, m), None).unwrap());
            pred.push(DepTree::new(random_tree(&mut rng, m), None).unwrap());
        }
        let (uas, _) = uas_las(&gold, &pred).unwrap();
        let (mut ok, mut tot) = (0usize, 0usize);
        for (g, p) in gold.iter().zip(&pred) {
            for i in 0..g.len() {
                tot += 1;
                ok += usize::from(g.heads[i] == p.heads[i]);
            }
        }
        assert_eq!(uas, ok as f64 / tot as f64, "UAS recount mismatch");
    }

    // t-test against Simpson quadrature of the t density.
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(89);
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.08 + rng.gen_range(-0.25..0.25)).collect();
    let (t, p_value) = paired_t_test(&a, &b).unwrap();
    let df = (n - 1) as f64;
    let density = |x: f64| {
        (lanczos_ln_gamma((df + 1.0) / 2.0)
            - lanczos_ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln())
        .exp()
            * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0)
    };
    let (lo, hi, steps) = (t.abs(), t.abs() + 200.0, 400_000);
    let h = (hi - lo) / steps as f64;
    let mut s = density(lo) + density(hi);
    for i in 1..steps {
        s += density(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let p_ref = 2.0 * s * h / 3.0;
    assert!(
        (p_value - p_ref).abs() < 1e-6,
        "t-test p {p_value} vs quadrature {p_ref}"
    );
    report(7, "metric-oracles", true, start, "table-5 + recount + t-test");
}

/// 8. Two identical self-training runs produce byte-identical archives and
/// reports.
#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let pool = generate_corpus(131, 60);
    let (l, d, u) = sample_split(&pool, 10, 5, 1).unwrap();
    let mut cfg = PipelineConfig::desk();
    cfg.parser = ParserConfig::tiny();
    cfg.parser.epochs = 2;
    cfg.tagger = TaggerConfig::from_parser(&cfg.parser);
    cfg.tagger.fc1 = 6;
    cfg.tagger.fc2 = 5;
    let run = || run_dcst(&l, &d, &u, &[Scheme::Nc, Scheme::Dr], &cfg, "det").unwrap();
    let (a, b) = (run(), run());
    assert_eq!(
        dcst::pipeline::parser_archive(&a.base).to_bytes(),
        dcst::pipeline::parser_archive(&b.base).to_bytes(),
        "base archives differ"
    );
    for ((sa, ta), (sb, tb)) in a.taggers.iter().zip(&b.taggers) {
        assert_eq!(sa, sb);
        assert_eq!(
            dcst::pipeline::tagger_archive(ta).to_bytes(),
            dcst::pipeline::tagger_archive(tb).to_bytes(),
            "tagger archives differ"
        );
    }
    assert_eq!(
        hybrid_archive(&a.hybrid).to_bytes(),
        hybrid_archive(&b.hybrid).to_bytes(),
        "hybrid archives differ"
    );
    let report_bytes = |r: &dcst::pipeline::StageReport| serde_json::to_vec(r).unwrap();
    assert_eq!(report_bytes(&a.report), report_bytes(&b.report), "reports differ");
    report(8, "determinism", true, start, "byte-identical archives and reports");
}

/// 9. Freeze contract: frozen tagger tensors are bit-identical before and
/// after hybrid training; trainable ones differ.
#[test]
fn criterion_9_freeze_contract() {
    let start = Instant::now();
    let pool = generate_corpus(137, 40);
    let (l, d, _) = sample_split(&pool, 10, 5, 2).unwrap();
    let mut cfg = ParserConfig::tiny();
    cfg.epochs = 3;
    let mut tcfg = TaggerConfig::from_parser(&cfg);
    tcfg.fc1 = 6;
    tcfg.fc2 = 5;
    let vocab = InputVocab::build(&l);
    let labels = Vocab::closed(
        l.iter().flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone())),
    );
    let tagger = dcst::tagger::TaggerModel::init_random(&tcfg, vocab.clone(), "fz.rg");

    for frozen in [true, false] {
        let mut hybrid = build_hybrid(
            &cfg,
            vocab.clone(),
            labels.clone(),
            &[("rg", &tagger)],
            frozen,
            "fz.hybrid",
        )
        .unwrap();
        let before: Vec<(String, ndarray::Array2<f64>)> = hybrid
            .store
            .iter()
            .filter(|(n, _)| n.starts_with("tgr."))
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect();
        train_hybrid(&mut hybrid, &l, &d, "fz.hybrid").unwrap();
        let mut any_changed = false;
        for (name, value) in &before {
            let after = hybrid.store.get(name);
            if frozen {
                assert_eq!(after, value, "frozen tensor {name} changed");
            } else if after != value {
                any_changed = true;
            }
        }
        if !frozen {
            assert!(any_changed, "no trainable tagger tensor changed");
        }
    }
    report(9, "freeze-contract", true, start, "frozen identical, trainable moved");
}
