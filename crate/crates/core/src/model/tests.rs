use super::gradcheck::dd::Dd;
use super::gradcheck::oracle::Prepared;
use super::gradcheck::{check_model, run_gradcheck, GradcheckOptions};
use super::*;
use crate::embeddings::build_vocab;
use approx::assert_relative_eq;

fn sent(tokens: &str, tags: &str) -> LabeledSentence {
    LabeledSentence::new(
        tokens.split(' ').map(str::to_owned).collect(),
        tags.split(' ').map(str::to_owned).collect(),
    )
    .unwrap()
}

fn small_dims() -> ModelDims {
    ModelDims {
        word_dim: 5,
        char_dim: 4,
        char_hidden: 3,
        word_hidden: 4,
    }
}

fn toy_model(mode: ShareMode, num_tasks: usize, seed: u64) -> Model {
    let types = [["Gene"], ["Chemical"], ["Disease"]];
    let tasks = (0..num_tasks)
        .map(|i| TaskSpec::new(format!("task{i}"), &types[i], 1.0).unwrap())
        .collect();
    let text = "the RING1 protein binds aspirin in cancer cells";
    let vocab = build_vocab(text.split(' '), 1).unwrap();
    let table = EmbeddingTable::random(&vocab, 5, RngSeed(seed)).unwrap();
    let config = ModelConfig {
        mode,
        dims: small_dims(),
        tasks,
        dictionary_mode: DictionaryMode::Off,
        constrained_decoding: false,
    };
    build_model(config, vocab, &table, Vec::new(), RngSeed(seed)).unwrap()
}

#[test]
fn default_dims() {
    let d = ModelDims::default();
    assert_eq!((d.word_dim, d.char_dim, d.char_hidden, d.word_hidden), (200, 30, 200, 200));
}

#[test]
fn block_counts_follow_mode() {
    let count = |mode, m| {
        let p = &toy_model(mode, m, 1).params;
        (p.theta_c.len(), p.theta_w.len(), p.theta_o.len())
    };
    assert_eq!(count(ShareMode::MtmCw, 2), (1, 1, 2));
    assert_eq!(count(ShareMode::MtmC, 2), (1, 2, 2));
    assert_eq!(count(ShareMode::MtmW, 2), (2, 1, 2));
    assert_eq!(count(ShareMode::MtmCw, 3), (1, 1, 3));
}

#[test]
fn single_task_equals_one_task_mtm_cw() {
    let stm = toy_model(ShareMode::SingleTask, 1, 5);
    let cw = toy_model(ShareMode::MtmCw, 1, 5);
    assert_eq!(stm.params.num_params(), cw.params.num_params());
    assert_eq!(stm.params, cw.params);
}

#[test]
fn bad_task_counts_are_rejected() {
    let vocab = build_vocab(["a"], 1).unwrap();
    let table = EmbeddingTable::random(&vocab, 5, RngSeed(0)).unwrap();
    let mk = |mode, n: usize| {
        let tasks = (0..n)
            .map(|i| TaskSpec::new(format!("t{i}"), &["X"], 1.0).unwrap())
            .collect();
        let config = ModelConfig {
            mode,
            dims: small_dims(),
            tasks,
            dictionary_mode: DictionaryMode::Off,
            constrained_decoding: false,
        };
        build_model(config, vocab.clone(), &table, Vec::new(), RngSeed(0))
    };
    assert!(mk(ShareMode::SingleTask, 2).is_err());
    assert!(mk(ShareMode::MtmCw, 0).is_err());
    assert!(mk(ShareMode::SingleTask, 1).is_ok());
    assert!(TaskSpec::new("t", &["X"], 0.0).is_err());
}

#[test]
fn partitions_are_exhaustive_and_disjoint() {
    for mode in ShareMode::ALL {
        let m = if mode == ShareMode::SingleTask { 1 } else { 3 };
        let p = toy_model(mode, m, 2).params;
        let (c, w, o) = p.partition_counts();
        assert_eq!(c + w + o, p.num_params());
        assert_eq!(p.to_flat().len(), p.num_params());
        let ranges = p.block_ranges();
        assert_eq!(ranges.iter().map(|(_, r)| r.len()).sum::<usize>(), p.num_params());
        for pair in ranges.windows(2) {
            assert_eq!(pair[0].1.end, pair[1].1.start);
        }
        let names = p.block_names();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }
}

#[test]
fn emission_shape_and_determinism() {
    let model = toy_model(ShareMode::MtmC, 2, 3);
    let toks = ["the", "RING1", "gene"];
    let p = model.forward_emissions(1, &toks).unwrap();
    assert_eq!(p.shape(), (3, 5));
    assert_eq!(p, model.forward_emissions(1, &toks).unwrap());
    assert!(matches!(model.forward_emissions(2, &toks), Err(Error::UnknownTask(_))));
    assert!(model.task_id("nope").is_err());
}

#[test]
fn loss_is_nonnegative_and_gradients_stay_on_path() {
    let model = toy_model(ShareMode::MtmW, 2, 4);
    let s = sent("the RING1 protein binds", "O S-Gene O O");
    let (loss, grads) = model.sentence_loss(0, &s).unwrap();
    assert!(loss >= 0.0);
    let untouched = &grads.theta_o[1];
    assert!(untouched.proj_w.as_slice().iter().all(|&v| v == 0.0));
    assert!(untouched.transitions.as_slice().iter().all(|&v| v == 0.0));
    // MTM-W keeps a private character block for task 1
    assert!(grads.theta_c[1].bilstm.forward.w[0].as_slice().iter().all(|&v| v == 0.0));
    assert!(grads.theta_c[0].bilstm.forward.w[0].norm_sq() > 0.0);

    assert!(matches!(
        model.sentence_loss(0, &sent("the RING1", "O S-Chemical")),
        Err(Error::UnknownLabel { .. })
    ));
}

#[test]
fn three_word_four_label_gradient() {
    let tasks = vec![TaskSpec::with_labels(
        "g",
        ["O", "B-G", "E-G", "S-G"].map(String::from).to_vec(),
        1.0,
    )
    .unwrap()];
    let vocab = build_vocab("RING1 binds DNA".split(' '), 1).unwrap();
    let table = EmbeddingTable::random(&vocab, 3, RngSeed(9)).unwrap();
    let config = ModelConfig {
        mode: ShareMode::SingleTask,
        dims: ModelDims {
            word_dim: 3,
            char_dim: 3,
            char_hidden: 4,
            word_hidden: 4,
        },
        tasks,
        dictionary_mode: DictionaryMode::Off,
        constrained_decoding: false,
    };
    let mut model = build_model(config, vocab, &table, Vec::new(), RngSeed(9)).unwrap();
    model.params.theta_o[0].transitions.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| {
        *v = ((i * 37 % 11) as f64 - 5.0) * 0.1;
    });
    let s = sent("RING1 binds DNA", "S-G O S-G");
    let err = check_model(&model, &[(0, &s)], &[1.0], 1e-5, 1e-4, false)
        .unwrap()
        .into_iter()
        .map(|(_, _, e)| e)
        .fold(0.0, f64::max);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn tape_free_forward_matches_training_forward() {
    for mode in ShareMode::ALL {
        let m = if mode == ShareMode::SingleTask { 1 } else { 2 };
        let model = toy_model(mode, m, 8);
        let enc = model.encode(&["RING1", "binds", "unseen"]).unwrap();
        for task in 0..m {
            let trace = model.run(task, &enc, None).unwrap();
            assert_eq!(model.emissions(task, &enc).unwrap(), trace.emissions);
            assert_eq!(model.trunk(task, &enc).unwrap(), trace.word_out);
        }
    }
}

#[test]
fn coord_mut_follows_flat_order() {
    let mut model = toy_model(ShareMode::MtmW, 2, 4);
    let n = model.params.num_params();
    for i in (0..n).step_by(7).chain([n - 1]) {
        let mut expected = model.params.to_flat();
        expected[i] += 1.5;
        *model.params.coord_mut(i).unwrap() += 1.5;
        assert_eq!(model.params.to_flat(), expected);
    }
    assert!(model.params.coord_mut(n).is_none());
}

#[test]
fn oracle_loss_matches_model_loss() {
    for mode in ShareMode::ALL {
        let m = if mode == ShareMode::SingleTask { 1 } else { 2 };
        let model = toy_model(mode, m, 5);
        let a = sent("RING1 binds aspirin", "S-Gene O O");
        let b = sent("aspirin in cancer", "S-Chemical O O");
        let batch: Vec<(usize, &LabeledSentence)> = if m == 1 { vec![(0, &a)] } else { vec![(0, &a), (1, &b)] };
        let lambdas: Vec<f64> = (0..m).map(|i| 1.0 - 0.3 * i as f64).collect();
        let expected = model.multi_task_loss(&batch, &lambdas).unwrap();
        let prepared = Prepared::new(&model, &batch, &lambdas).unwrap();
        let theta = model.params.to_flat();
        let got: f64 = prepared.loss(&model, &theta);
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        let dd: Dd = prepared.loss(&model, &theta.iter().map(|&t| Dd::new(t)).collect::<Vec<_>>());
        assert_relative_eq!(dd.hi, expected, max_relative = 1e-12);
    }
}

#[test]
fn lambda_scales_task_gradient_exactly() {
    let model = toy_model(ShareMode::MtmCw, 2, 6);
    let a = sent("RING1 binds aspirin", "S-Gene O O");
    let b = sent("aspirin in cancer", "S-Chemical O O");
    let batch = [(0, &a), (1, &b)];

    let (l1, g1) = model.multi_task_loss_and_grad(&batch[..1], &[1.0, 1.0]).unwrap();
    let (l2, g2) = model.multi_task_loss_and_grad(&batch[..1], &[2.0, 1.0]).unwrap();
    assert_eq!(l2, 2.0 * l1);
    let mut doubled = g1.clone();
    doubled.scale(2.0);
    assert_eq!(g2, doubled);

    let (single, _) = model.sentence_loss(0, &a).unwrap();
    assert_eq!(l1, single);

    let total = model.multi_task_loss(&batch, &[1.0, 1.0]).unwrap();
    let separate = model.loss(0, &a).unwrap() + model.loss(1, &b).unwrap();
    assert!((total - separate).abs() < 1e-12);
}

#[test]
fn shared_trunk_yields_equal_activations() {
    let model = toy_model(ShareMode::MtmCw, 2, 7);
    let toks = ["RING1", "binds", "aspirin"];
    assert_eq!(
        model.trunk_activations(0, &toks).unwrap(),
        model.trunk_activations(1, &toks).unwrap()
    );
    assert_ne!(
        model.forward_emissions(0, &toks).unwrap(),
        model.forward_emissions(1, &toks).unwrap()
    );
    let split = toy_model(ShareMode::MtmC, 2, 7);
    assert_ne!(
        split.trunk_activations(0, &toks).unwrap(),
        split.trunk_activations(1, &toks).unwrap()
    );
}

#[test]
fn dropout_only_changes_training_pass() {
    let model = toy_model(ShareMode::SingleTask, 1, 8);
    let s = sent("the RING1 protein", "O S-Gene O");
    let enc = model.encode(&s.tokens).unwrap();
    let labels = model.encode_labels(0, &s.tags).unwrap();
    let mut grads = model.params.zeros_like();
    let clean = model.accumulate_loss(0, &enc, &labels, 1.0, &mut grads, None).unwrap();
    let mut rng = RngSeed(1).rng();
    let mut d = Dropout { rate: 0.5, rng: &mut rng };
    let noisy = model.accumulate_loss(0, &enc, &labels, 1.0, &mut grads, Some(&mut d)).unwrap();
    assert_ne!(clean, noisy);
    assert_eq!(clean, model.loss(0, &s).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = toy_model(ShareMode::MtmC, 2, 10);
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    let back = Model::read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    let toks = ["cancer", "unseen-word", "RING1"];
    for t in 0..2 {
        let a = model.forward_emissions(t, &toks).unwrap();
        let b = back.forward_emissions(t, &toks).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert!(Model::read_checkpoint(&b"{\"format\":\"x\",\"version\":1}"[..]).is_err());
}

#[test]
fn dictionary_features_widen_word_input() {
    let vocab = build_vocab("breast cancer risk".split(' '), 1).unwrap();
    let table = EmbeddingTable::random(&vocab, 5, RngSeed(0)).unwrap();
    let dicts = vec![
        Dictionary::new("Disease", ["breast cancer"]).unwrap(),
        Dictionary::new("Gene", ["brca1"]).unwrap(),
    ];
    let config = ModelConfig {
        mode: ShareMode::SingleTask,
        dims: small_dims(),
        tasks: vec![TaskSpec::new("d", &["Disease"], 1.0).unwrap()],
        dictionary_mode: DictionaryMode::Feature,
        constrained_decoding: false,
    };
    let model = build_model(config, vocab, &table, dicts, RngSeed(0)).unwrap();
    assert_eq!(
        model.params.theta_w[0].bilstm.input_size(),
        2 * 3 + 5 + 2 * FEATURES_PER_TYPE
    );
    let enc = model.encode(&["breast", "cancer", "risk"]).unwrap();
    assert_eq!(enc.features[0].len(), 42);
}

#[test]
fn postprocess_mode_relabels_o_runs() {
    let vocab = build_vocab("breast cancer risk".split(' '), 1).unwrap();
    let table = EmbeddingTable::random(&vocab, 5, RngSeed(0)).unwrap();
    let config = ModelConfig {
        mode: ShareMode::SingleTask,
        dims: small_dims(),
        tasks: vec![TaskSpec::new("d", &["Disease"], 1.0).unwrap()],
        dictionary_mode: DictionaryMode::Postprocess,
        constrained_decoding: false,
    };
    let mut model = build_model(
        config,
        vocab,
        &table,
        vec![Dictionary::new("Disease", ["breast cancer"]).unwrap()],
        RngSeed(0),
    )
    .unwrap();
    // force all-O decoding
    model.params.theta_o[0].proj_b.set(0, 0, 100.0);
    let tags = model.predict(0, &["breast", "cancer", "risk"]).unwrap();
    assert_eq!(tags, vec!["B-Disease", "E-Disease", "O"]);
}

#[test]
fn constrained_decoding_yields_valid_iobes() {
    let mut model = toy_model(ShareMode::SingleTask, 1, 3);
    let inside = model.tasks()[0].labels.id("I-Gene").unwrap();
    model.params.theta_o[0].proj_b.set(inside, 0, 100.0);
    let toks = ["the", "RING1", "protein"];
    assert!(model.predict(0, &toks).unwrap().iter().all(|t| t == "I-Gene"));

    model.config.constrained_decoding = true;
    let tags = model.predict(0, &toks).unwrap();
    let mut prev = None;
    for t in &tags {
        assert!(crate::data::allowed_transition(prev, Some(t)), "{tags:?}");
        prev = Some(t.as_str());
    }
    assert!(crate::data::allowed_transition(prev, None), "{tags:?}");
}

#[test]
fn gradcheck_runner_passes_and_catches_sabotage() {
    let opts = GradcheckOptions {
        seeds: 2,
        ..Default::default()
    };
    let report = run_gradcheck(&opts).unwrap();
    assert!(report.passed(), "{report:?}");
    let stm_blocks: Vec<&str> = report
        .results
        .iter()
        .filter(|r| r.mode == ShareMode::SingleTask)
        .map(|r| r.block.as_str())
        .collect();
    assert_eq!(stm_blocks.len(), 6);

    let bad = run_gradcheck(&GradcheckOptions {
        sabotage: true,
        ..opts
    })
    .unwrap();
    assert!(!bad.passed());
    assert!(run_gradcheck(&GradcheckOptions { hidden: 9, ..Default::default() }).is_err());
}

#[test]
fn check_model_reports_each_block_once() {
    let model = toy_model(ShareMode::MtmC, 2, 11);
    let a = sent("RING1 binds", "S-Gene O");
    let blocks = check_model(&model, &[(0, &a)], &[1.0, 1.0], 1e-5, 1e-4, false).unwrap();
    assert_eq!(blocks.len(), model.params.block_names().len());
    assert_eq!(blocks.iter().map(|b| b.1).sum::<usize>(), model.params.num_params());
}
