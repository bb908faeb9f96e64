mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{clone_task, dims, gene_corpus, gene_task, model_for};
use seqtag::model::{Model, ShareMode};
use seqtag::train::{evaluate_task, train, TrainConfig};

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        batch_size: 2,
        seed,
        ..Default::default()
    }
}

#[test]
fn fixed_seed_gives_identical_reports() {
    let data = [gene_corpus()];
    let run = || {
        let model = model_for(ShareMode::SingleTask, &[("gene", &["GENE"])], &data, dims(10, 5, 8, 8), 5, 3);
        train(model, &data, &quick(3, 3)).unwrap()
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1.params, m2.params);
    for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }
    let jsonl = |r: &seqtag::train::TrainReport| {
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        buf
    };
    assert_eq!(jsonl(&r1), jsonl(&r2));
}

#[test]
fn one_task_mtm_cw_trains_like_stm() {
    let data = [gene_corpus()];
    let run = |mode| {
        let model = model_for(mode, &[("gene", &["GENE"])], &data, dims(10, 5, 8, 8), 5, 4);
        train(model, &data, &quick(3, 4)).unwrap()
    };
    let (stm, stm_report) = run(ShareMode::SingleTask);
    let (cw, cw_report) = run(ShareMode::MtmCw);
    assert_eq!(stm.params, cw.params);
    assert_eq!(stm_report.epochs, cw_report.epochs);
}

#[test]
fn best_checkpoint_reproduces_best_dev_score() {
    let data = [gene_corpus()];
    let model = model_for(ShareMode::SingleTask, &[("gene", &["GENE"])], &data, dims(10, 5, 10, 10), 5, 5);
    let (best, report) = train(model, &data, &quick(8, 5)).unwrap();
    assert!(report.best_epoch < report.epochs.len());
    for (i, e) in report.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.json");
    best.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    let f1 = evaluate_task(&loaded, 0, &data[0].dev).unwrap().score().f1;
    assert_eq!(f1, report.best_dev_score);
    assert_eq!(report.epochs[report.best_epoch].dev_score, report.best_dev_score);
}

#[test]
fn identical_task_copies_score_alike() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let task = gene_task(&mut rng, 0, 40, 40);
    let data = [clone_task(&task), task];
    let model = model_for(
        ShareMode::MtmCw,
        &[("a", &["GENE"]), ("b", &["GENE"])],
        &data,
        dims(20, 10, 20, 20),
        2,
        6,
    );
    let config = TrainConfig {
        max_epochs: 40,
        patience: 40,
        batch_size: 1,
        seed: 6,
        ..Default::default()
    };
    let (_, report) = train(model, &data, &config).unwrap();
    let best = &report.epochs[report.best_epoch];
    let (a, b) = (best.tasks[0].dev.f1, best.tasks[1].dev.f1);
    assert!(a > 0.5, "copies did not learn: {a} {b}");
    assert!((a - b).abs() <= 0.02, "copies differ: {a} vs {b}");
}

#[test]
fn empty_dev_set_is_rejected() {
    let mut data = [gene_corpus()];
    let model = model_for(ShareMode::SingleTask, &[("gene", &["GENE"])], &data, dims(5, 3, 3, 3), 5, 1);
    data[0].dev.clear();
    assert!(train(model, &data, &quick(1, 1)).is_err());
}
