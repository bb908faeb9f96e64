//! Mini-batch SGD over one or more tasks with dev-set model selection.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{tags_to_spans, LabeledSentence, SpanAnnotation};
use crate::error::{Error, Result};
use crate::eval::{exact_match_counts, MatchCounts, ScoreTriple};
use crate::math::{RngSeed, DEFAULT_CLIP_NORM};
use crate::model::{Dropout, Encoded, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            decay: 0.05,
            max_epochs: 100,
            patience: 10,
            batch_size: 10,
            seed: 0,
            dropout: 0.5,
            clip_norm: DEFAULT_CLIP_NORM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad(format!("decay must be non-negative, got {}", self.decay));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("patience, batch_size and max_epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// `lr0 / (1 + decay * epoch)`, epochs counted from 0.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 / (1.0 + config.decay * epoch as f64)
}

/// One epoch of `(task, sentence indices)` batches. Each task's sentences
/// are shuffled with its own stream derived from `seed`, cut into batches,
/// and the batches are interleaved task by task; tasks that run out drop
/// out of the rotation.
pub fn round_robin_schedule(sizes: &[usize], batch_size: usize, seed: RngSeed) -> Vec<(usize, Vec<usize>)> {
    let batch_size = batch_size.max(1);
    let per_task: Vec<Vec<Vec<usize>>> = sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed.derive(t as u64).rng());
            order.chunks(batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let rounds = per_task.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (t, batches) in per_task.iter().enumerate() {
            if let Some(b) = batches.get(r) {
                out.push((t, b.clone()));
            }
        }
    }
    out
}

/// Training and development sentences of one task, IOBES tagged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskData {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEpoch {
    pub task: String,
    /// Mean per-sentence training loss (unweighted, with dropout).
    pub train_loss: f64,
    pub dev: ScoreTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub tasks: Vec<TaskEpoch>,
    /// Mean over tasks of dev exact-match F1.
    pub dev_score: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_score: f64,
    pub stopped_early: bool,
    /// Left out of the serialized report so that reports of identical runs
    /// are byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Epoch(&'a EpochRecord),
    Summary {
        epochs_run: usize,
        best_epoch: usize,
        best_dev_score: f64,
        stopped_early: bool,
    },
}

impl TrainReport {
    /// One JSON object per epoch, then a summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, &ReportLine::Epoch(e))?;
            writeln!(w)?;
        }
        let summary = ReportLine::Summary {
            epochs_run: self.epochs.len(),
            best_epoch: self.best_epoch,
            best_dev_score: self.best_dev_score,
            stopped_early: self.stopped_early,
        };
        serde_json::to_writer(&mut w, &summary)?;
        writeln!(w)?;
        w.flush()
    }
}

/// Gold and predicted spans of `sentences` under `task`.
pub fn predict_spans(
    model: &Model,
    task: usize,
    sentences: &[LabeledSentence],
) -> Result<(Vec<Vec<SpanAnnotation>>, Vec<Vec<SpanAnnotation>>)> {
    let mut pred = Vec::with_capacity(sentences.len());
    let mut gold = Vec::with_capacity(sentences.len());
    for s in sentences {
        pred.push(tags_to_spans(&model.predict(task, &s.tokens)?));
        gold.push(s.spans());
    }
    Ok((pred, gold))
}

/// Exact-match counts of `model` on `sentences`.
pub fn evaluate_task(model: &Model, task: usize, sentences: &[LabeledSentence]) -> Result<MatchCounts> {
    let (pred, gold) = predict_spans(model, task, sentences)?;
    exact_match_counts(&pred, &gold)
}

struct Prepared {
    encoded: Vec<Encoded>,
    labels: Vec<Vec<usize>>,
}

pub fn train(model: Model, data: &[TaskData], config: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with(model, data, config, |_| {})
}

/// Trains `model` and returns the parameters with the best dev score.
/// `on_epoch` sees every epoch record as soon as it is complete.
pub fn train_with<F>(mut model: Model, data: &[TaskData], config: &TrainConfig, mut on_epoch: F) -> Result<(Model, TrainReport)>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    if data.len() != model.num_tasks() {
        return Err(Error::LengthMismatch {
            expected: model.num_tasks(),
            actual: data.len(),
        });
    }
    for (t, d) in data.iter().enumerate() {
        if d.train.is_empty() || d.dev.is_empty() {
            return Err(Error::Config(format!(
                "task {} needs non-empty train and dev sets",
                model.tasks()[t].name
            )));
        }
    }
    let start = Instant::now();
    let prepared = data
        .iter()
        .enumerate()
        .map(|(t, d)| {
            let encoded = d.train.iter().map(|s| model.encode(&s.tokens)).collect::<Result<Vec<_>>>()?;
            let labels = d
                .train
                .iter()
                .map(|s| model.encode_labels(t, &s.tags))
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared { encoded, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = data.iter().map(|d| d.train.len()).collect();
    let lambdas = model.lambdas();
    let seed = RngSeed(config.seed);
    let mut dropout_rng = seed.derive(u64::MAX).rng();
    let mut grads = model.params.zeros_like();

    let mut report = TrainReport {
        best_dev_score: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();
    for epoch in 0..config.max_epochs {
        let lr = lr_at(epoch, config);
        let mut loss_sum = vec![0.0; data.len()];
        for (task, batch) in round_robin_schedule(&sizes, config.batch_size, seed.derive(epoch as u64)) {
            grads.fill(0.0);
            let p = &prepared[task];
            for &i in &batch {
                let mut dropout = Dropout {
                    rate: config.dropout,
                    rng: &mut dropout_rng,
                };
                let loss = model.accumulate_loss(task, &p.encoded[i], &p.labels[i], lambdas[task], &mut grads, Some(&mut dropout))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        message: format!("non-finite loss on task {} sentence {i}", model.tasks()[task].name),
                    });
                }
                loss_sum[task] += loss;
            }
            model.params.sgd_update(&grads, lr, config.clip_norm)?;
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: "parameters became non-finite".into(),
                });
            }
        }

        let mut tasks = Vec::with_capacity(data.len());
        for (t, d) in data.iter().enumerate() {
            tasks.push(TaskEpoch {
                task: model.tasks()[t].name.clone(),
                train_loss: loss_sum[t] / sizes[t] as f64,
                dev: evaluate_task(&model, t, &d.dev)?.score(),
            });
        }
        let dev_score = tasks.iter().map(|t| t.dev.f1).sum::<f64>() / tasks.len() as f64;
        let improved = dev_score > report.best_dev_score;
        if improved {
            report.best_dev_score = dev_score;
            report.best_epoch = epoch;
            best = model.clone();
        }
        let record = EpochRecord {
            epoch,
            lr,
            tasks,
            dev_score,
            improved,
        };
        log::info!("epoch {epoch}: lr {lr:.6} dev {dev_score:.4}{}", if improved { " *" } else { "" });
        on_epoch(&record);
        report.epochs.push(record);
        if epoch - report.best_epoch >= config.patience {
            report.stopped_early = epoch + 1 < config.max_epochs;
            break;
        }
    }
    report.wall_time = start.elapsed();
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.01);
        assert!((lr_at(1, &c) - 0.01 / 1.05).abs() < 1e-15);
        assert!((lr_at(1, &c) - 0.0095238).abs() < 1e-7);
        let flat = TrainConfig { decay: 0.0, ..c.clone() };
        assert_eq!(lr_at(0, &flat), lr_at(50, &flat));
        for e in 0..100 {
            assert!(lr_at(e + 1, &c) < lr_at(e, &c));
        }
    }

    #[test]
    fn schedule_alternates_tasks() {
        let tasks = |sizes: &[usize]| -> Vec<usize> {
            round_robin_schedule(sizes, 2, RngSeed(3)).into_iter().map(|(t, _)| t).collect()
        };
        assert_eq!(tasks(&[4, 4]), vec![0, 1, 0, 1]);
        assert_eq!(tasks(&[6, 2]), vec![0, 1, 0, 0]);
        assert_eq!(tasks(&[1]), vec![0]);
    }

    #[test]
    fn schedule_shuffle_is_seeded() {
        let a = round_robin_schedule(&[7, 5], 3, RngSeed(11));
        assert_eq!(a, round_robin_schedule(&[7, 5], 3, RngSeed(11)));
        assert_ne!(a, round_robin_schedule(&[7, 5], 3, RngSeed(12)));
        // a task's permutation depends only on its own stream
        let solo = round_robin_schedule(&[7], 3, RngSeed(11));
        let first: Vec<Vec<usize>> = a.iter().filter(|(t, _)| *t == 0).map(|(_, b)| b.clone()).collect();
        let solo: Vec<Vec<usize>> = solo.into_iter().map(|(_, b)| b).collect();
        assert_eq!(first, solo);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { decay: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn every_sentence_once_per_epoch(
            sizes in prop::collection::vec(1usize..30, 1..5),
            batch in 1usize..8,
            seed in any::<u64>(),
        ) {
            let sched = round_robin_schedule(&sizes, batch, RngSeed(seed));
            for (t, &n) in sizes.iter().enumerate() {
                let mut seen: Vec<usize> = sched.iter().filter(|(tt, _)| *tt == t).flat_map(|(_, b)| b.clone()).collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
            prop_assert!(sched.iter().all(|(_, b)| !b.is_empty() && b.len() <= batch));
        }
    }
}
