#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;

use seqtag::data::{iob_to_iobes, parse_conll, LabeledSentence};
use seqtag::embeddings::{build_vocab, EmbeddingTable};
use seqtag::math::RngSeed;
use seqtag::model::{build_model, DictionaryMode, Model, ModelConfig, ModelDims, ShareMode, TaskSpec};
use seqtag::train::TaskData;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn read_iobes(path: impl AsRef<Path>) -> Vec<LabeledSentence> {
    let mut sentences = parse_conll(path).unwrap();
    for s in &mut sentences {
        s.tags = iob_to_iobes(&s.tags);
    }
    sentences
}

pub fn gene_corpus() -> TaskData {
    let dir = data_dir().join("gene");
    TaskData {
        train: read_iobes(dir.join("train.conll")),
        dev: read_iobes(dir.join("dev.conll")),
    }
}

/// Builds a model over the training vocabulary of `data`, one task per
/// entry, each tagging the entity types it is paired with.
pub fn model_for(
    mode: ShareMode,
    tasks: &[(&str, &[&str])],
    data: &[TaskData],
    dims: ModelDims,
    min_freq: usize,
    seed: u64,
) -> Model {
    let vocab = build_vocab(
        data.iter().flat_map(|d| d.train.iter().flat_map(|s| s.tokens.iter().map(String::as_str))),
        min_freq,
    )
    .unwrap();
    let seed = RngSeed(seed);
    let table = EmbeddingTable::random(&vocab, dims.word_dim, seed.derive(1)).unwrap();
    let config = ModelConfig {
        mode,
        dims,
        tasks: tasks
            .iter()
            .map(|(name, types)| TaskSpec::new(*name, types, 1.0).unwrap())
            .collect(),
        dictionary_mode: DictionaryMode::Off,
        constrained_decoding: false,
    };
    build_model(config, vocab, &table, Vec::new(), seed.derive(2)).unwrap()
}

pub fn dims(word_dim: usize, char_dim: usize, char_hidden: usize, word_hidden: usize) -> ModelDims {
    ModelDims {
        word_dim,
        char_dim,
        char_hidden,
        word_hidden,
    }
}

const CONTEXT: [&str; 14] = [
    "the", "expression", "of", "was", "increased", "in", "cells", "and", "by", "binding", "levels", "we", "found",
    "strongly",
];
const PREFIX: [&str; 4] = ["the", "human", "mutant", "a"];
const SUFFIX: [&str; 5] = ["gene", "protein", "locus", "transcript", "promoter"];

/// A gene-like symbol: two to four capitals and a number, e.g. `RAD51`.
pub fn gene_name<R: Rng + ?Sized>(rng: &mut R) -> String {
    let letters: String = (0..rng.random_range(2..=4))
        .map(|_| rng.random_range(b'A'..=b'Z') as char)
        .collect();
    format!("{letters}{}", rng.random_range(1..20))
}

/// One synthetic sentence with one or two `GENE` mentions. `style` picks
/// the phrasing, so two styles share vocabulary but differ in context.
pub fn gene_sentence<R: Rng + ?Sized>(rng: &mut R, style: usize) -> LabeledSentence {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mentions = rng.random_range(1..=2);
    for _ in 0..mentions {
        for _ in 0..rng.random_range(1..=3) {
            tokens.push(CONTEXT.choose(rng).unwrap().to_string());
            tags.push("O".to_string());
        }
        tokens.push(PREFIX[style % PREFIX.len()].to_string());
        tags.push("O".to_string());
        let name = gene_name(rng);
        if style % 2 == 1 && rng.random_bool(0.5) {
            tokens.extend([name, "receptor".to_string()]);
            tags.extend(["B-GENE", "E-GENE"].map(String::from));
        } else {
            tokens.push(name);
            tags.push("S-GENE".to_string());
        }
        tokens.push(SUFFIX.choose(rng).unwrap().to_string());
        tags.push("O".to_string());
    }
    tokens.push(".".to_string());
    tags.push("O".to_string());
    LabeledSentence::new(tokens, tags).unwrap()
}

pub fn gene_task<R: Rng + ?Sized>(rng: &mut R, style: usize, train: usize, dev: usize) -> TaskData {
    TaskData {
        train: (0..train).map(|_| gene_sentence(rng, style)).collect(),
        dev: (0..dev).map(|_| gene_sentence(rng, style)).collect(),
    }
}

pub fn clone_task(d: &TaskData) -> TaskData {
    TaskData {
        train: d.train.clone(),
        dev: d.dev.clone(),
    }
}
