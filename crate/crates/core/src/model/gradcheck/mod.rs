//! Finite-difference check of the full model gradient, reported per
//! parameter block.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_model, DictionaryMode, Model, ModelConfig, ModelDims, ShareMode, TaskSpec};
use crate::data::{Dictionary, LabeledSentence};
use crate::embeddings::{build_vocab, EmbeddingTable};
use crate::error::{Error, Result};
use crate::math::{check_epsilon, relative_error, RngSeed};

pub mod dd;
pub mod oracle;

use oracle::Prepared;

/// Step of the double-double recheck.
pub const REFINE_EPSILON: f64 = 1e-6;
/// Fraction of the tolerance above which a float64 estimate is rechecked.
const REFINE_FRACTION: f64 = 0.1;

/// Largest hidden size the checker accepts.
pub const MAX_HIDDEN: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seeds: usize,
    pub base_seed: u64,
    pub hidden: usize,
    pub max_words: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Doubles the analytic gradient of one block; the check must then fail.
    pub sabotage: bool,
    pub modes: Vec<ShareMode>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seeds: 20,
            base_seed: 0,
            hidden: 4,
            max_words: 5,
            epsilon: 1e-5,
            tolerance: 1e-4,
            sabotage: false,
            modes: ShareMode::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub mode: ShareMode,
    pub block: String,
    pub num_params: usize,
    /// Maximum over all seeds.
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub results: Vec<BlockResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

/// Block that `sabotage` corrupts.
pub const SABOTAGED_BLOCK: &str = "theta_o[0].transitions";

/// Maximum relative error per block of the gradient of
/// `sum lambda * loss` over `batch`, dropout off.
///
/// Coordinates whose float64 central difference disagrees by a tenth of
/// `tolerance` or more are re-estimated in double-double arithmetic with
/// step [`REFINE_EPSILON`], which removes the cancellation error that
/// dominates when a partial derivative happens to be close to zero.
pub fn check_model(
    model: &Model,
    batch: &[(usize, &LabeledSentence)],
    lambdas: &[f64],
    epsilon: f64,
    tolerance: f64,
    sabotage: bool,
) -> Result<Vec<(String, usize, f64)>> {
    check_epsilon(epsilon)?;
    let (_, grads) = model.multi_task_loss_and_grad(batch, lambdas)?;
    let mut analytic = grads.to_flat();
    let ranges = model.params.block_ranges();
    if sabotage {
        if let Some((_, r)) = ranges.iter().find(|(b, _)| b == SABOTAGED_BLOCK) {
            analytic[r.clone()].iter_mut().for_each(|g| *g *= 2.0);
        }
    }
    let theta = model.params.to_flat();
    let prepared = Prepared::new(model, batch, lambdas)?;
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(theta.len());
    for (i, &x) in theta.iter().enumerate() {
        let mut at = |v: f64| -> Result<f64> {
            *probe.params.coord_mut(i).expect("same layout") = v;
            prepared.model_loss(&probe)
        };
        let plus = at(x + epsilon)?;
        let minus = at(x - epsilon)?;
        *probe.params.coord_mut(i).expect("same layout") = x;
        numeric.push((plus - minus) / (2.0 * epsilon));
    }
    for i in 0..theta.len() {
        if relative_error(analytic[i], numeric[i]) >= tolerance * REFINE_FRACTION {
            numeric[i] = prepared.dd_partial(model, &theta, i, REFINE_EPSILON);
        }
    }
    Ok(ranges
        .into_iter()
        .map(|(block, r)| {
            let err = r
                .clone()
                .map(|i| relative_error(analytic[i], numeric[i]))
                .fold(0.0, f64::max);
            (block, r.len(), err)
        })
        .collect())
}

struct Fixture {
    model: Model,
    sentences: Vec<(usize, LabeledSentence)>,
    lambdas: Vec<f64>,
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'X', 'Y', '1', '-'];
    let len = rng.random_range(1..=4);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn fixture(mode: ShareMode, seed: RngSeed, opts: &GradcheckOptions) -> Result<Fixture> {
    let mut rng = seed.rng();
    let type_sets: Vec<Vec<&str>> = match mode {
        ShareMode::SingleTask => vec![vec!["A"]],
        _ => vec![vec!["A"], vec!["B", "C"]],
    };
    let lambdas: Vec<f64> = (0..type_sets.len()).map(|i| if i == 0 { 1.0 } else { 0.7 }).collect();
    let tasks = type_sets
        .iter()
        .zip(&lambdas)
        .enumerate()
        .map(|(i, (types, &l))| TaskSpec::new(format!("t{i}"), types, l))
        .collect::<Result<Vec<_>>>()?;

    let lexicon: Vec<String> = (0..6).map(|_| random_word(&mut rng)).collect();
    let mut sentences = Vec::new();
    for (task, spec) in tasks.iter().enumerate() {
        let n = rng.random_range(1..=opts.max_words);
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            // occasional out-of-vocabulary word exercises the <UNK> row
            tokens.push(if rng.random_bool(0.2) {
                format!("{}Z", random_word(&mut rng))
            } else {
                lexicon.choose(&mut rng).unwrap().clone()
            });
        }
        let tags = (0..n)
            .map(|_| spec.labels.labels().choose(&mut rng).unwrap().clone())
            .collect();
        sentences.push((task, LabeledSentence::new(tokens, tags)?));
    }

    let vocab = build_vocab(lexicon.iter().map(String::as_str), 1)?;
    let dims = ModelDims {
        word_dim: 4,
        char_dim: 3,
        char_hidden: opts.hidden,
        word_hidden: opts.hidden,
    };
    let mut table = EmbeddingTable::random(&vocab, dims.word_dim, seed.derive(1))?;
    // freeze every other known word, as if it had a pretrained vector
    for id in (1..vocab.num_words()).step_by(2) {
        table.trainable[id] = false;
    }
    let use_dict = rng.random_bool(0.5);
    let (dictionary_mode, dictionaries) = if use_dict {
        let entries = [lexicon[0].clone(), format!("{} {}", lexicon[1], lexicon[2])];
        (DictionaryMode::Feature, vec![Dictionary::new("A", entries)?])
    } else {
        (DictionaryMode::Off, Vec::new())
    };
    let config = ModelConfig {
        mode,
        dims,
        tasks,
        dictionary_mode,
        constrained_decoding: false,
    };
    let mut model = build_model(config, vocab, &table, dictionaries, seed.derive(2))?;
    // move biases and transitions off their zero initialization
    for o in &mut model.params.theta_o {
        for v in o.transitions.as_mut_slice().iter_mut().chain(o.proj_b.as_mut_slice()) {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    Ok(Fixture {
        model,
        sentences,
        lambdas,
    })
}

/// Runs [`check_model`] on random mini-fixtures for every requested mode
/// and seed.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.hidden == 0 || opts.hidden > MAX_HIDDEN {
        return Err(Error::Config(format!("gradcheck hidden size must be in 1..={MAX_HIDDEN}, got {}", opts.hidden)));
    }
    if opts.max_words == 0 || opts.seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed and one word".into()));
    }
    let mut results: Vec<BlockResult> = Vec::new();
    for (mi, &mode) in opts.modes.iter().enumerate() {
        let first = results.len();
        for s in 0..opts.seeds {
            let seed = RngSeed(opts.base_seed).derive((mi * opts.seeds + s) as u64);
            let fx = fixture(mode, seed, opts)?;
            let batch: Vec<(usize, &LabeledSentence)> = fx.sentences.iter().map(|(t, s)| (*t, s)).collect();
            let blocks = check_model(&fx.model, &batch, &fx.lambdas, opts.epsilon, opts.tolerance, opts.sabotage)?;
            for (block, n, err) in blocks {
                match results[first..].iter_mut().find(|r| r.block == block) {
                    Some(r) => {
                        r.max_rel_error = r.max_rel_error.max(err);
                        r.num_params = r.num_params.max(n);
                    }
                    None => results.push(BlockResult {
                        mode,
                        block,
                        num_params: n,
                        max_rel_error: err,
                    }),
                }
            }
        }
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        results,
    })
}
