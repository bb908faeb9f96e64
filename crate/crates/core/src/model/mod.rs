//! Character + word BiLSTM-CRF tagger with per-task output layers and
//! configurable sharing of the character and word layers.

mod checkpoint;
pub mod gradcheck;
mod params;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{crf_gradients, log_likelihood, viterbi};
use crate::data::{allowed_transition, dictionary_features, dictionary_postprocess, Dictionary, LabeledSentence, FEATURES_PER_TYPE};
use crate::embeddings::{lookup_word, EmbeddingTable, Vocab, SPACE_CHAR_ID};
use crate::error::{Error, Result};
use crate::lstm::{
    bilstm_backward_into, bilstm_forward, bilstm_outputs, build_char_stream, char_word_representation,
    char_word_representation_backward, BiLstmParams, BiLstmTape, CharStream,
};
use crate::math::{normal_init_with, xavier_init_with, Matrix, RngSeed};

pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use params::{CharParams, Named, OutputParams, ParamSet, WordParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShareMode {
    #[serde(rename = "stm")]
    SingleTask,
    #[serde(rename = "mtm-c")]
    MtmC,
    #[serde(rename = "mtm-w")]
    MtmW,
    #[serde(rename = "mtm-cw")]
    MtmCw,
}

impl ShareMode {
    pub const ALL: [ShareMode; 4] = [ShareMode::SingleTask, ShareMode::MtmC, ShareMode::MtmW, ShareMode::MtmCw];

    pub fn shares_char(self) -> bool {
        matches!(self, ShareMode::MtmC | ShareMode::MtmCw)
    }

    pub fn shares_word(self) -> bool {
        matches!(self, ShareMode::MtmW | ShareMode::MtmCw)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShareMode::SingleTask => "stm",
            ShareMode::MtmC => "mtm-c",
            ShareMode::MtmW => "mtm-w",
            ShareMode::MtmCw => "mtm-cw",
        }
    }
}

impl fmt::Display for ShareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShareMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShareMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}' (expected stm, mtm-c, mtm-w or mtm-cw)")))
    }
}

/// How entity dictionaries are used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryMode {
    #[default]
    Off,
    /// Membership features appended to the word-level BiLSTM input.
    Feature,
    /// `O` runs matching an entry are relabeled after decoding.
    Postprocess,
}

impl FromStr for DictionaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(DictionaryMode::Off),
            "feature" => Ok(DictionaryMode::Feature),
            "postprocess" => Ok(DictionaryMode::Postprocess),
            _ => Err(Error::Config(format!(
                "unknown dictionary mode '{s}' (expected off, feature or postprocess)"
            ))),
        }
    }
}

/// IOBES tags of a task: `O` first, then `B-`, `I-`, `E-`, `S-` per type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelSet {
    fn from(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelSet { labels, index }
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.labels
    }
}

impl LabelSet {
    pub fn from_entity_types(types: &[impl AsRef<str>]) -> Self {
        let mut labels = vec!["O".to_owned()];
        for t in types {
            for p in ["B", "I", "E", "S"] {
                labels.push(format!("{p}-{}", t.as_ref()));
            }
        }
        LabelSet::from(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub entity_types: Vec<String>,
    pub labels: LabelSet,
    /// Weight of this task's loss.
    pub lambda: f64,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, entity_types: &[impl AsRef<str>], lambda: f64) -> Result<Self> {
        let name = name.into();
        if entity_types.is_empty() {
            return Err(Error::Config(format!("task {name} has no entity types")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("task {name}: lambda must be positive, got {lambda}")));
        }
        Ok(TaskSpec {
            labels: LabelSet::from_entity_types(entity_types),
            entity_types: entity_types.iter().map(|t| t.as_ref().to_owned()).collect(),
            name,
            lambda,
        })
    }

    /// Task over an explicit label list, e.g. a subset of IOBES tags.
    pub fn with_labels(name: impl Into<String>, labels: Vec<String>, lambda: f64) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::Config(format!("task {name} has no labels")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("task {name}: lambda must be positive, got {lambda}")));
        }
        let mut entity_types: Vec<String> = Vec::new();
        for l in &labels {
            if let Some((_, ty)) = l.split_once('-') {
                if !entity_types.iter().any(|t| t == ty) {
                    entity_types.push(ty.to_owned());
                }
            }
        }
        Ok(TaskSpec {
            name,
            entity_types,
            labels: LabelSet::from(labels),
            lambda,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            word_dim: 200,
            char_dim: 30,
            char_hidden: 200,
            word_hidden: 200,
        }
    }
}

impl ModelDims {
    fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.char_hidden == 0 || self.word_hidden == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ShareMode,
    pub dims: ModelDims,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub dictionary_mode: DictionaryMode,
    /// Forbid transitions that IOBES rules out when decoding. Training is
    /// unaffected.
    #[serde(default)]
    pub constrained_decoding: bool,
}

/// A sentence mapped to model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub chars: CharStream,
    pub words: Vec<usize>,
    /// Dictionary features per word; empty rows unless features are enabled.
    pub features: Vec<Vec<f64>>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Inverted dropout applied during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Vec<Vec<f64>>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        Some(
            (0..rows)
                .map(|_| {
                    (0..cols)
                        .map(|_| if self.rng.random::<f64>() < keep { scale } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }
}

/// `n x k` emissions `W h_t + b`.
fn project(out: &OutputParams, hs: &[Vec<f64>]) -> Matrix {
    let mut emissions = Matrix::zeros(hs.len(), out.num_labels());
    for (t, h) in hs.iter().enumerate() {
        let row = emissions.row_mut(t);
        row.copy_from_slice(out.proj_b.as_slice());
        out.proj_w.matvec_add(h, row);
    }
    emissions
}

fn apply_mask(xs: &mut [Vec<f64>], mask: &Option<Vec<Vec<f64>>>) {
    if let Some(mask) = mask {
        for (x, m) in xs.iter_mut().zip(mask) {
            x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
    }
}

struct Trace {
    char_tape: BiLstmTape,
    char_mask: Option<Vec<Vec<f64>>>,
    word_tape: BiLstmTape,
    word_out: Vec<Vec<f64>>,
    word_mask: Option<Vec<Vec<f64>>>,
    emissions: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub dictionaries: Vec<Dictionary>,
    /// Full embedding table; rows with a trainable slot are read from the
    /// word blocks instead.
    word_table: Matrix,
    row_slot: Vec<Option<usize>>,
    pub params: ParamSet,
}

/// Allocates parameters for `config`, sharing blocks as its mode dictates.
///
/// Frozen (pretrained) embedding rows stay outside the parameter set; every
/// trainable row gets a slot in each word block. Character embeddings are
/// drawn from N(0, 0.1^2), LSTM and projection weights are Xavier-uniform,
/// biases and transitions start at zero.
pub fn build_model(
    config: ModelConfig,
    vocab: Vocab,
    embeddings: &EmbeddingTable,
    dictionaries: Vec<Dictionary>,
    seed: RngSeed,
) -> Result<Model> {
    let m = config.tasks.len();
    if m == 0 {
        return Err(Error::Config("at least one task is required".into()));
    }
    if config.mode == ShareMode::SingleTask && m != 1 {
        return Err(Error::Config(format!("mode stm takes exactly one task, got {m}")));
    }
    for (i, t) in config.tasks.iter().enumerate() {
        if config.tasks[..i].iter().any(|o| o.name == t.name) {
            return Err(Error::Config(format!("duplicate task name {}", t.name)));
        }
    }
    let dims = config.dims;
    dims.validate()?;
    if embeddings.dim != dims.word_dim {
        return Err(Error::DimMismatch {
            expected: dims.word_dim,
            actual: embeddings.dim,
        });
    }
    if embeddings.vectors.rows() != vocab.num_words() || embeddings.trainable.len() != vocab.num_words() {
        return Err(Error::LengthMismatch {
            expected: vocab.num_words(),
            actual: embeddings.vectors.rows(),
        });
    }
    let dictionaries = match config.dictionary_mode {
        DictionaryMode::Off => Vec::new(),
        _ if dictionaries.is_empty() => {
            return Err(Error::Config("dictionary mode is on but no dictionaries were given".into()))
        }
        _ => dictionaries,
    };

    let mut row_slot = Vec::with_capacity(vocab.num_words());
    let mut trainable_rows = Vec::new();
    for (id, &t) in embeddings.trainable.iter().enumerate() {
        if t {
            row_slot.push(Some(trainable_rows.len()));
            trainable_rows.push(embeddings.vectors.row(id).to_vec());
        } else {
            row_slot.push(None);
        }
    }
    let slots = if trainable_rows.is_empty() {
        Matrix::zeros(0, dims.word_dim)
    } else {
        Matrix::from_rows(&trainable_rows)?
    };

    let feature_width = match config.dictionary_mode {
        DictionaryMode::Feature => FEATURES_PER_TYPE * dictionaries.len(),
        _ => 0,
    };
    let word_input = 2 * dims.char_hidden + dims.word_dim + feature_width;
    let n_char = if config.mode.shares_char() { 1 } else { m };
    let n_word = if config.mode.shares_word() { 1 } else { m };

    let mut rng = seed.rng();
    let mut theta_c = Vec::with_capacity(n_char);
    for _ in 0..n_char {
        theta_c.push(CharParams {
            embed: normal_init_with(vocab.num_chars(), dims.char_dim, 0.1, &mut rng),
            bilstm: BiLstmParams::init(dims.char_dim, dims.char_hidden, &mut rng)?,
        });
    }
    let mut theta_w = Vec::with_capacity(n_word);
    for _ in 0..n_word {
        theta_w.push(WordParams {
            embed: slots.clone(),
            bilstm: BiLstmParams::init(word_input, dims.word_hidden, &mut rng)?,
        });
    }
    let mut theta_o = Vec::with_capacity(m);
    for t in &config.tasks {
        let k = t.num_labels();
        theta_o.push(OutputParams {
            proj_w: xavier_init_with(k, 2 * dims.word_hidden, &mut rng)?,
            proj_b: Matrix::zeros(k, 1),
            transitions: Matrix::zeros(k + 2, k + 2),
        });
    }

    Ok(Model {
        config,
        vocab,
        dictionaries,
        word_table: embeddings.vectors.clone(),
        row_slot,
        params: ParamSet {
            theta_c,
            theta_w,
            theta_o,
        },
    })
}

impl Model {
    pub fn mode(&self) -> ShareMode {
        self.config.mode
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.config.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.config.tasks.len()
    }

    pub fn task(&self, task: usize) -> Result<&TaskSpec> {
        self.config
            .tasks
            .get(task)
            .ok_or_else(|| Error::UnknownTask(format!("#{task} (model has {} tasks)", self.num_tasks())))
    }

    /// Index of the task called `name`.
    pub fn task_id(&self, name: &str) -> Result<usize> {
        self.config.tasks.iter().position(|t| t.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.config.tasks.iter().map(|t| t.name.as_str()).collect();
            Error::UnknownTask(format!("{name} (known tasks: {})", known.join(", ")))
        })
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.config.tasks.iter().map(|t| t.lambda).collect()
    }

    /// Index into `params.theta_c` used by `task`.
    pub fn char_block(&self, task: usize) -> usize {
        if self.config.mode.shares_char() {
            0
        } else {
            task
        }
    }

    /// Index into `params.theta_w` used by `task`.
    pub fn word_block(&self, task: usize) -> usize {
        if self.config.mode.shares_word() {
            0
        } else {
            task
        }
    }

    fn feature_width(&self) -> usize {
        match self.config.dictionary_mode {
            DictionaryMode::Feature => FEATURES_PER_TYPE * self.dictionaries.len(),
            _ => 0,
        }
    }

    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> Result<Encoded> {
        let chars = build_char_stream(tokens, SPACE_CHAR_ID, |c| self.vocab.char_id(c))?;
        let words = tokens.iter().map(|t| lookup_word(&self.vocab, t.as_ref())).collect();
        let features = if self.feature_width() > 0 {
            dictionary_features(tokens, &self.dictionaries)
        } else {
            vec![Vec::new(); tokens.len()]
        };
        Ok(Encoded { chars, words, features })
    }

    /// Label ids of `tags` in `task`'s label set.
    pub fn encode_labels(&self, task: usize, tags: &[impl AsRef<str>]) -> Result<Vec<usize>> {
        let spec = self.task(task)?;
        tags.iter()
            .map(|t| {
                spec.labels.id(t.as_ref()).ok_or_else(|| Error::UnknownLabel {
                    task: spec.name.clone(),
                    label: t.as_ref().to_owned(),
                })
            })
            .collect()
    }

    fn word_vector<'a>(&'a self, block: &'a WordParams, id: usize) -> &'a [f64] {
        match self.row_slot[id] {
            Some(slot) => block.embed.row(slot),
            None => self.word_table.row(id),
        }
    }

    /// Word-level representations fed to the word BiLSTM:
    /// `[char fwd ‖ char bwd ‖ word embedding ‖ dictionary features]`.
    fn word_inputs(&self, wb: &WordParams, char_rep: Vec<Vec<f64>>, enc: &Encoded) -> Vec<Vec<f64>> {
        char_rep
            .into_iter()
            .zip(&enc.words)
            .zip(&enc.features)
            .map(|((mut x, &w), f)| {
                x.extend_from_slice(self.word_vector(wb, w));
                x.extend_from_slice(f);
                x
            })
            .collect()
    }

    /// Word BiLSTM outputs without dropout or tapes.
    fn trunk(&self, task: usize, enc: &Encoded) -> Result<Vec<Vec<f64>>> {
        self.task(task)?;
        let cb = &self.params.theta_c[self.char_block(task)];
        let wb = &self.params.theta_w[self.word_block(task)];
        let char_in: Vec<Vec<f64>> = enc.chars.ids.iter().map(|&c| cb.embed.row(c).to_vec()).collect();
        let char_out = bilstm_outputs(&cb.bilstm, &char_in)?;
        let char_rep = char_word_representation(&char_out, &enc.chars.spans, self.dims().char_hidden)?;
        bilstm_outputs(&wb.bilstm, &self.word_inputs(wb, char_rep, enc))
    }

    fn emissions(&self, task: usize, enc: &Encoded) -> Result<Matrix> {
        let h = self.trunk(task, enc)?;
        Ok(project(&self.params.theta_o[task], &h))
    }

    fn run(&self, task: usize, enc: &Encoded, mut dropout: Option<&mut Dropout<'_>>) -> Result<Trace> {
        self.task(task)?;
        let dims = self.dims();
        let cb = &self.params.theta_c[self.char_block(task)];
        let wb = &self.params.theta_w[self.word_block(task)];
        let out = &self.params.theta_o[task];
        let n = enc.len();

        let char_in: Vec<Vec<f64>> = enc.chars.ids.iter().map(|&c| cb.embed.row(c).to_vec()).collect();
        let (char_out, char_tape) = bilstm_forward(&cb.bilstm, &char_in)?;
        let mut char_rep = char_word_representation(&char_out, &enc.chars.spans, dims.char_hidden)?;
        let char_mask = dropout.as_mut().and_then(|d| d.mask(n, 2 * dims.char_hidden));
        apply_mask(&mut char_rep, &char_mask);

        let word_in = self.word_inputs(wb, char_rep, enc);
        let (mut word_out, word_tape) = bilstm_forward(&wb.bilstm, &word_in)?;
        let word_mask = dropout.as_mut().and_then(|d| d.mask(n, 2 * dims.word_hidden));
        apply_mask(&mut word_out, &word_mask);

        let emissions = project(out, &word_out);
        Ok(Trace {
            char_tape,
            char_mask,
            word_tape,
            word_out,
            word_mask,
            emissions,
        })
    }

    /// `n x k` emission scores for `task`, dropout off.
    pub fn forward_emissions(&self, task: usize, tokens: &[impl AsRef<str>]) -> Result<Matrix> {
        let enc = self.encode(tokens)?;
        self.emissions(task, &enc)
    }

    /// Word BiLSTM outputs (before the task projection), dropout off.
    pub fn trunk_activations(&self, task: usize, tokens: &[impl AsRef<str>]) -> Result<Vec<Vec<f64>>> {
        let enc = self.encode(tokens)?;
        self.trunk(task, &enc)
    }

    /// Negative log-likelihood of `labels`; adds `weight` times its gradient
    /// into `grads` and returns the unweighted loss.
    pub fn accumulate_loss(
        &self,
        task: usize,
        enc: &Encoded,
        labels: &[usize],
        weight: f64,
        grads: &mut ParamSet,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<f64> {
        let trace = self.run(task, enc, dropout)?;
        let out = &self.params.theta_o[task];
        let crf = crf_gradients(&trace.emissions, &out.transitions, labels)?;
        let dims = self.dims();

        // d(loss)/d(score) is minus the log-likelihood gradient
        let g = -weight;
        let go = &mut grads.theta_o[task];
        go.transitions.axpy(g, &crf.transitions)?;
        let mut d_word_out = Vec::with_capacity(enc.len());
        for (t, h) in trace.word_out.iter().enumerate() {
            let dp: Vec<f64> = crf.emissions.row(t).iter().map(|v| g * v).collect();
            go.proj_w.add_outer(&dp, h);
            crate::math::axpy(1.0, &dp, go.proj_b.as_mut_slice());
            let mut dh = vec![0.0; h.len()];
            out.proj_w.matvec_t_add(&dp, &mut dh);
            d_word_out.push(dh);
        }
        apply_mask(&mut d_word_out, &trace.word_mask);

        let wi = self.word_block(task);
        let d_word_in = bilstm_backward_into(
            &self.params.theta_w[wi].bilstm,
            &trace.word_tape,
            &d_word_out,
            &mut grads.theta_w[wi].bilstm,
        )?;
        let split = 2 * dims.char_hidden;
        let mut d_char_rep = Vec::with_capacity(enc.len());
        for (d, &w) in d_word_in.iter().zip(&enc.words) {
            if let Some(slot) = self.row_slot[w] {
                crate::math::axpy(
                    1.0,
                    &d[split..split + dims.word_dim],
                    grads.theta_w[wi].embed.row_mut(slot),
                );
            }
            d_char_rep.push(d[..split].to_vec());
        }
        apply_mask(&mut d_char_rep, &trace.char_mask);

        let ci = self.char_block(task);
        let d_char_out = char_word_representation_backward(
            &d_char_rep,
            &enc.chars.spans,
            enc.chars.ids.len(),
            dims.char_hidden,
        );
        let d_char_in = bilstm_backward_into(
            &self.params.theta_c[ci].bilstm,
            &trace.char_tape,
            &d_char_out,
            &mut grads.theta_c[ci].bilstm,
        )?;
        let ge = &mut grads.theta_c[ci].embed;
        for (d, &c) in d_char_in.iter().zip(&enc.chars.ids) {
            crate::math::axpy(1.0, d, ge.row_mut(c));
        }
        Ok(-crf.log_likelihood)
    }

    /// Negative log-likelihood of a tagged sentence, dropout off.
    pub fn loss(&self, task: usize, sentence: &LabeledSentence) -> Result<f64> {
        let enc = self.encode(&sentence.tokens)?;
        let labels = self.encode_labels(task, &sentence.tags)?;
        self.encoded_loss(task, &enc, &labels)
    }

    /// [`Model::loss`] of an already encoded sentence.
    pub fn encoded_loss(&self, task: usize, enc: &Encoded, labels: &[usize]) -> Result<f64> {
        let emissions = self.emissions(task, enc)?;
        Ok(-log_likelihood(&emissions, &self.params.theta_o[task].transitions, labels)?)
    }

    /// Loss and its gradient for one tagged sentence, dropout off. Blocks
    /// not on the sentence's path get zero gradients.
    pub fn sentence_loss(&self, task: usize, sentence: &LabeledSentence) -> Result<(f64, ParamSet)> {
        let enc = self.encode(&sentence.tokens)?;
        let labels = self.encode_labels(task, &sentence.tags)?;
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_loss(task, &enc, &labels, 1.0, &mut grads, None)?;
        Ok((loss, grads))
    }

    /// `sum lambda[task] * loss` over the batch, dropout off.
    pub fn multi_task_loss(&self, batch: &[(usize, &LabeledSentence)], lambdas: &[f64]) -> Result<f64> {
        self.check_lambdas(lambdas)?;
        batch
            .iter()
            .map(|&(task, s)| Ok(lambdas[task] * self.loss(task, s)?))
            .sum()
    }

    /// [`Model::multi_task_loss`] with its gradient.
    pub fn multi_task_loss_and_grad(
        &self,
        batch: &[(usize, &LabeledSentence)],
        lambdas: &[f64],
    ) -> Result<(f64, ParamSet)> {
        self.check_lambdas(lambdas)?;
        let mut grads = self.params.zeros_like();
        let mut total = 0.0;
        for &(task, s) in batch {
            let enc = self.encode(&s.tokens)?;
            let labels = self.encode_labels(task, &s.tags)?;
            total += lambdas[task] * self.accumulate_loss(task, &enc, &labels, lambdas[task], &mut grads, None)?;
        }
        Ok((total, grads))
    }

    fn check_lambdas(&self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.num_tasks() {
            return Err(Error::LengthMismatch {
                expected: self.num_tasks(),
                actual: lambdas.len(),
            });
        }
        Ok(())
    }

    /// Viterbi tags for an encoded sentence; applies dictionary
    /// postprocessing when configured.
    pub fn predict_encoded(&self, task: usize, enc: &Encoded, tokens: &[impl AsRef<str>]) -> Result<Vec<String>> {
        let emissions = self.emissions(task, enc)?;
        let labels = &self.task(task)?.labels;
        let transitions = &self.params.theta_o[task].transitions;
        let (ids, _) = if self.config.constrained_decoding {
            viterbi(&emissions, &masked_transitions(transitions, labels))?
        } else {
            viterbi(&emissions, transitions)?
        };
        let tags: Vec<String> = ids
            .into_iter()
            .map(|id| labels.label(id).unwrap_or("O").to_owned())
            .collect();
        Ok(match self.config.dictionary_mode {
            DictionaryMode::Postprocess => dictionary_postprocess(&tags, tokens, &self.dictionaries),
            _ => tags,
        })
    }

    pub fn predict(&self, task: usize, tokens: &[impl AsRef<str>]) -> Result<Vec<String>> {
        let enc = self.encode(tokens)?;
        self.predict_encoded(task, &enc, tokens)
    }
}

/// `a` with `-inf` wherever IOBES forbids the transition.
fn masked_transitions(a: &Matrix, labels: &LabelSet) -> Matrix {
    let k = labels.len();
    // rows and columns k and k+1 are <start> and <end>
    let name = |i: usize| (i < k).then(|| labels.labels()[i].as_str());
    let mut out = a.clone();
    for from in 0..k + 2 {
        for to in 0..k + 2 {
            let boundary_ok = from != k + 1 && to != k;
            let from_tag = if from == k { None } else { name(from) };
            if !boundary_ok || !allowed_transition(from_tag, name(to)) {
                out.set(from, to, f64::NEG_INFINITY);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
