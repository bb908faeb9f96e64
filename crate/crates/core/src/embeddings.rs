//! Word and character vocabularies and the word embedding table.
//!
//! Pretrained vectors are read from the word2vec text format: a header line
//! `<count> <dim>` followed by one `<token> v1 ... v_dim` line per word.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{xavier_init, Matrix, RngSeed};

pub const UNK_WORD: &str = "<UNK>";
/// Placeholder stored at the unknown-character id.
pub const UNK_CHAR: char = '\u{FFFD}';
/// Separator inserted between words in a sentence's character stream.
pub const SPACE_CHAR: char = ' ';

pub const UNK_CHAR_ID: usize = 0;
pub const SPACE_CHAR_ID: usize = 1;

/// Word and character id assignments.
///
/// Word id 0 is `<UNK>`; character ids 0 and 1 are the unknown character and
/// the inter-word space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    chars: Vec<char>,
    word_freqs: BTreeMap<String, usize>,
    word_to_id: HashMap<String, usize>,
    char_to_id: HashMap<char, usize>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    chars: Vec<char>,
    word_freqs: BTreeMap<String, usize>,
    min_freq: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_parts(r.words, r.chars, r.word_freqs, r.min_freq)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            words: v.words,
            chars: v.chars,
            word_freqs: v.word_freqs,
            min_freq: v.min_freq,
        }
    }
}

impl Vocab {
    fn from_parts(
        words: Vec<String>,
        chars: Vec<char>,
        word_freqs: BTreeMap<String, usize>,
        min_freq: usize,
    ) -> Self {
        let word_to_id = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let char_to_id = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Vocab {
            words,
            chars,
            word_freqs,
            word_to_id,
            char_to_id,
            min_freq,
        }
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Corpus frequency of `token`, including tokens that fell below the
    /// threshold.
    pub fn frequency(&self, token: &str) -> usize {
        self.word_freqs.get(token).copied().unwrap_or(0)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_to_id.get(&c).copied().unwrap_or(UNK_CHAR_ID)
    }
}

/// Builds the vocabulary over every token of every corpus.
///
/// Tokens seen fewer than `min_freq` times are left out and resolve to
/// `<UNK>`. Ids are assigned by descending frequency, ties broken
/// lexicographically, so rebuilding from the same data is stable.
pub fn build_vocab<'a, I>(tokens: I, min_freq: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_freqs: BTreeMap<String, usize> = BTreeMap::new();
    let mut char_freqs: BTreeMap<char, usize> = BTreeMap::new();
    for tok in tokens {
        *word_freqs.entry(tok.to_owned()).or_default() += 1;
        for c in tok.chars() {
            *char_freqs.entry(c).or_default() += 1;
        }
    }
    if word_freqs.is_empty() {
        return Err(Error::EmptyInput("no tokens to build a vocabulary from"));
    }
    let min_freq = min_freq.max(1);

    let mut kept: Vec<(&String, usize)> = word_freqs
        .iter()
        .filter(|(w, &n)| n >= min_freq && w.as_str() != UNK_WORD)
        .map(|(w, &n)| (w, n))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let words = std::iter::once(UNK_WORD.to_owned())
        .chain(kept.into_iter().map(|(w, _)| w.clone()))
        .collect();

    let mut seen: Vec<(char, usize)> = char_freqs
        .into_iter()
        .filter(|&(c, _)| c != UNK_CHAR && c != SPACE_CHAR)
        .collect();
    seen.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let chars = [UNK_CHAR, SPACE_CHAR]
        .into_iter()
        .chain(seen.into_iter().map(|(c, _)| c))
        .collect();

    Ok(Vocab::from_parts(words, chars, word_freqs, min_freq))
}

/// Id of `token`, or the `<UNK>` id. Lookup is case-sensitive and never fails.
pub fn lookup_word(vocab: &Vocab, token: &str) -> usize {
    vocab
        .word_to_id
        .get(token)
        .copied()
        .unwrap_or_else(|| vocab.unk_id())
}

/// How many vocabulary words received a pretrained vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub found: usize,
    pub missing: usize,
}

/// One row per vocabulary id; `trainable[id]` marks rows updated during
/// training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: Matrix,
    pub trainable: Vec<bool>,
    pub coverage: Coverage,
}

impl EmbeddingTable {
    /// Randomly initialized table with every row trainable.
    pub fn random(vocab: &Vocab, dim: usize, seed: RngSeed) -> Result<Self> {
        let vectors = xavier_init(vocab.num_words(), dim, seed)?;
        Ok(EmbeddingTable {
            dim,
            vectors,
            trainable: vec![true; vocab.num_words()],
            coverage: Coverage {
                found: 0,
                missing: vocab.num_words() - 1,
            },
        })
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable.iter().filter(|&&t| t).count()
    }
}

/// Loads pretrained vectors for the words of `vocab`.
///
/// Rows found in the file are copied verbatim and frozen. `<UNK>` and words
/// missing from the file keep their Xavier-initialized values and are
/// trainable. Vectors for words outside the vocabulary are ignored.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    seed: RngSeed,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pretrained(BufReader::new(file), path, vocab, dim, seed)
}

pub fn read_pretrained<R: BufRead>(
    reader: R,
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: RngSeed,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab, dim, seed)?;
    let mut lines = reader.lines().enumerate();

    let (count, file_dim) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            parse_header(&line).ok_or_else(|| {
                Error::parse(path, 1, format!("expected '<count> <dim>' header, got '{line}'"))
            })?
        }
        None => return Err(Error::parse(path, 1, "empty embedding file")),
    };
    if file_dim != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: file_dim,
        });
    }

    let mut rows = 0;
    let mut found = vec![false; vocab.num_words()];
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        if rows > count {
            return Err(Error::parse(
                path,
                lineno,
                format!("more vectors than the {count} declared in the header"),
            ));
        }
        let mut parts = line.split_ascii_whitespace();
        let token = parts.next().unwrap_or_default();
        let values = parts
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("bad component: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} components, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite component"));
        }
        let Some(&id) = vocab.word_to_id.get(token) else {
            continue;
        };
        if id == vocab.unk_id() || found[id] {
            continue;
        }
        found[id] = true;
        table.vectors.row_mut(id).copy_from_slice(&values);
        table.trainable[id] = false;
    }
    if rows != count {
        return Err(Error::parse(
            path,
            rows + 1,
            format!("header declares {count} vectors, file has {rows}"),
        ));
    }

    let hits = found.iter().filter(|&&f| f).count();
    table.coverage = Coverage {
        found: hits,
        missing: vocab.num_words() - 1 - hits,
    };
    Ok(table)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_ascii_whitespace();
    let count = parts.next()?.parse().ok()?;
    let dim = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((count, dim))
}
