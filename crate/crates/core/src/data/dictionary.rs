//! Entity dictionaries: n-gram membership features and O-span relabeling.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest dictionary entry considered, in words.
pub const MAX_ENTRY_WORDS: usize = 6;
/// One indicator per (window length, position in window): 1 + 2 + ... + 6.
pub const FEATURES_PER_TYPE: usize = MAX_ENTRY_WORDS * (MAX_ENTRY_WORDS + 1) / 2;

/// Lowercased, single-space-normalized entity names of one type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    pub entity_type: String,
    entries: BTreeSet<String>,
}

fn normalize(words: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut out = String::new();
    for w in words {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&w.as_ref().to_lowercase());
    }
    out
}

impl Dictionary {
    /// Entries longer than [`MAX_ENTRY_WORDS`] words are dropped.
    pub fn new<I, S>(entity_type: impl Into<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entity_type = entity_type.into();
        let mut set = BTreeSet::new();
        for e in entries {
            let words: Vec<&str> = e.as_ref().split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            if words.len() > MAX_ENTRY_WORDS {
                log::debug!("skipping {}-word dictionary entry '{}'", words.len(), e.as_ref());
                continue;
            }
            set.insert(normalize(words));
        }
        if set.is_empty() {
            return Err(Error::EmptyInput("dictionary has no usable entries"));
        }
        Ok(Dictionary {
            entity_type,
            entries: set,
        })
    }

    /// One entry per line.
    pub fn load(entity_type: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Dictionary::new(entity_type, lines)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_words(&self, words: &[impl AsRef<str>]) -> bool {
        self.entries.contains(&normalize(words))
    }

    fn contains_normalized(&self, key: &str) -> bool {
        self.entries.contains(key)
    }
}

/// Column of the indicator for a window of `len` words in which the token
/// sits at 1-based position `offset`.
pub fn feature_index(len: usize, offset: usize) -> usize {
    debug_assert!((1..=MAX_ENTRY_WORDS).contains(&len) && (1..=len).contains(&offset));
    len * (len - 1) / 2 + offset - 1
}

/// Binary features, [`FEATURES_PER_TYPE`] per dictionary, for every token.
///
/// For each dictionary, window length `l` in 1..=6 and offset `o` in 1..=l,
/// the feature is 1 when the `l`-word window holding the token at position
/// `o` matches an entry (case-insensitively).
pub fn dictionary_features(tokens: &[impl AsRef<str>], dictionaries: &[Dictionary]) -> Vec<Vec<f64>> {
    let n = tokens.len();
    let width = FEATURES_PER_TYPE * dictionaries.len();
    let mut out = vec![vec![0.0; width]; n];
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    for len in 1..=MAX_ENTRY_WORDS.min(n) {
        for start in 0..=n - len {
            let key = lower[start..start + len].join(" ");
            for (d, dict) in dictionaries.iter().enumerate() {
                if dict.contains_normalized(&key) {
                    for offset in 1..=len {
                        out[start + offset - 1][d * FEATURES_PER_TYPE + feature_index(len, offset)] = 1.0;
                    }
                }
            }
        }
    }
    out
}

/// Relabels runs of `O` tokens that exactly match a dictionary entry.
///
/// Scans left to right, trying the longest window first (at most six words,
/// all tagged `O`); the first dictionary containing the window wins. Existing
/// entities are never touched.
pub fn dictionary_postprocess(
    tags: &[impl AsRef<str>],
    tokens: &[impl AsRef<str>],
    dictionaries: &[Dictionary],
) -> Vec<String> {
    let mut out: Vec<String> = tags.iter().map(|t| t.as_ref().to_owned()).collect();
    let n = out.len().min(tokens.len());
    let is_o = |t: &str| t == "O";
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut i = 0;
    while i < n {
        if !is_o(&out[i]) {
            i += 1;
            continue;
        }
        let run = out[i..n].iter().take_while(|t| is_o(t)).count();
        let mut matched = None;
        'len: for len in (1..=run.min(MAX_ENTRY_WORDS)).rev() {
            let key = lower[i..i + len].join(" ");
            for dict in dictionaries {
                if dict.contains_normalized(&key) {
                    matched = Some((len, dict.entity_type.as_str()));
                    break 'len;
                }
            }
        }
        match matched {
            Some((1, ty)) => {
                out[i] = format!("S-{ty}");
                i += 1;
            }
            Some((len, ty)) => {
                out[i] = format!("B-{ty}");
                for t in &mut out[i + 1..i + len - 1] {
                    *t = format!("I-{ty}");
                }
                out[i + len - 1] = format!("E-{ty}");
                i += len;
            }
            None => i += 1,
        }
    }
    out
}
