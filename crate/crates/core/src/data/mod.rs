//! Corpora, tagging schemes, entity dictionaries and alternative answers.

mod alternatives;
mod conll;
mod dictionary;
mod scheme;

use serde::{Deserialize, Serialize};

pub use alternatives::{parse_alternatives, read_alternatives, AlternativeEntity};
pub use conll::{parse_conll, read_conll, read_tokens, write_conll, write_conll_to};
pub use dictionary::{
    dictionary_features, dictionary_postprocess, feature_index, Dictionary, FEATURES_PER_TYPE,
    MAX_ENTRY_WORDS,
};
pub use scheme::{allowed_transition, iob_to_iobes, iobes_to_iob, spans_to_tags, tags_to_spans, Tag};

/// A tokenized sentence with one tag per token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> crate::Result<Self> {
        if tokens.len() != tags.len() {
            return Err(crate::Error::LengthMismatch {
                expected: tokens.len(),
                actual: tags.len(),
            });
        }
        Ok(LabeledSentence { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self) -> Vec<SpanAnnotation> {
        tags_to_spans(&self.tags)
    }
}

/// Entity mention over tokens `start..=end`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl SpanAnnotation {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        SpanAnnotation {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn overlaps(&self, other: &SpanAnnotation) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}
