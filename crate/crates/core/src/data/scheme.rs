//! IOB / IOBES conversion and span extraction.

use super::SpanAnnotation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
    End(&'a str),
    Single(&'a str),
}

impl<'a> Tag<'a> {
    /// Anything that is not `B-`, `I-`, `E-` or `S-` followed by a type reads
    /// as `O`.
    pub fn parse(tag: &'a str) -> Tag<'a> {
        let Some((prefix, ty)) = tag.split_once('-') else {
            return Tag::Outside;
        };
        if ty.is_empty() {
            return Tag::Outside;
        }
        match prefix {
            "B" => Tag::Begin(ty),
            "I" => Tag::Inside(ty),
            "E" => Tag::End(ty),
            "S" => Tag::Single(ty),
            _ => Tag::Outside,
        }
    }
}

/// Groups tags into entity chunks. Accepts IOB1, IOB2 and IOBES alike; an
/// `I-`/`E-` that does not continue an open chunk of the same type starts a
/// new one.
fn chunk(tags: &[impl AsRef<str>], mut on_repair: impl FnMut(usize)) -> Vec<SpanAnnotation> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: &mut Option<(usize, &str)>, end: usize, spans: &mut Vec<SpanAnnotation>| {
        if let Some((start, ty)) = open.take() {
            spans.push(SpanAnnotation::new(start, end, ty));
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        match Tag::parse(tag.as_ref()) {
            Tag::Outside => {
                if i > 0 {
                    close(&mut open, i - 1, &mut spans);
                }
            }
            Tag::Begin(ty) => {
                if i > 0 {
                    close(&mut open, i - 1, &mut spans);
                }
                open = Some((i, ty));
            }
            Tag::Single(ty) => {
                if i > 0 {
                    close(&mut open, i - 1, &mut spans);
                }
                spans.push(SpanAnnotation::new(i, i, ty));
            }
            Tag::Inside(ty) => match open {
                Some((_, t)) if t == ty => {}
                _ => {
                    on_repair(i);
                    if i > 0 {
                        close(&mut open, i - 1, &mut spans);
                    }
                    open = Some((i, ty));
                }
            },
            Tag::End(ty) => match open {
                Some((start, t)) if t == ty => {
                    spans.push(SpanAnnotation::new(start, i, ty));
                    open = None;
                }
                _ => {
                    on_repair(i);
                    if i > 0 {
                        close(&mut open, i - 1, &mut spans);
                    }
                    spans.push(SpanAnnotation::new(i, i, ty));
                }
            },
        }
    }
    if !tags.is_empty() {
        close(&mut open, tags.len() - 1, &mut spans);
    }
    spans
}

/// Entity spans of an IOBES (or IOB) tag sequence, in order. Ill-formed
/// runs are repaired leniently: a stray `I-`/`E-` starts a new entity.
pub fn tags_to_spans(tags: &[impl AsRef<str>]) -> Vec<SpanAnnotation> {
    chunk(tags, |_| {})
}

/// IOBES tags for non-overlapping `spans` over `len` tokens.
pub fn spans_to_tags(spans: &[SpanAnnotation], len: usize) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_owned(); len];
    let mut used = vec![false; len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::OutOfRange {
                index: s.end.max(s.start),
                len,
            });
        }
        if used[s.start..=s.end].iter().any(|&u| u) {
            return Err(Error::Config(format!(
                "overlapping span {}..={} ({})",
                s.start, s.end, s.entity_type
            )));
        }
        used[s.start..=s.end].iter_mut().for_each(|u| *u = true);
        let ty = &s.entity_type;
        if s.start == s.end {
            tags[s.start] = format!("S-{ty}");
        } else {
            tags[s.start] = format!("B-{ty}");
            for t in &mut tags[s.start + 1..s.end] {
                *t = format!("I-{ty}");
            }
            tags[s.end] = format!("E-{ty}");
        }
    }
    Ok(tags)
}

/// Converts IOB/IOB2 tags to IOBES. An `I-` tag that does not continue an
/// entity of its type is treated as `B-` and logged.
pub fn iob_to_iobes(tags: &[impl AsRef<str>]) -> Vec<String> {
    let spans = chunk(tags, |i| {
        log::warn!("tag {} at position {i} does not continue an entity; treating it as B-", tags[i].as_ref());
    });
    spans_to_tags(&spans, tags.len()).expect("chunks are disjoint and in range")
}

/// Converts IOBES (or IOB1) tags to IOB2.
pub fn iobes_to_iob(tags: &[impl AsRef<str>]) -> Vec<String> {
    let mut out = vec!["O".to_owned(); tags.len()];
    for s in tags_to_spans(tags) {
        out[s.start] = format!("B-{}", s.entity_type);
        for t in &mut out[s.start + 1..=s.end] {
            *t = format!("I-{}", s.entity_type);
        }
    }
    out
}

/// Whether IOBES allows tag `to` right after tag `from`. `None` stands for
/// the sentence boundary: `from` at the start, `to` at the end.
pub fn allowed_transition(from: Option<&str>, to: Option<&str>) -> bool {
    let open = match from.map(Tag::parse) {
        Some(Tag::Begin(ty) | Tag::Inside(ty)) => Some(ty),
        _ => None,
    };
    let continues = match to.map(Tag::parse) {
        Some(Tag::Inside(ty) | Tag::End(ty)) => Some(ty),
        _ => None,
    };
    match (open, continues) {
        (Some(a), Some(b)) => a == b,
        (None, None) => true,
        _ => false,
    }
}
