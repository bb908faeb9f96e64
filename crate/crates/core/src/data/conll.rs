use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::LabeledSentence;
use crate::error::{Error, Result};

/// Reads a CoNLL-style file: one token per line with its tag in the last
/// whitespace-separated column, sentences separated by blank lines.
/// `-DOCSTART-` lines are skipped. CRLF line endings are accepted.
pub fn parse_conll(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_conll(BufReader::new(file), path)
}

pub fn read_conll<R: BufRead>(reader: R, path: &Path) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut cols = line.split_whitespace();
        let Some(token) = cols.next() else {
            flush(&mut out, &mut tokens, &mut tags);
            continue;
        };
        if token == "-DOCSTART-" {
            continue;
        }
        let Some(tag) = cols.last() else {
            return Err(Error::parse(path, idx + 1, format!("no tag column in '{line}'")));
        };
        tokens.push(token.to_owned());
        tags.push(tag.to_owned());
    }
    flush(&mut out, &mut tokens, &mut tags);
    Ok(out)
}

fn flush(out: &mut Vec<LabeledSentence>, tokens: &mut Vec<String>, tags: &mut Vec<String>) {
    if !tokens.is_empty() {
        out.push(LabeledSentence {
            tokens: std::mem::take(tokens),
            tags: std::mem::take(tags),
        });
    }
}

/// Reads token sequences from the first column, ignoring any other columns.
pub fn read_tokens<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match line.split_whitespace().next() {
            None => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            Some("-DOCSTART-") => {}
            Some(tok) => cur.push(tok.to_owned()),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Writes `token<TAB>tag` lines with a blank line after each sentence.
pub fn write_conll_to<W: Write>(sentences: &[LabeledSentence], mut w: W) -> std::io::Result<()> {
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            writeln!(w, "{tok}\t{tag}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_conll(sentences: &[LabeledSentence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_conll_to(sentences, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<Vec<LabeledSentence>> {
        read_conll(Cursor::new(text), Path::new("test.conll"))
    }

    #[test]
    fn two_token_sentence() {
        let s = parse("the O\nRING1 S-GENE\n\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, vec!["the", "RING1"]);
        assert_eq!(s[0].tags, vec!["O", "S-GENE"]);
    }

    #[test]
    fn crlf_matches_lf() {
        let lf = "a O\nb B-X\nc E-X\n\nd O\n";
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(parse(lf).unwrap(), parse(&crlf).unwrap());
    }

    #[test]
    fn multiple_sentences_and_extra_columns() {
        let s = parse("-DOCSTART- O\n\na NN O\n\n\nb\tNN\tS-X\n\nc O\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].tags, vec!["S-X"]);
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let err = parse("a O\nlonely\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn token_reader_ignores_tags() {
        let t = read_tokens(Cursor::new("a O\nb\n\nc X Y\n"), Path::new("x")).unwrap();
        assert_eq!(t, vec![vec!["a", "b"], vec!["c"]]);
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            sents in prop::collection::vec(
                prop::collection::vec(("[A-Za-z0-9]{1,6}", prop::sample::select(vec!["O", "S-A", "B-B"])), 1..6),
                0..5)
        ) {
            let sentences: Vec<LabeledSentence> = sents
                .into_iter()
                .map(|toks| {
                    let (tokens, tags): (Vec<String>, Vec<String>) =
                        toks.into_iter().map(|(a, b)| (a, b.to_owned())).unzip();
                    LabeledSentence { tokens, tags }
                })
                .collect();
            let mut buf = Vec::new();
            write_conll_to(&sentences, &mut buf).unwrap();
            let back = read_conll(Cursor::new(buf), Path::new("rt")).unwrap();
            prop_assert_eq!(back, sentences);
        }
    }
}
