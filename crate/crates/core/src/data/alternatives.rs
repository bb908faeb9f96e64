//! Alternative-answer lists for gold entities.
//!
//! Format, tab separated, one record per line:
//!
//! ```text
//! <sentence_id> <start> <end> <type>          gold entity
//! ALT <sentence_id> <start> <end> <type>      acceptable alternative for the
//!                                             gold entity on the line above
//! ```
//!
//! Sentence ids are 0-based positions in the gold corpus; token offsets are
//! inclusive. Blank lines and lines starting with `#` are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::SpanAnnotation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlternativeEntity {
    pub sentence: usize,
    pub span: SpanAnnotation,
    pub alternatives: Vec<SpanAnnotation>,
}

pub fn parse_alternatives(path: impl AsRef<Path>) -> Result<Vec<AlternativeEntity>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_alternatives(BufReader::new(file), path)
}

pub fn read_alternatives<R: BufRead>(reader: R, path: &Path) -> Result<Vec<AlternativeEntity>> {
    let mut out: Vec<AlternativeEntity> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (is_alt, fields) = match cols.first() {
            Some(&"ALT") => (true, &cols[1..]),
            _ => (false, &cols[..]),
        };
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let num = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, format!("bad {what} '{s}'")))
        };
        let sentence = num(fields[0], "sentence id")?;
        let start = num(fields[1], "start")?;
        let end = num(fields[2], "end")?;
        if start > end {
            return Err(Error::parse(path, lineno, "start after end"));
        }
        let span = SpanAnnotation::new(start, end, fields[3].trim());
        if is_alt {
            let Some(gold) = out.last_mut() else {
                return Err(Error::parse(path, lineno, "ALT line before any gold entity"));
            };
            if gold.sentence != sentence {
                return Err(Error::parse(
                    path,
                    lineno,
                    "ALT line refers to a different sentence than its gold entity",
                ));
            }
            gold.alternatives.push(span);
        } else {
            out.push(AlternativeEntity {
                sentence,
                span,
                alternatives: Vec::new(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn gold_with_alternatives() {
        let text = "# comment\n0\t2\t4\tGENE\nALT\t0\t3\t4\tGENE\nALT\t0\t2\t5\tGENE\n1\t0\t0\tGENE\n";
        let alts = read_alternatives(Cursor::new(text), Path::new("a")).unwrap();
        assert_eq!(alts.len(), 2);
        assert_eq!(alts[0].span, SpanAnnotation::new(2, 4, "GENE"));
        assert_eq!(alts[0].alternatives.len(), 2);
        assert!(alts[1].alternatives.is_empty());
    }

    #[test]
    fn malformed_lines() {
        let p = Path::new("a");
        assert!(matches!(
            read_alternatives(Cursor::new("ALT\t0\t1\t1\tX\n"), p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_alternatives(Cursor::new("0\t1\tX\n"), p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_alternatives(Cursor::new("0\t1\t1\tX\nALT\t1\t1\t1\tX\n"), p),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
