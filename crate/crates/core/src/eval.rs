//! Span-level precision, recall and F1.
//!
//! All functions take spans grouped per sentence (`pred[s]`, `gold[s]`);
//! spans never match across sentences. Ratios with a zero denominator are 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{AlternativeEntity, SpanAnnotation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn score(self) -> ScoreTriple {
        ScoreTriple::from_counts(self.tp, self.fp, self.fn_)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl ScoreTriple {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        ScoreTriple {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Overall and per-type counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub overall: Counts,
    pub by_type: BTreeMap<String, Counts>,
}

impl MatchCounts {
    fn tp(&mut self, ty: &str) {
        self.overall.tp += 1;
        self.by_type.entry(ty.to_owned()).or_default().tp += 1;
    }

    fn fp(&mut self, ty: &str) {
        self.overall.fp += 1;
        self.by_type.entry(ty.to_owned()).or_default().fp += 1;
    }

    fn fn_(&mut self, ty: &str) {
        self.overall.fn_ += 1;
        self.by_type.entry(ty.to_owned()).or_default().fn_ += 1;
    }

    pub fn score(&self) -> ScoreTriple {
        self.overall.score()
    }

    pub fn scores_by_type(&self) -> BTreeMap<String, ScoreTriple> {
        self.by_type.iter().map(|(k, c)| (k.clone(), c.score())).collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let triples: Vec<ScoreTriple> = self.by_type.values().map(|c| c.score()).collect();
        macro_f1(&triples)
    }
}

fn check_aligned<A, B>(pred: &[A], gold: &[B]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            actual: pred.len(),
        });
    }
    Ok(())
}

/// A prediction counts only if start, end and type all equal a gold span;
/// each gold span is matched at most once.
pub fn exact_match_counts(
    pred: &[Vec<SpanAnnotation>],
    gold: &[Vec<SpanAnnotation>],
) -> Result<MatchCounts> {
    check_aligned(pred, gold)?;
    let mut counts = MatchCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        let mut used = vec![false; g.len()];
        for span in p {
            match (0..g.len()).find(|&j| !used[j] && g[j] == *span) {
                Some(j) => {
                    used[j] = true;
                    counts.tp(&span.entity_type);
                }
                None => counts.fp(&span.entity_type),
            }
        }
        for (j, span) in g.iter().enumerate() {
            if !used[j] {
                counts.fn_(&span.entity_type);
            }
        }
    }
    Ok(counts)
}

pub fn exact_match(pred: &[Vec<SpanAnnotation>], gold: &[Vec<SpanAnnotation>]) -> Result<ScoreTriple> {
    Ok(exact_match_counts(pred, gold)?.score())
}

/// Acceptable spans for every gold entity, per sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlternativeSet {
    /// `entities[s][e]` lists the gold span first, then its alternatives.
    pub entities: Vec<Vec<Vec<SpanAnnotation>>>,
}

impl AlternativeSet {
    /// Gold spans with no alternatives.
    pub fn from_gold(gold: &[Vec<SpanAnnotation>]) -> Self {
        AlternativeSet {
            entities: gold
                .iter()
                .map(|g| g.iter().map(|s| vec![s.clone()]).collect())
                .collect(),
        }
    }

    /// Attaches alternatives to the gold spans they were listed for. Every
    /// listed gold entity must exist in `gold`.
    pub fn with_alternatives(
        gold: &[Vec<SpanAnnotation>],
        listed: &[AlternativeEntity],
    ) -> Result<Self> {
        let mut set = AlternativeSet::from_gold(gold);
        for entry in listed {
            let sentence = set.entities.get_mut(entry.sentence).ok_or(Error::OutOfRange {
                index: entry.sentence,
                len: gold.len(),
            })?;
            let Some(entity) = sentence.iter_mut().find(|e| e[0] == entry.span) else {
                return Err(Error::Config(format!(
                    "alternative list names gold entity {}..={} ({}) in sentence {} that is not in the gold data",
                    entry.span.start, entry.span.end, entry.span.entity_type, entry.sentence
                )));
            };
            for alt in &entry.alternatives {
                if !entity.contains(alt) {
                    entity.push(alt.clone());
                }
            }
        }
        Ok(set)
    }
}

/// A prediction counts if it equals any acceptable span of a gold entity.
/// Each gold entity absorbs at most one prediction. Predictions equal to a
/// gold span are paired first; the rest go to the earliest gold entity that
/// accepts them. Counts are attributed to the gold entity's type for hits.
pub fn alternative_match_counts(
    pred: &[Vec<SpanAnnotation>],
    alternatives: &AlternativeSet,
) -> Result<MatchCounts> {
    check_aligned(pred, &alternatives.entities)?;
    let mut counts = MatchCounts::default();
    for (p, entities) in pred.iter().zip(&alternatives.entities) {
        let mut used = vec![false; entities.len()];
        let mut hit = vec![false; p.len()];
        for (i, span) in p.iter().enumerate() {
            if let Some(j) = (0..entities.len()).find(|&j| !used[j] && entities[j][0] == *span) {
                used[j] = true;
                hit[i] = true;
                counts.tp(&entities[j][0].entity_type);
            }
        }
        for (i, span) in p.iter().enumerate() {
            if hit[i] {
                continue;
            }
            match (0..entities.len()).find(|&j| !used[j] && entities[j].contains(span)) {
                Some(j) => {
                    used[j] = true;
                    counts.tp(&entities[j][0].entity_type);
                }
                None => counts.fp(&span.entity_type),
            }
        }
        for (j, e) in entities.iter().enumerate() {
            if !used[j] {
                counts.fn_(&e[0].entity_type);
            }
        }
    }
    Ok(counts)
}

pub fn alternative_match(
    pred: &[Vec<SpanAnnotation>],
    alternatives: &AlternativeSet,
) -> Result<ScoreTriple> {
    Ok(alternative_match_counts(pred, alternatives)?.score())
}

/// Unweighted mean of F1 over entity types; 0 for no types.
pub fn macro_f1(per_type: &[ScoreTriple]) -> f64 {
    if per_type.is_empty() {
        return 0.0;
    }
    per_type.iter().map(|s| s.f1).sum::<f64>() / per_type.len() as f64
}

/// Sums per-type counts from several datasets so that identically named
/// types are scored together.
pub fn pool_by_type<'a, I>(reports: I) -> BTreeMap<String, ScoreTriple>
where
    I: IntoIterator<Item = &'a MatchCounts>,
{
    let mut pooled: BTreeMap<String, Counts> = BTreeMap::new();
    for r in reports {
        for (ty, c) in &r.by_type {
            pooled.entry(ty.clone()).or_default().add(*c);
        }
    }
    pooled.into_iter().map(|(k, c)| (k, c.score())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Overlaps an entity of the same type on the other side, with a
    /// different extent.
    Boundary,
    /// False positive with no overlapping gold entity of its type.
    Spurious,
    /// False negative with no overlapping prediction of its type.
    Missed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    FalsePositive,
    FalseNegative,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanError {
    pub sentence: usize,
    pub span: SpanAnnotation,
    pub side: Side,
    pub kind: ErrorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// `fp / (tp + fp + fn)`
    pub fp_ratio: f64,
    /// `fn / (tp + fp + fn)`
    pub fn_ratio: f64,
    pub counts: Counts,
    pub errors: Vec<SpanError>,
}

pub fn error_breakdown(
    pred: &[Vec<SpanAnnotation>],
    gold: &[Vec<SpanAnnotation>],
) -> Result<ErrorBreakdown> {
    check_aligned(pred, gold)?;
    let mut counts = Counts::default();
    let mut errors = Vec::new();
    let same_type_overlap = |a: &SpanAnnotation, others: &[SpanAnnotation]| {
        others
            .iter()
            .any(|o| o.entity_type == a.entity_type && o.overlaps(a))
    };
    for (s, (p, g)) in pred.iter().zip(gold).enumerate() {
        let mut used = vec![false; g.len()];
        for span in p {
            match (0..g.len()).find(|&j| !used[j] && g[j] == *span) {
                Some(j) => {
                    used[j] = true;
                    counts.tp += 1;
                }
                None => {
                    counts.fp += 1;
                    let kind = if same_type_overlap(span, g) {
                        ErrorKind::Boundary
                    } else {
                        ErrorKind::Spurious
                    };
                    errors.push(SpanError {
                        sentence: s,
                        span: span.clone(),
                        side: Side::FalsePositive,
                        kind,
                    });
                }
            }
        }
        for (j, span) in g.iter().enumerate() {
            if used[j] {
                continue;
            }
            counts.fn_ += 1;
            let kind = if same_type_overlap(span, p) {
                ErrorKind::Boundary
            } else {
                ErrorKind::Missed
            };
            errors.push(SpanError {
                sentence: s,
                span: span.clone(),
                side: Side::FalseNegative,
                kind,
            });
        }
    }
    let total = (counts.tp + counts.fp + counts.fn_) as f64;
    Ok(ErrorBreakdown {
        fp_ratio: ratio(counts.fp as f64, total),
        fn_ratio: ratio(counts.fn_ as f64, total),
        counts,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(start: usize, end: usize, ty: &str) -> SpanAnnotation {
        SpanAnnotation::new(start, end, ty)
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![vec![sp(0, 1, "G"), sp(3, 3, "C")], vec![sp(2, 2, "G")]];
        let s = exact_match(&gold, &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        let none = vec![vec![], vec![]];
        let s = exact_match(&none, &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert_eq!(s.fn_, 3);
    }

    #[test]
    fn hand_scored_fixture() {
        // 2 predictions, 1 correct; 3 gold entities
        let gold = vec![vec![sp(0, 0, "G"), sp(2, 3, "G")], vec![sp(1, 1, "G")]];
        let pred = vec![vec![sp(0, 0, "G"), sp(2, 2, "G")], vec![]];
        let s = exact_match(&pred, &gold).unwrap();
        assert_eq!(s.precision, 0.5);
        assert!((s.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn type_must_match() {
        let gold = vec![vec![sp(0, 0, "G")]];
        let pred = vec![vec![sp(0, 0, "C")]];
        assert_eq!(exact_match(&pred, &gold).unwrap().tp, 0);
    }

    #[test]
    fn misaligned_inputs() {
        assert!(exact_match(&[vec![]], &[]).is_err());
    }

    #[test]
    fn alternatives() {
        let gold = vec![vec![sp(2, 4, "GENE")]];
        let listed = vec![AlternativeEntity {
            sentence: 0,
            span: sp(2, 4, "GENE"),
            alternatives: vec![sp(3, 4, "GENE")],
        }];
        let set = AlternativeSet::with_alternatives(&gold, &listed).unwrap();
        let pred = vec![vec![sp(3, 4, "GENE")]];
        assert_eq!(alternative_match(&pred, &set).unwrap().tp, 1);
        assert_eq!(exact_match(&pred, &gold).unwrap().tp, 0);

        // two predictions in one gold entity's set: one hit, one false positive
        let pred = vec![vec![sp(2, 4, "GENE"), sp(3, 4, "GENE")]];
        let s = alternative_match(&pred, &set).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 0));

        let bad = vec![AlternativeEntity {
            sentence: 0,
            span: sp(0, 0, "GENE"),
            alternatives: vec![],
        }];
        assert!(AlternativeSet::with_alternatives(&gold, &bad).is_err());
    }

    #[test]
    fn alternatives_empty_equals_exact() {
        let gold = vec![vec![sp(0, 1, "G"), sp(4, 4, "G")], vec![sp(0, 0, "C")]];
        let pred = vec![vec![sp(0, 1, "G"), sp(3, 4, "G")], vec![sp(0, 0, "G")]];
        let a = alternative_match(&pred, &AlternativeSet::from_gold(&gold)).unwrap();
        let e = exact_match(&pred, &gold).unwrap();
        assert_eq!(a, e);
    }

    #[test]
    fn earlier_gold_wins_shared_alternative() {
        let gold = vec![vec![sp(0, 1, "G"), sp(3, 4, "G")]];
        let listed = vec![
            AlternativeEntity { sentence: 0, span: sp(0, 1, "G"), alternatives: vec![sp(1, 3, "G")] },
            AlternativeEntity { sentence: 0, span: sp(3, 4, "G"), alternatives: vec![sp(1, 3, "G")] },
        ];
        let set = AlternativeSet::with_alternatives(&gold, &listed).unwrap();
        let pred = vec![vec![sp(1, 3, "G")]];
        let c = alternative_match_counts(&pred, &set).unwrap();
        assert_eq!((c.overall.tp, c.overall.fn_), (1, 1));
    }

    #[test]
    fn macro_average() {
        let a = ScoreTriple { f1: 0.8, ..Default::default() };
        let b = ScoreTriple { f1: 0.6, ..Default::default() };
        assert!((macro_f1(&[a, b]) - 0.7).abs() < 1e-15);
        assert_eq!(macro_f1(&[a]), 0.8);
        assert_eq!(macro_f1(&[]), 0.0);
    }

    #[test]
    fn pooling_merges_types_across_datasets() {
        // genes from two corpora, chemicals from one
        let d1 = exact_match_counts(
            &[vec![sp(0, 0, "Gene"), sp(2, 2, "Gene")]],
            &[vec![sp(0, 0, "Gene"), sp(3, 3, "Gene")]],
        )
        .unwrap();
        let d2 = exact_match_counts(
            &[vec![sp(1, 1, "Gene"), sp(5, 5, "Chemical")]],
            &[vec![sp(1, 1, "Gene"), sp(5, 5, "Chemical")]],
        )
        .unwrap();
        let pooled = pool_by_type([&d1, &d2]);
        let gene = pooled["Gene"];
        assert_eq!((gene.tp, gene.fp, gene.fn_), (2, 1, 1));
        assert!((gene.f1 - 2.0 / 3.0).abs() < 1e-15);
        let triples: Vec<ScoreTriple> = pooled.values().copied().collect();
        assert!((macro_f1(&triples) - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn breakdown() {
        let gold = vec![vec![sp(0, 2, "G")]];
        let b = error_breakdown(&gold, &gold).unwrap();
        assert_eq!((b.fp_ratio, b.fn_ratio), (0.0, 0.0));

        let b = error_breakdown(&[vec![sp(0, 1, "G")]], &gold).unwrap();
        assert_eq!(b.counts, Counts { tp: 0, fp: 1, fn_: 1 });
        assert!(b.errors.iter().all(|e| e.kind == ErrorKind::Boundary));
        assert_eq!((b.fp_ratio, b.fn_ratio), (0.5, 0.5));

        let b = error_breakdown(&[vec![sp(5, 6, "G")]], &[vec![sp(0, 1, "G")]]).unwrap();
        let kinds: Vec<ErrorKind> = b.errors.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![ErrorKind::Spurious, ErrorKind::Missed]);
    }

    #[test]
    fn permutation_invariant() {
        let gold = vec![vec![sp(0, 0, "G")], vec![sp(1, 2, "C")], vec![]];
        let pred = vec![vec![sp(0, 0, "G")], vec![sp(1, 1, "C")], vec![sp(4, 4, "G")]];
        let a = exact_match(&pred, &gold).unwrap();
        let order = [2, 0, 1];
        let pg: Vec<_> = order.iter().map(|&i| gold[i].clone()).collect();
        let pp: Vec<_> = order.iter().map(|&i| pred[i].clone()).collect();
        assert_eq!(a, exact_match(&pp, &pg).unwrap());
    }
}
