//! Error taxonomy for predicted stimulus spans.
//!
//! Every gold span is typed by the predictions overlapping it:
//!
//! | overlaps | boundaries of the single prediction `p` vs gold `g` | type |
//! |---|---|---|
//! | 0 | – | `FalseNegative` |
//! | ≥ 2 | – | `Multiple` |
//! | 1 | `ps = gs`, `pe = ge` | `TruePositive` |
//! | 1 | `ps = gs`, `pe < ge` | `EarlyStop` |
//! | 1 | `ps = gs`, `pe > ge` | `LateStop` |
//! | 1 | `ps < gs`, `pe < ge` | `EarlyStartStop` |
//! | 1 | `ps < gs`, `pe = ge` | `EarlyStart` |
//! | 1 | `ps < gs`, `pe > ge` | `Surrounded` |
//! | 1 | `ps > gs`, `pe = ge` | `LateStart` |
//! | 1 | `ps > gs`, `pe > ge` | `LateStartStop` |
//! | 1 | `ps > gs`, `pe < ge` | `Contained` |
//!
//! Each prediction overlapping no gold span adds one `FalsePositive`. A
//! prediction overlapping several gold spans is typed once per gold span and
//! is never a false positive.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::corpus::Span;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ErrorType {
    EarlyStop,
    LateStop,
    EarlyStartStop,
    EarlyStart,
    LateStart,
    LateStartStop,
    Contained,
    Multiple,
    Surrounded,
    FalseNegative,
    FalsePositive,
    TruePositive,
}

impl ErrorType {
    /// Report order; `TruePositive` last.
    pub const ALL: [ErrorType; 12] = [
        ErrorType::EarlyStop,
        ErrorType::LateStop,
        ErrorType::EarlyStartStop,
        ErrorType::EarlyStart,
        ErrorType::LateStart,
        ErrorType::LateStartStop,
        ErrorType::Contained,
        ErrorType::Multiple,
        ErrorType::Surrounded,
        ErrorType::FalseNegative,
        ErrorType::FalsePositive,
        ErrorType::TruePositive,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorType::EarlyStop => "Early stop",
            ErrorType::LateStop => "Late stop",
            ErrorType::EarlyStartStop => "Early start & stop",
            ErrorType::EarlyStart => "Early start",
            ErrorType::LateStart => "Late start",
            ErrorType::LateStartStop => "Late start & stop",
            ErrorType::Contained => "Contained",
            ErrorType::Multiple => "Multiple",
            ErrorType::Surrounded => "Surrounded",
            ErrorType::FalseNegative => "False Negative",
            ErrorType::FalsePositive => "False Positives",
            ErrorType::TruePositive => "True Positive",
        }
    }

    pub fn is_error(self) -> bool {
        self != ErrorType::TruePositive
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn classify_gold(gold: Span, overlapping: &[Span]) -> Result<ErrorType> {
    if let Some(p) = overlapping.iter().find(|p| !p.overlaps(&gold)) {
        return Err(Error::InvalidArgument(format!("prediction {p} does not overlap gold {gold}")));
    }
    let p = match overlapping {
        [] => return Ok(ErrorType::FalseNegative),
        [p] => p,
        _ => return Ok(ErrorType::Multiple),
    };
    use Ordering::{Equal as Eq, Greater as Gt, Less as Lt};
    Ok(match (p.start.cmp(&gold.start), p.end.cmp(&gold.end)) {
        (Eq, Eq) => ErrorType::TruePositive,
        (Eq, Lt) => ErrorType::EarlyStop,
        (Eq, Gt) => ErrorType::LateStop,
        (Lt, Lt) => ErrorType::EarlyStartStop,
        (Lt, Eq) => ErrorType::EarlyStart,
        (Lt, Gt) => ErrorType::Surrounded,
        (Gt, Eq) => ErrorType::LateStart,
        (Gt, Gt) => ErrorType::LateStartStop,
        (Gt, Lt) => ErrorType::Contained,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ErrorCounts {
    pub counts: BTreeMap<ErrorType, usize>,
}

impl ErrorCounts {
    pub fn get(&self, t: ErrorType) -> usize {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn add(&mut self, t: ErrorType) {
        *self.counts.entry(t).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &ErrorCounts) {
        for (&t, &c) in &other.counts {
            *self.counts.entry(t).or_insert(0) += c;
        }
    }

    /// Sum over every type except `TruePositive`.
    pub fn total_errors(&self) -> usize {
        self.counts.iter().filter(|(t, _)| t.is_error()).map(|(_, c)| c).sum()
    }

    /// Counts contributed by gold spans (everything but `FalsePositive`).
    pub fn gold_total(&self) -> usize {
        self.counts
            .iter()
            .filter(|(t, _)| **t != ErrorType::FalsePositive)
            .map(|(_, c)| c)
            .sum()
    }
}

pub fn classify_instance(gold: &[Span], pred: &[Span], counts: &mut ErrorCounts) -> Result<()> {
    let mut sorted: Vec<Span> = pred.to_vec();
    sorted.sort();
    for g in gold {
        let overlapping: Vec<Span> = sorted.iter().copied().filter(|p| p.overlaps(g)).collect();
        counts.add(classify_gold(*g, &overlapping)?);
    }
    for p in pred {
        if !gold.iter().any(|g| g.overlaps(p)) {
            counts.add(ErrorType::FalsePositive);
        }
    }
    Ok(())
}

pub fn classify_corpus(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<ErrorCounts> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold instances for {} predicted instances",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts = ErrorCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        classify_instance(g, p, &mut counts)?;
    }
    Ok(counts)
}

/// Writes one row per error type, then `All` (errors only) and
/// `True Positive`, with one column per `(name, counts)` pair and a `Sum`.
pub fn write_error_csv(writer: impl Write, columns: &[(String, ErrorCounts)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["error_type".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    header.push("Sum".into());
    w.write_record(&header)?;

    let mut row = |label: &str, value: &dyn Fn(&ErrorCounts) -> usize| -> Result<()> {
        let mut rec = vec![label.to_string()];
        let mut sum = 0;
        for (_, c) in columns {
            let v = value(c);
            sum += v;
            rec.push(v.to_string());
        }
        rec.push(sum.to_string());
        w.write_record(&rec)?;
        Ok(())
    };
    for t in ErrorType::ALL.into_iter().filter(|t| t.is_error()) {
        row(t.label(), &|c| c.get(t))?;
    }
    row("All", &|c| c.total_errors())?;
    row(ErrorType::TruePositive.label(), &|c| c.get(ErrorType::TruePositive))?;
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Six instances whose gold/prediction pairs hit every type exactly once.
pub fn all_types_fixture() -> (Vec<Vec<Span>>, Vec<Vec<Span>>) {
    let s = Span::new;
    let mut gold = vec![vec![s(2, 6), s(10, 14)]; 6];
    gold[5].truncate(1);
    let pred = vec![
        vec![s(2, 4), s(10, 16)],
        vec![s(1, 4), s(8, 14)],
        vec![s(3, 6), s(11, 16)],
        vec![s(3, 5), s(10, 11), s(12, 14)],
        vec![s(1, 7)],
        vec![s(2, 6), s(16, 18)],
    ];
    (gold, pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    #[test]
    fn examples() {
        assert_eq!(classify_gold(sp(4, 9), &[sp(4, 7)]).unwrap(), ErrorType::EarlyStop);
        assert_eq!(classify_gold(sp(4, 9), &[sp(4, 6), sp(7, 9)]).unwrap(), ErrorType::Multiple);
        assert_eq!(classify_gold(sp(4, 9), &[sp(4, 9)]).unwrap(), ErrorType::TruePositive);
        assert_eq!(classify_gold(sp(4, 9), &[]).unwrap(), ErrorType::FalseNegative);
        assert!(classify_gold(sp(4, 9), &[sp(9, 11)]).is_err());
    }

    #[test]
    fn fixture_fills_every_bucket_once() {
        let (gold, pred) = all_types_fixture();
        let counts = classify_corpus(&gold, &pred).unwrap();
        for t in ErrorType::ALL {
            assert_eq!(counts.get(t), 1, "{t}");
        }
        assert_eq!(counts.total_errors(), 11);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![vec![sp(0, 2), sp(4, 6)], vec![sp(1, 3)]];
        let perfect = classify_corpus(&gold, &gold).unwrap();
        assert_eq!(perfect.get(ErrorType::TruePositive), 3);
        assert_eq!(perfect.total_errors(), 0);
        let none = classify_corpus(&gold, &[vec![], vec![]]).unwrap();
        assert_eq!(none.get(ErrorType::FalseNegative), 3);
        assert_eq!(none.total_errors(), 3);
    }

    #[test]
    fn bridging_prediction_is_not_false_positive() {
        let counts = classify_corpus(&[vec![sp(0, 3), sp(5, 8)]], &[vec![sp(2, 6)]]).unwrap();
        assert_eq!(counts.get(ErrorType::FalsePositive), 0);
        assert_eq!(counts.get(ErrorType::LateStartStop), 1);
        assert_eq!(counts.get(ErrorType::EarlyStartStop), 1);
    }

    #[test]
    fn csv_layout() {
        let (gold, pred) = all_types_fixture();
        let c = classify_corpus(&gold, &pred).unwrap();
        let mut out = Vec::new();
        write_error_csv(&mut out, &[("sl:A".into(), c.clone()), ("jcc:A".into(), c)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "error_type,sl:A,jcc:A,Sum");
        assert_eq!(lines[1], "Early stop,1,1,2");
        assert_eq!(lines[12], "All,11,11,22");
        assert_eq!(lines[13], "True Positive,1,1,2");
    }

    proptest! {
        #[test]
        fn single_overlap_translation_invariant(gs in 0usize..20, gl in 1usize..8, ps in 0usize..30, pl in 1usize..8, shift in 0usize..50) {
            let g = sp(gs, gs + gl);
            let p = sp(ps, ps + pl);
            prop_assume!(p.overlaps(&g));
            let t = classify_gold(g, &[p]).unwrap();
            prop_assert_eq!(t, classify_gold(sp(gs + shift, gs + gl + shift), &[sp(ps + shift, ps + pl + shift)]).unwrap());
            prop_assert!(t != ErrorType::FalseNegative && t != ErrorType::FalsePositive && t != ErrorType::Multiple);
        }

        #[test]
        fn counts_are_conserved(
            gold in prop::collection::vec((0usize..30, 1usize..6), 0..5),
            pred in prop::collection::vec((0usize..30, 1usize..6), 0..5),
        ) {
            let gold: Vec<Span> = gold.into_iter().map(|(s, l)| sp(s, s + l)).collect();
            let pred: Vec<Span> = pred.into_iter().map(|(s, l)| sp(s, s + l)).collect();
            let c = classify_corpus(&[gold.clone()], &[pred.clone()]).unwrap();
            prop_assert_eq!(c.gold_total(), gold.len());
            prop_assert!(c.get(ErrorType::FalsePositive) <= pred.len());
        }
    }
}
