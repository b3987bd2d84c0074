//! Conversions between token labels and clause classifications.

use crate::corpus::{IobLabel, Span};
use crate::error::{Error, Result};

/// A clause is a stimulus clause iff at least one of its tokens is `B` or `I`.
pub fn tokens_to_clauses(iob: &[IobLabel], clauses: &[Span]) -> Vec<bool> {
    clauses
        .iter()
        .map(|c| iob[c.start..c.end.min(iob.len())].iter().any(|l| l.is_stimulus()))
        .collect()
}

/// Each stimulus clause becomes `B I … I`; every other token is `O`.
pub fn clauses_to_tokens(flags: &[bool], clauses: &[Span], n: usize) -> Result<Vec<IobLabel>> {
    if flags.len() != clauses.len() {
        return Err(Error::Shape(format!(
            "{} flags for {} clauses",
            flags.len(),
            clauses.len()
        )));
    }
    let mut sorted: Vec<&Span> = clauses.iter().collect();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0].end > w[1].start {
            return Err(Error::Overlap(format!("clauses {} and {}", w[0], w[1])));
        }
    }
    let mut iob = vec![IobLabel::O; n];
    for (c, &flag) in clauses.iter().zip(flags) {
        if c.start >= c.end || c.end > n {
            return Err(Error::InvalidArgument(format!("clause {c} outside 0..{n}")));
        }
        if flag {
            iob[c.start] = IobLabel::B;
            iob[c.start + 1..c.end].iter_mut().for_each(|l| *l = IobLabel::I);
        }
    }
    Ok(iob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::iob_to_spans;
    use proptest::prelude::*;
    use IobLabel::{B, I, O};

    fn sp(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    #[test]
    fn tokens_to_clauses_examples() {
        assert_eq!(tokens_to_clauses(&[O, O, B, I], &[sp(0, 2), sp(2, 4)]), vec![false, true]);
        assert_eq!(tokens_to_clauses(&[O; 5], &[sp(0, 3), sp(3, 5)]), vec![false, false]);
        let fig1 = [O, O, O, O, B, I, I, I, I, O];
        assert_eq!(tokens_to_clauses(&fig1, &[sp(0, 4), sp(4, 10)]), vec![false, true]);
    }

    #[test]
    fn clauses_to_tokens_examples() {
        assert_eq!(
            clauses_to_tokens(&[false, true], &[sp(0, 4), sp(4, 10)], 10).unwrap(),
            vec![O, O, O, O, B, I, I, I, I, I]
        );
        assert_eq!(clauses_to_tokens(&[false, false], &[sp(0, 2), sp(2, 4)], 4).unwrap(), vec![O; 4]);
        assert_eq!(
            clauses_to_tokens(&[true, true], &[sp(0, 2), sp(2, 4)], 4).unwrap(),
            vec![B, I, B, I]
        );
        // Uncovered tokens stay O.
        assert_eq!(clauses_to_tokens(&[true], &[sp(1, 3)], 5).unwrap(), vec![O, B, I, O, O]);
        assert!(matches!(
            clauses_to_tokens(&[true, true], &[sp(0, 3), sp(2, 4)], 4),
            Err(Error::Overlap(_))
        ));
    }

    fn tiling_with_flags() -> impl Strategy<Value = (Vec<Span>, Vec<bool>, usize)> {
        prop::collection::vec((1usize..5, any::<bool>()), 1..8).prop_map(|parts| {
            let mut pos = 0;
            let mut spans = Vec::new();
            let mut flags = Vec::new();
            for (len, f) in parts {
                spans.push(Span::new(pos, pos + len));
                flags.push(f);
                pos += len;
            }
            (spans, flags, pos)
        })
    }

    proptest! {
        #[test]
        fn clause_round_trip((spans, flags, n) in tiling_with_flags()) {
            let iob = clauses_to_tokens(&flags, &spans, n).unwrap();
            prop_assert_eq!(tokens_to_clauses(&iob, &spans), flags);
            // Every I continues a B or I inside the same clause.
            for c in &spans {
                for i in c.start..c.end {
                    if iob[i] == I {
                        prop_assert!(i > c.start && iob[i - 1] != O);
                    }
                }
            }
        }

        #[test]
        fn token_round_trip_never_loses_coverage(
            (spans, _, n) in tiling_with_flags(),
            labels in prop::collection::vec(0usize..3, 40),
        ) {
            let iob: Vec<IobLabel> = labels[..n].iter().map(|&k| IobLabel::ALL[k]).collect();
            let flags = tokens_to_clauses(&iob, &spans);
            let back = clauses_to_tokens(&flags, &spans, n).unwrap();
            for i in 0..n {
                if iob[i].is_stimulus() {
                    prop_assert!(back[i].is_stimulus());
                }
            }
            prop_assert!(iob_to_spans(&back).len() <= spans.len());
        }
    }
}
