//! Clause segmentation from constituency trees.
//!
//! Segmentation has two stages:
//!
//! 1. Every node labeled with a clause-type tag contributes the token
//!    indices of its first governed leaf and one past its last governed
//!    leaf as boundaries ("gaps"). Adjacent gaps delimit the initial
//!    segments.
//! 2. Fragments are merged until nothing changes: a segment made only of
//!    punctuation joins its left neighbour, a segment of at most
//!    [`SHORT_SEGMENT`] tokens joins its right neighbour.
//!
//! Merge semantics are a single left-to-right scan over the current list
//! that restarts after every merge; the punctuation rule is tried before the
//! length rule. A punctuation-only first segment has no left neighbour and
//! merges right; a short last segment merges left. A lone segment is never
//! merged.

use std::collections::BTreeSet;

use crate::corpus::Span;
use crate::error::Result;
use crate::parsetree::{leaves, parse_bracket, ConstTree};

/// Segments with at most this many tokens are joined to a neighbour.
pub const SHORT_SEGMENT: usize = 3;

pub const DEFAULT_CLAUSE_LABELS: [&str; 5] = ["S", "SBAR", "SBARQ", "SINV", "SQ"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseLabels(BTreeSet<String>);

impl ClauseLabels {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ClauseLabels(labels.into_iter().map(Into::into).collect())
    }

    /// Treebank labels may carry function tags (`S-TPC`) or indices (`S=2`);
    /// only the base category is compared.
    pub fn contains(&self, label: &str) -> bool {
        let base = label.split(['-', '=']).next().unwrap_or(label);
        let base = if base.is_empty() { label } else { base };
        self.0.contains(base)
    }
}

impl Default for ClauseLabels {
    fn default() -> Self {
        ClauseLabels::new(DEFAULT_CLAUSE_LABELS)
    }
}

/// Ordered segments tiling `[0, tokens.len())`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentList {
    pub segments: Vec<Span>,
    pub tokens: Vec<String>,
}

impl SegmentList {
    pub fn segment_tokens(&self, k: usize) -> &[String] {
        let s = self.segments[k];
        &self.tokens[s.start..s.end]
    }

    pub fn is_tiling(&self) -> bool {
        let mut pos = 0;
        for s in &self.segments {
            if s.start != pos || s.end <= s.start {
                return false;
            }
            pos = s.end;
        }
        pos == self.tokens.len()
    }
}

pub fn clause_gaps(tree: &ConstTree, labels: &ClauseLabels) -> BTreeSet<usize> {
    let mut gaps = BTreeSet::from([0, tree.num_leaves()]);
    for node in tree.nodes() {
        if !node.is_preterminal() && labels.contains(&node.label) {
            gaps.insert(node.leaf_span.start);
            gaps.insert(node.leaf_span.end);
        }
    }
    gaps
}

pub fn segments_from_gaps(gaps: &BTreeSet<usize>, tokens: Vec<String>) -> SegmentList {
    let points: Vec<usize> = gaps.iter().copied().collect();
    let segments = points
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| Span::new(w[0], w[1]))
        .collect();
    SegmentList { segments, tokens }
}

/// A token is punctuation when it has no ASCII letter or digit.
fn is_punctuation_token(token: &str) -> bool {
    !token.chars().any(|c| c.is_ascii_alphanumeric())
}

fn is_punctuation_only(tokens: &[String]) -> bool {
    tokens.iter().all(|t| is_punctuation_token(t))
}

/// One scan; returns true if a merge happened.
fn merge_once(segs: &mut SegmentList) -> bool {
    let m = segs.segments.len();
    if m <= 1 {
        return false;
    }
    for i in 0..m {
        let span = segs.segments[i];
        let toks = &segs.tokens[span.start..span.end];
        if is_punctuation_only(toks) {
            if i > 0 {
                merge_pair(&mut segs.segments, i - 1);
            } else {
                merge_pair(&mut segs.segments, 0);
            }
            return true;
        }
        if span.len() <= SHORT_SEGMENT {
            if i + 1 < m {
                merge_pair(&mut segs.segments, i);
            } else {
                merge_pair(&mut segs.segments, i - 1);
            }
            return true;
        }
    }
    false
}

/// Replaces segments `k` and `k + 1` by their concatenation.
fn merge_pair(segments: &mut Vec<Span>, k: usize) {
    let right = segments.remove(k + 1);
    segments[k].end = right.end;
}

pub fn join_segments(mut segs: SegmentList) -> SegmentList {
    while merge_once(&mut segs) {}
    segs
}

/// Full extraction. With `join = false` the heuristic merge stage is skipped.
pub fn extract_clauses(tree: &ConstTree, labels: &ClauseLabels, join: bool) -> SegmentList {
    let segs = segments_from_gaps(&clause_gaps(tree, labels), leaves(tree));
    if join {
        join_segments(segs)
    } else {
        segs
    }
}

/// Parses `parse` and extracts clauses, checking the leaves against `tokens`
/// when given.
pub fn extract_from_bracket(
    parse: &str,
    tokens: Option<&[String]>,
    labels: &ClauseLabels,
    join: bool,
) -> Result<SegmentList> {
    let tree = parse_bracket(parse)?;
    let segs = extract_clauses(&tree, labels, join);
    if let Some(tokens) = tokens {
        if tokens.len() != segs.tokens.len() {
            return Err(crate::error::Error::InvalidArgument(format!(
                "parse has {} leaves but the instance has {} tokens",
                segs.tokens.len(),
                tokens.len()
            )));
        }
    }
    Ok(segs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn seglist(parts: &[&str]) -> SegmentList {
        let mut tokens = Vec::new();
        let mut segments = Vec::new();
        for p in parts {
            let start = tokens.len();
            tokens.extend(words(p));
            segments.push(Span::new(start, tokens.len()));
        }
        SegmentList { segments, tokens }
    }

    fn rendered(s: &SegmentList) -> Vec<String> {
        (0..s.segments.len()).map(|k| s.segment_tokens(k).join(" ")).collect()
    }

    #[test]
    fn small_tree_gaps_and_segments() {
        let tree = parse_bracket("(S (SBARQ (X a) (X b)) (N (X c)))").unwrap();
        let gaps = clause_gaps(&tree, &ClauseLabels::default());
        assert_eq!(gaps, BTreeSet::from([0, 2, 3]));
        let segs = segments_from_gaps(&gaps, leaves(&tree));
        assert_eq!(rendered(&segs), vec!["a b", "c"]);
        assert_eq!(extract_clauses(&tree, &ClauseLabels::default(), false), segs);
    }

    #[test]
    fn no_clause_nodes_gives_one_segment() {
        let tree = parse_bracket("(NP (DT the) (NN dog))").unwrap();
        assert_eq!(clause_gaps(&tree, &ClauseLabels::default()), BTreeSet::from([0, 2]));
        let text = "(FRAG (X a) (X b) (X c) (X d) (X e) (X f) (X g) (X h) (X i) (X j))";
        let segs = extract_clauses(&parse_bracket(text).unwrap(), &ClauseLabels::default(), true);
        assert_eq!(segs.segments, vec![Span::new(0, 10)]);
    }

    #[test]
    fn nested_clause_nodes_union() {
        // SBAR covers 2..6, the S inside it 3..6.
        let tree = parse_bracket(
            "(ROOT (NP (X a) (X b)) (SBAR (IN c) (S (X d) (X e) (X f))) (X g))",
        )
        .unwrap();
        assert_eq!(
            clause_gaps(&tree, &ClauseLabels::default()),
            BTreeSet::from([0, 2, 3, 6, 7])
        );
    }

    #[test]
    fn function_tags_match_base_label() {
        let labels = ClauseLabels::default();
        assert!(labels.contains("S-TPC"));
        assert!(labels.contains("SBAR=1"));
        assert!(!labels.contains("SYM"));
        assert!(!labels.contains("NP"));
        assert!(!labels.contains("INV"));
    }

    #[test]
    fn punctuation_merges_left() {
        let out = join_segments(seglist(&["she laughed at them", "!"]));
        assert_eq!(rendered(&out), vec!["she laughed at them !"]);
        let out = join_segments(seglist(&["she laughed", "!"]));
        assert_eq!(rendered(&out), vec!["she laughed !"]);
    }

    #[test]
    fn short_segment_merges_right() {
        let out = join_segments(seglist(&["he left", "because the game was lost"]));
        assert_eq!(rendered(&out), vec!["he left because the game was lost"]);
    }

    #[test]
    fn boundary_fallbacks() {
        let out = join_segments(seglist(&["\" ...", "she said that it was fine"]));
        assert_eq!(rendered(&out), vec!["\" ... she said that it was fine"]);
        let out = join_segments(seglist(&["we stayed at home", "all day"]));
        assert_eq!(rendered(&out), vec!["we stayed at home all day"]);
        let single = seglist(&["ok"]);
        assert_eq!(join_segments(single.clone()), single);
    }

    #[test]
    fn long_segments_survive() {
        let input = seglist(&["she was very pleased", "because the team won ."]);
        assert_eq!(join_segments(input.clone()), input);
    }

    fn arb_segmentation() -> impl Strategy<Value = SegmentList> {
        let token = prop_oneof![
            3 => "[a-z]{1,5}",
            1 => "[.,!?;\"]{1,2}",
        ];
        prop::collection::vec(prop::collection::vec(token, 1..7), 1..8).prop_map(|parts| {
            let mut tokens = Vec::new();
            let mut segments = Vec::new();
            for p in parts {
                let start = tokens.len();
                tokens.extend(p);
                segments.push(Span::new(start, tokens.len()));
            }
            SegmentList { segments, tokens }
        })
    }

    proptest! {
        #[test]
        fn join_invariants(segs in arb_segmentation()) {
            let before = segs.segments.len();
            let out = join_segments(segs);
            prop_assert!(out.is_tiling());
            prop_assert!(out.segments.len() <= before);
            prop_assert_eq!(join_segments(out.clone()), out.clone());
            if out.segments.len() > 1 {
                for k in 0..out.segments.len() {
                    prop_assert!(out.segments[k].len() > SHORT_SEGMENT);
                    prop_assert!(!is_punctuation_only(out.segment_tokens(k)));
                }
            }
        }

        #[test]
        fn segment_count_matches_gaps(
            n in 1usize..30,
            inner in prop::collection::btree_set(1usize..30, 0..10),
        ) {
            let mut gaps: BTreeSet<usize> = inner.into_iter().filter(|&g| g < n).collect();
            gaps.insert(0);
            gaps.insert(n);
            let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let segs = segments_from_gaps(&gaps, tokens);
            prop_assert_eq!(segs.segments.len(), gaps.len() - 1);
            prop_assert!(segs.is_tiling());
        }
    }
}
