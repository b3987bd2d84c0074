//! Span-level and clause-level scoring, clause-detection diagnostics and
//! inter-annotator agreement.
//!
//! Span matching is any-match: a predicted span is a precision hit when at
//! least one gold span of the same instance satisfies the mode's condition,
//! and a gold span is a recall hit when at least one prediction satisfies it.
//! The two hit counts are tallied separately and micro-averaged over the
//! corpus.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::Span;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MatchMode {
    Exact,
    Relaxed,
    LeftExact,
    RightExact,
    Clause,
}

impl MatchMode {
    pub const ALL: [MatchMode; 5] = [
        MatchMode::Exact,
        MatchMode::Relaxed,
        MatchMode::LeftExact,
        MatchMode::RightExact,
        MatchMode::Clause,
    ];

    pub const SPAN_MODES: [MatchMode; 4] = [
        MatchMode::Exact,
        MatchMode::Relaxed,
        MatchMode::LeftExact,
        MatchMode::RightExact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::Relaxed => "relaxed",
            MatchMode::LeftExact => "left",
            MatchMode::RightExact => "right",
            MatchMode::Clause => "clause",
        }
    }

    /// Whether `pred` and `gold` match under a span mode. Always false for
    /// [`MatchMode::Clause`].
    pub fn matches(self, pred: &Span, gold: &Span) -> bool {
        match self {
            MatchMode::Exact => pred == gold,
            MatchMode::Relaxed => pred.overlaps(gold),
            MatchMode::LeftExact => pred.start == gold.start,
            MatchMode::RightExact => pred.end == gold.end,
            MatchMode::Clause => false,
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MatchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown match mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Predictions counted correct.
    pub tp_p: usize,
    /// Gold items recovered.
    pub tp_r: usize,
    pub n_pred: usize,
    pub n_gold: usize,
}

impl Prf {
    pub fn from_counts(tp_p: usize, tp_r: usize, n_pred: usize, n_gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp_p, n_pred);
        let recall = ratio(tp_r, n_gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp_p,
            tp_r,
            n_pred,
            n_gold,
        }
    }
}

fn check_instances<A, B>(pred: &[A], gold: &[B]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted instances for {} gold instances",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

pub fn span_prf(pred: &[Vec<Span>], gold: &[Vec<Span>], mode: MatchMode) -> Result<Prf> {
    if mode == MatchMode::Clause {
        return Err(Error::InvalidArgument("clause mode scores clause flags, use clause_prf".into()));
    }
    check_instances(pred, gold)?;
    let (mut tp_p, mut tp_r, mut n_pred, mut n_gold) = (0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        n_pred += p.len();
        n_gold += g.len();
        tp_p += p.iter().filter(|ps| g.iter().any(|gs| mode.matches(ps, gs))).count();
        tp_r += g.iter().filter(|gs| p.iter().any(|ps| mode.matches(ps, gs))).count();
    }
    Ok(Prf::from_counts(tp_p, tp_r, n_pred, n_gold))
}

/// Binary P/R/F1 of the stimulus class over all clauses.
pub fn clause_prf(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<Prf> {
    check_instances(pred, gold)?;
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (k, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "instance {k}: {} predicted flags for {} clauses",
                p.len(),
                g.len()
            )));
        }
        for (&pf, &gf) in p.iter().zip(g) {
            n_pred += pf as usize;
            n_gold += gf as usize;
            tp += (pf && gf) as usize;
        }
    }
    Ok(Prf::from_counts(tp, tp, n_pred, n_gold))
}

/// Fraction of stimulus spans for which some clause of the same instance
/// matches exactly, shares the start, or shares the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClauseAlignment {
    pub exact: f64,
    pub left: f64,
    pub right: f64,
    pub stimuli: usize,
}

pub fn clause_alignment(stimuli: &[Vec<Span>], clauses: &[Vec<Span>]) -> Result<ClauseAlignment> {
    check_instances(stimuli, clauses)?;
    let (mut exact, mut left, mut right, mut total) = (0usize, 0usize, 0usize, 0usize);
    for (ss, cs) in stimuli.iter().zip(clauses) {
        for s in ss {
            total += 1;
            exact += cs.iter().any(|c| c == s) as usize;
            left += cs.iter().any(|c| c.start == s.start) as usize;
            right += cs.iter().any(|c| c.end == s.end) as usize;
        }
    }
    let frac = |k: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
    Ok(ClauseAlignment {
        exact: frac(exact),
        left: frac(left),
        right: frac(right),
        stimuli: total,
    })
}

/// Exact-boundary agreement of extracted against annotated clauses.
pub fn clause_match_prf(extracted: &[Vec<Span>], annotated: &[Vec<Span>]) -> Result<Prf> {
    span_prf(extracted, annotated, MatchMode::Exact)
}

/// One decision per inner token gap `1..n`: does a clause boundary fall
/// between token `i - 1` and token `i`?
pub fn boundary_decisions(clauses: &[Span], n: usize) -> Vec<bool> {
    (1..n)
        .map(|i| clauses.iter().any(|c| c.start == i || c.end == i))
        .collect()
}

pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} decisions", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("kappa needs at least one decision".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pos_a = a.iter().filter(|&&x| x).count() as f64 / n;
    let pos_b = b.iter().filter(|&&x| x).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pos_a * pos_b + (1.0 - pos_a) * (1.0 - pos_b);
    if p_e == 1.0 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub dataset: String,
    pub model: String,
    pub mode: MatchMode,
    pub prf: Prf,
}

pub const EVAL_HEADER: [&str; 13] = [
    "dataset", "model", "mode", "P", "R", "F1", "precision", "recall", "f1", "tp_p", "tp_r", "n_pred", "n_gold",
];

/// Percentage rounded to an integer, as in published result tables.
pub fn percent(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

pub fn write_eval_csv(writer: impl Write, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        let p = &r.prf;
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.mode.to_string(),
            percent(p.precision).to_string(),
            percent(p.recall).to_string(),
            percent(p.f1).to_string(),
            format!("{:.6}", p.precision),
            format!("{:.6}", p.recall),
            format!("{:.6}", p.f1),
            p.tp_p.to_string(),
            p.tp_r.to_string(),
            p.n_pred.to_string(),
            p.n_gold.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
