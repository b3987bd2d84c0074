//! Canonical data model and corpus I/O.
//!
//! A corpus is a JSON-lines file, one [`Instance`] per line:
//!
//! ```json
//! {"id":"es-1","dataset":"EmotionStimulus","tokens":["a","b"],"iob":["B","I"],
//!  "clauses":[{"start":0,"end":2,"stimulus":true}],"parse":"(S (X a) (X b))"}
//! ```
//!
//! Model output is stored next to the gold annotation under `pred_iob`,
//! `pred_clauses` and `pred_model`; gold fields are never overwritten.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end, "empty span ({start}, {end})");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when the two spans share at least one token.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn shift(&self, offset: usize) -> Span {
        Span::new(self.start + offset, self.end + offset)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IobLabel {
    B,
    I,
    O,
}

impl IobLabel {
    pub const ALL: [IobLabel; 3] = [IobLabel::B, IobLabel::I, IobLabel::O];

    /// Row index used for CRF emissions.
    pub fn index(self) -> usize {
        match self {
            IobLabel::B => 0,
            IobLabel::I => 1,
            IobLabel::O => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        IobLabel::ALL.get(index).copied()
    }

    pub fn is_stimulus(self) -> bool {
        self != IobLabel::O
    }
}

impl fmt::Display for IobLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IobLabel::B => "B",
            IobLabel::I => "I",
            IobLabel::O => "O",
        };
        f.write_str(s)
    }
}

/// A clause of an instance. `is_stimulus` is `None` for clauses produced by
/// automatic extraction that have not been labeled yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ClauseRecord", into = "ClauseRecord")]
pub struct ClauseAnnotation {
    pub span: Span,
    pub is_stimulus: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClauseRecord {
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stimulus: Option<bool>,
}

impl From<ClauseRecord> for ClauseAnnotation {
    fn from(r: ClauseRecord) -> Self {
        // Bounds are checked in `Instance::validate`; keep the raw values here.
        ClauseAnnotation {
            span: Span {
                start: r.start,
                end: r.end,
            },
            is_stimulus: r.stimulus,
        }
    }
}

impl From<ClauseAnnotation> for ClauseRecord {
    fn from(c: ClauseAnnotation) -> Self {
        ClauseRecord {
            start: c.span.start,
            end: c.span.end,
            stimulus: c.is_stimulus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub dataset: String,
    pub tokens: Vec<String>,
    pub iob: Vec<IobLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clauses: Option<Vec<ClauseAnnotation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_iob: Option<Vec<IobLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_clauses: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_model: Option<String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>, tokens: Vec<String>, iob: Vec<IobLabel>) -> Self {
        Instance {
            id: id.into(),
            dataset: dataset.into(),
            tokens,
            iob,
            clauses: None,
            parse: None,
            emotion: None,
            pred_iob: None,
            pred_clauses: None,
            pred_model: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn stimulus_spans(&self) -> Vec<Span> {
        iob_to_spans(&self.iob)
    }

    pub fn clause_spans(&self) -> Option<Vec<Span>> {
        self.clauses
            .as_ref()
            .map(|cs| cs.iter().map(|c| c.span).collect())
    }

    /// Checks every record invariant. `line` is used for error messages only.
    pub fn validate(&self, line: usize) -> Result<()> {
        let invalid = |field: &'static str, message: String| Error::Validation {
            line,
            field,
            message,
        };
        let n = self.tokens.len();
        if n == 0 {
            return Err(invalid("tokens", "at least one token is required".into()));
        }
        if self.iob.len() != n {
            return Err(invalid(
                "iob",
                format!("{} labels for {} tokens", self.iob.len(), n),
            ));
        }
        if let Some(pred) = &self.pred_iob {
            if pred.len() != n {
                return Err(invalid(
                    "pred_iob",
                    format!("{} labels for {} tokens", pred.len(), n),
                ));
            }
        }
        if let Some(clauses) = &self.clauses {
            let mut prev_end = 0;
            for (k, c) in clauses.iter().enumerate() {
                if c.span.start >= c.span.end {
                    return Err(invalid("clauses", format!("clause {k} is empty: {}", c.span)));
                }
                if c.span.end > n {
                    return Err(invalid(
                        "clauses",
                        format!("clause {k} {} exceeds {} tokens", c.span, n),
                    ));
                }
                if c.span.start < prev_end {
                    return Err(invalid(
                        "clauses",
                        format!("clause {k} {} overlaps or is out of order", c.span),
                    ));
                }
                prev_end = c.span.end;
            }
            if let Some(pred) = &self.pred_clauses {
                if pred.len() != clauses.len() {
                    return Err(invalid(
                        "pred_clauses",
                        format!("{} flags for {} clauses", pred.len(), clauses.len()),
                    ));
                }
            }
        } else if self.pred_clauses.is_some() {
            return Err(invalid("pred_clauses", "present without `clauses`".into()));
        }
        Ok(())
    }
}

/// Parses one JSON-lines record and validates it.
pub fn parse_record(text: &str, line: usize) -> Result<Instance> {
    let instance: Instance = serde_json::from_str(text).map_err(|e| Error::Malformed {
        line,
        message: e.to_string(),
    })?;
    instance.validate(line)?;
    Ok(instance)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Instance>> {
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let instance = parse_record(&line, line_no)?;
        if !ids.insert(instance.id.clone()) {
            return Err(Error::Validation {
                line: line_no,
                field: "id",
                message: format!("duplicate id `{}`", instance.id),
            });
        }
        instances.push(instance);
    }
    Ok(instances)
}

pub fn write_corpus(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for instance in instances {
        serde_json::to_writer(&mut w, instance)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Converts IOB labels into stimulus spans. An `I` that does not continue a
/// span opens a new one.
pub fn iob_to_spans(iob: &[IobLabel]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, label) in iob.iter().enumerate() {
        match label {
            IobLabel::B => {
                if let Some(start) = open.take() {
                    spans.push(Span::new(start, i));
                }
                open = Some(i);
            }
            IobLabel::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            IobLabel::O => {
                if let Some(start) = open.take() {
                    spans.push(Span::new(start, i));
                }
            }
        }
    }
    if let Some(start) = open {
        spans.push(Span::new(start, iob.len()));
    }
    spans
}

pub fn spans_to_iob(spans: &[Span], n: usize) -> Result<Vec<IobLabel>> {
    let mut iob = vec![IobLabel::O; n];
    let mut covered = vec![false; n];
    for span in spans {
        if span.start >= span.end || span.end > n {
            return Err(Error::InvalidArgument(format!(
                "span {span} is empty or outside 0..{n}"
            )));
        }
        if covered[span.start..span.end].iter().any(|&c| c) {
            return Err(Error::Overlap(format!("span {span} overlaps another span")));
        }
        covered[span.start..span.end].iter_mut().for_each(|c| *c = true);
        iob[span.start] = IobLabel::B;
        for label in &mut iob[span.start + 1..span.end] {
            *label = IobLabel::I;
        }
    }
    Ok(iob)
}

/// Instance indices of a train/dev/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random 80/10/10 partition. Dev and test sizes are `floor(n / 10)`; the
/// remainder goes to train. Each part is returned in corpus order.
pub fn split_corpus(instances: &[Instance], seed: u64) -> Result<SplitIndices> {
    let n = instances.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "at least 10 instances are needed to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held_out = n / 10;
    let mut dev = order[..held_out].to_vec();
    let mut test = order[held_out..2 * held_out].to_vec();
    let mut train = order[2 * held_out..].to_vec();
    dev.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, dev, test })
}

/// Per-dataset corpus statistics. Clause columns are `None` when no
/// instance carries clause spans.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub size: usize,
    pub with_stimuli: usize,
    /// Mean length of stimulus spans in tokens.
    pub mu_len: f64,
    /// Population standard deviation of stimulus span lengths.
    pub sigma_len: f64,
    /// Mean over instances of the fraction of tokens labeled as stimulus.
    pub mu_s_per_i: f64,
    /// Mean over clauses of the fraction of the clause's tokens labeled as stimulus.
    pub mu_s_per_c: Option<f64>,
    pub clauses_total: Option<usize>,
    /// Clauses containing at least one stimulus token.
    pub clauses_with_s: Option<usize>,
    pub mu_clauses_per_i: Option<f64>,
    /// Mean over instances of the number of clauses made up entirely of stimulus tokens.
    pub mu_all_s_per_i: Option<f64>,
}

pub const STATS_HEADER: [&str; 11] = [
    "dataset",
    "size",
    "stimuli",
    "mu_len",
    "sigma_len",
    "mu_s_per_i",
    "mu_s_per_c",
    "clauses_total",
    "clauses_with_s",
    "mu_clauses_per_i",
    "mu_all_s_per_i",
];

pub fn compute_stats(instances: &[Instance]) -> CorpusStats {
    let size = instances.len();
    let mut with_stimuli = 0;
    let mut lengths = Vec::new();
    let mut token_fraction_sum = 0.0;

    let mut clause_instances = 0usize;
    let mut clauses_total = 0usize;
    let mut clauses_with_s = 0usize;
    let mut clause_fraction_sum = 0.0;
    let mut all_stimulus_clauses = 0usize;

    for inst in instances {
        let spans = inst.stimulus_spans();
        if !spans.is_empty() {
            with_stimuli += 1;
        }
        lengths.extend(spans.iter().map(|s| s.len() as f64));
        let stim_tokens = inst.iob.iter().filter(|l| l.is_stimulus()).count();
        if !inst.tokens.is_empty() {
            token_fraction_sum += stim_tokens as f64 / inst.tokens.len() as f64;
        }

        if let Some(clauses) = &inst.clauses {
            clause_instances += 1;
            for c in clauses {
                clauses_total += 1;
                let labels = &inst.iob[c.span.start..c.span.end];
                let stim = labels.iter().filter(|l| l.is_stimulus()).count();
                if stim > 0 {
                    clauses_with_s += 1;
                }
                if stim == labels.len() {
                    all_stimulus_clauses += 1;
                }
                clause_fraction_sum += stim as f64 / labels.len() as f64;
            }
        }
    }

    let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    let mu_len = mean(lengths.iter().sum(), lengths.len());
    let sigma_len = if lengths.is_empty() {
        0.0
    } else {
        mean(lengths.iter().map(|l| (l - mu_len).powi(2)).sum(), lengths.len()).sqrt()
    };

    let has_clauses = clause_instances > 0;
    CorpusStats {
        size,
        with_stimuli,
        mu_len,
        sigma_len,
        mu_s_per_i: mean(token_fraction_sum, size),
        mu_s_per_c: has_clauses.then(|| mean(clause_fraction_sum, clauses_total)),
        clauses_total: has_clauses.then_some(clauses_total),
        clauses_with_s: has_clauses.then_some(clauses_with_s),
        mu_clauses_per_i: has_clauses.then(|| mean(clauses_total as f64, clause_instances)),
        mu_all_s_per_i: has_clauses.then(|| mean(all_stimulus_clauses as f64, clause_instances)),
    }
}

/// Groups instances by `dataset` (sorted by name) and computes stats per group.
pub fn stats_by_dataset(instances: &[Instance]) -> BTreeMap<String, CorpusStats> {
    let mut groups: BTreeMap<String, Vec<Instance>> = BTreeMap::new();
    for inst in instances {
        groups.entry(inst.dataset.clone()).or_default().push(inst.clone());
    }
    groups
        .into_iter()
        .map(|(name, group)| {
            let stats = compute_stats(&group);
            (name, stats)
        })
        .collect()
}

pub fn write_stats_csv(writer: impl Write, stats: &BTreeMap<String, CorpusStats>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STATS_HEADER)?;
    let opt_f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for (name, s) in stats {
        w.write_record([
            name.clone(),
            s.size.to_string(),
            s.with_stimuli.to_string(),
            format!("{:.4}", s.mu_len),
            format!("{:.4}", s.sigma_len),
            format!("{:.4}", s.mu_s_per_i),
            opt_f(s.mu_s_per_c),
            opt_u(s.clauses_total),
            opt_u(s.clauses_with_s),
            opt_f(s.mu_clauses_per_i),
            opt_f(s.mu_all_s_per_i),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Knobs for [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticGrammar {
    /// Probability that an instance carries a stimulus.
    pub stimulus_rate: f64,
    /// Among stimulus instances, probability that the stimulus opens the sentence.
    pub stimulus_first_rate: f64,
}

impl Default for SyntheticGrammar {
    fn default() -> Self {
        SyntheticGrammar {
            stimulus_rate: 0.7,
            stimulus_first_rate: 0.3,
        }
    }
}

const SUBJECTS: &[(&str, &str, &str)] = &[
    // (subject, copula, reaction pronoun)
    ("She", "was", "she"),
    ("He", "was", "he"),
    ("Anna", "was", "she"),
    ("Tom", "was", "he"),
    ("They", "were", "they"),
];
const EMOTIONS: &[&str] = &[
    "pleased", "angry", "sad", "happy", "afraid", "surprised", "glad", "upset", "furious", "ashamed",
];
const REACTIONS: &[&str] = &["smiled", "cried", "laughed", "left", "shouted", "sighed"];
const OBJECTS: &[&str] = &["her", "him", "them"];
const DETERMINERS: &[&str] = &["the", "a", "her", "his", "our"];
const ADJECTIVES: &[&str] = &["old", "new", "little", "loud", "big", "strange"];
const NOUNS: &[&str] = &["dog", "team", "letter", "storm", "party", "teacher", "car", "song"];
const VERBS: &[&str] = &["barked", "won", "arrived", "ended", "started", "broke", "failed", "called"];

/// Word plus part-of-speech tag, used to emit bracketed parses.
type Tagged = (String, &'static str);

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn stimulus_phrase(rng: &mut ChaCha8Rng, capitalize: bool) -> Vec<Tagged> {
    let mut words: Vec<Tagged> = vec![
        (pick(rng, DETERMINERS).to_string(), "DT"),
        (pick(rng, ADJECTIVES).to_string(), "JJ"),
        (pick(rng, NOUNS).to_string(), "NN"),
        (pick(rng, VERBS).to_string(), "VBD"),
    ];
    if rng.gen_bool(0.5) {
        words.push((pick(rng, DETERMINERS).to_string(), "DT"));
        words.push((pick(rng, NOUNS).to_string(), "NN"));
    }
    if capitalize {
        let first = &mut words[0].0;
        let mut chars = first.chars();
        if let Some(c) = chars.next() {
            *first = c.to_uppercase().chain(chars).collect();
        }
    }
    words
}

fn tagged(words: &[(&str, &'static str)]) -> Vec<Tagged> {
    words.iter().map(|(w, t)| (w.to_string(), *t)).collect()
}

fn bracket_clause(words: &[Tagged]) -> String {
    let leaves: Vec<String> = words.iter().map(|(w, t)| format!("({t} {w})")).collect();
    format!("(S {})", leaves.join(" "))
}

/// Deterministic templated corpus. Stimulus instances place the stimulus in
/// its own clause, so the stimulus span always equals the union of the
/// stimulus-flagged clauses.
pub fn generate_synthetic(n: usize, seed: u64, grammar: &SyntheticGrammar) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (subject, copula, pronoun) = *pick(&mut rng, SUBJECTS);
        let emotion = *pick(&mut rng, EMOTIONS);
        let reaction = *pick(&mut rng, REACTIONS);
        // (clause words, is stimulus)
        let clauses: Vec<(Vec<Tagged>, bool)> = if rng.gen_bool(grammar.stimulus_rate) {
            if rng.gen_bool(grammar.stimulus_first_rate) {
                let object = *pick(&mut rng, OBJECTS);
                vec![
                    (stimulus_phrase(&mut rng, true), true),
                    (
                        tagged(&[("and", "CC"), ("it", "PRP"), ("made", "VBD"), (object, "PRP"), (emotion, "JJ"), (".", ".")]),
                        false,
                    ),
                ]
            } else {
                vec![
                    (
                        tagged(&[(subject, "PRP"), (copula, "VBD"), (emotion, "JJ"), ("because", "IN")]),
                        false,
                    ),
                    (stimulus_phrase(&mut rng, false), true),
                    (tagged(&[("and", "CC"), (pronoun, "PRP"), (reaction, "VBD"), (".", ".")]), false),
                ]
            }
        } else if rng.gen_bool(0.5) {
            vec![(
                tagged(&[(subject, "PRP"), ("felt", "VBD"), (emotion, "JJ"), ("today", "NN"), (".", ".")]),
                false,
            )]
        } else {
            vec![
                (tagged(&[(subject, "PRP"), (copula, "VBD"), (emotion, "JJ"), ("all", "DT"), ("day", "NN")]), false),
                (tagged(&[("and", "CC"), (pronoun, "PRP"), (reaction, "VBD"), (".", ".")]), false),
            ]
        };

        let mut tokens = Vec::new();
        let mut iob = Vec::new();
        let mut annotations = Vec::new();
        let mut parse_parts = Vec::new();
        for (words, is_stim) in &clauses {
            let start = tokens.len();
            for (j, (w, _)) in words.iter().enumerate() {
                tokens.push(w.clone());
                iob.push(match (is_stim, j) {
                    (false, _) => IobLabel::O,
                    (true, 0) => IobLabel::B,
                    (true, _) => IobLabel::I,
                });
            }
            annotations.push(ClauseAnnotation {
                span: Span::new(start, tokens.len()),
                is_stimulus: Some(*is_stim),
            });
            parse_parts.push(bracket_clause(words));
        }
        let mut inst = Instance::new(format!("syn-{k}"), "Synthetic", tokens, iob);
        inst.clauses = Some(annotations);
        inst.parse = Some(format!("(ROOT (S {}))", parse_parts.join(" ")));
        inst.emotion = Some(emotion.to_string());
        out.push(inst);
    }
    out
}
