//! Command-line front end.
//!
//! Every subcommand reads canonical JSONL corpora and writes CSV, JSON,
//! JSONL or Markdown. Outputs go to `--out` when given, else to stdout, and
//! are written only after the whole command has succeeded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::clause_extract::{extract_from_bracket, ClauseLabels, DEFAULT_CLAUSE_LABELS};
use crate::corpus::{
    generate_synthetic, iob_to_spans, load_corpus, split_corpus, stats_by_dataset, write_stats_csv, ClauseAnnotation, Instance, Span,
    SyntheticGrammar,
};
use crate::error::{Error, Result};
use crate::error_analysis::{classify_corpus, write_error_csv, ErrorCounts};
use crate::evaluation::{
    boundary_decisions, clause_alignment, clause_match_prf, clause_prf, cohen_kappa, span_prf, write_eval_csv,
    EvalRow, MatchMode,
};
use crate::mapping::tokens_to_clauses;
use crate::models::{
    gold_clause_flags, train, vocabulary, Architecture, Checkpoint, EmbeddingSource, EmbeddingTable, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "stimulus", version, about = "Emotion stimulus detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Schema-check a corpus.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Write a templated synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dataset corpus statistics as CSV.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clause extraction and its evaluation.
    #[command(subcommand)]
    Clauses(ClausesCommand),
    /// Random train/dev/test split, written as JSON id lists.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Add model predictions to every record of a corpus.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding file replacing the one recorded in the checkpoint.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions; all five modes unless `--mode` is given.
    Eval {
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<MatchMode>,
        /// Restrict scoring to the test ids of this split file.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error-type counts per model and dataset.
    Errors {
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Markdown summary of previously written CSV reports.
    Report {
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        clauses: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        errors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClausesCommand {
    /// Replace each record's clauses with spans extracted from its parse.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// JSONL sidecar of `{"id": …, "parse": …}`; falls back to each record's `parse`.
        #[arg(long)]
        trees: Option<PathBuf>,
        /// Keep raw segments without joining short or punctuation-only ones.
        #[arg(long)]
        no_join: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clause-detection diagnostics per dataset as CSV.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        trees: Option<PathBuf>,
        #[arg(long)]
        no_join: bool,
        /// Same records with a second annotator's clauses, for agreement.
        #[arg(long)]
        second: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Train on the train ids and select on the dev ids; without it the
    /// whole corpus serves as both.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// TOML file with training hyperparameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Text embedding file; random frozen vectors when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Per-epoch loss and dev metric as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<MatchMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Train/dev/test ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Deserialize)]
struct TreeRecord {
    id: String,
    parse: String,
}

/// Binary entry point.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn corpus_bytes(instances: &[Instance]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for inst in instances {
        serde_json::to_writer(&mut buf, inst)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn select<'a>(instances: &'a [Instance], ids: &[String]) -> Result<Vec<&'a Instance>> {
    let by_id: HashMap<&str, &Instance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("split id `{id}` not in corpus")))
        })
        .collect()
}

/// Loads all corpora, optionally keeping only the split's test ids.
fn load_scored(paths: &[PathBuf], splits: Option<&Path>) -> Result<Vec<Instance>> {
    let keep: Option<BTreeSet<String>> = match splits {
        Some(p) => Some(SplitFile::load(p)?.test.into_iter().collect()),
        None => None,
    };
    let mut all = Vec::new();
    for path in paths {
        for inst in load_corpus(path)? {
            if keep.as_ref().map_or(true, |k| k.contains(&inst.id)) {
                all.push(inst);
            }
        }
    }
    Ok(all)
}

fn predicted_iob(inst: &Instance) -> Result<&[crate::corpus::IobLabel]> {
    inst.pred_iob
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no predictions", inst.id)))
}

/// Groups by `(dataset, model)`.
fn group_predictions(instances: &[Instance]) -> BTreeMap<(String, String), Vec<&Instance>> {
    let mut groups: BTreeMap<(String, String), Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        let model = inst.pred_model.clone().unwrap_or_else(|| "model".into());
        groups.entry((inst.dataset.clone(), model)).or_default().push(inst);
    }
    groups
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { corpus } => {
            let instances = load_corpus(&corpus)?;
            println!("{}: {} valid instances", corpus.display(), instances.len());
            Ok(())
        }
        Command::Synth { n, seed, out } => {
            if n == 0 {
                return Err(Error::InvalidArgument("--n must be positive".into()));
            }
            let instances = generate_synthetic(n, seed, &SyntheticGrammar::default());
            emit(out.as_deref(), &corpus_bytes(&instances)?)
        }
        Command::Stats { corpus, out } => {
            let instances = load_corpus(&corpus)?;
            let mut buf = Vec::new();
            write_stats_csv(&mut buf, &stats_by_dataset(&instances))?;
            emit(out.as_deref(), &buf)
        }
        Command::Clauses(ClausesCommand::Extract {
            corpus,
            trees,
            no_join,
            out,
        }) => {
            let mut instances = load_corpus(&corpus)?;
            let trees = load_trees(trees.as_deref())?;
            for inst in &mut instances {
                let spans = extract_for(inst, &trees, !no_join)?;
                inst.clauses = Some(
                    spans
                        .into_iter()
                        .map(|span| ClauseAnnotation {
                            span,
                            is_stimulus: None,
                        })
                        .collect(),
                );
            }
            emit(out.as_deref(), &corpus_bytes(&instances)?)
        }
        Command::Clauses(ClausesCommand::Eval {
            corpus,
            trees,
            no_join,
            second,
            out,
        }) => {
            let instances = load_corpus(&corpus)?;
            let trees = load_trees(trees.as_deref())?;
            let second = match second {
                Some(p) => Some(load_corpus(&p)?),
                None => None,
            };
            let buf = clause_report(&instances, &trees, !no_join, second.as_deref())?;
            emit(out.as_deref(), &buf)
        }
        Command::Split { corpus, seed, out } => {
            let instances = load_corpus(&corpus)?;
            let split = split_corpus(&instances, seed)?;
            let ids = |idx: &[usize]| idx.iter().map(|&k| instances[k].id.clone()).collect();
            let file = SplitFile {
                seed,
                train: ids(&split.train),
                dev: ids(&split.dev),
                test: ids(&split.test),
            };
            let mut buf = serde_json::to_vec_pretty(&file)?;
            buf.push(b'\n');
            emit(out.as_deref(), &buf)
        }
        Command::Train(args) => run_train(args),
        Command::Predict {
            corpus,
            checkpoint,
            embeddings,
            out,
        } => {
            let mut instances = load_corpus(&corpus)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let override_table = match embeddings {
                Some(path) => Some((EmbeddingTable::load_text(&path)?, EmbeddingSource::File { path })),
                None => None,
            };
            let model = ck.into_model(override_table)?;
            let name = model.architecture().to_string();
            for inst in &mut instances {
                let p = model.predict(inst)?;
                inst.pred_iob = Some(p.iob);
                inst.pred_clauses = p.clauses;
                inst.pred_model = Some(name.clone());
            }
            for (k, inst) in instances.iter().enumerate() {
                inst.validate(k + 1)?;
            }
            emit(out.as_deref(), &corpus_bytes(&instances)?)
        }
        Command::Eval {
            corpus,
            mode,
            splits,
            out,
        } => {
            let instances = load_scored(&corpus, splits.as_deref())?;
            let modes = match mode {
                Some(m) => vec![m],
                None => MatchMode::ALL.to_vec(),
            };
            let rows = eval_rows(&instances, &modes)?;
            let mut buf = Vec::new();
            write_eval_csv(&mut buf, &rows)?;
            emit(out.as_deref(), &buf)
        }
        Command::Errors { corpus, splits, out } => {
            let instances = load_scored(&corpus, splits.as_deref())?;
            let mut columns: Vec<(String, ErrorCounts)> = Vec::new();
            for ((dataset, model), group) in group_by_model_first(&instances) {
                let gold: Vec<_> = group.iter().map(|i| i.stimulus_spans()).collect();
                let pred: Vec<_> = group
                    .iter()
                    .map(|i| predicted_iob(i).map(iob_to_spans))
                    .collect::<Result<_>>()?;
                columns.push((format!("{model}:{dataset}"), classify_corpus(&gold, &pred)?));
            }
            let mut buf = Vec::new();
            write_error_csv(&mut buf, &columns)?;
            emit(out.as_deref(), &buf)
        }
        Command::Report {
            stats,
            clauses,
            eval,
            errors,
            out,
        } => {
            let mut md = String::from("# Stimulus detection report\n");
            let sections = [
                ("Corpus statistics", stats),
                ("Clause detection", clauses),
                ("Evaluation", eval),
                ("Error analysis", errors),
            ];
            if sections.iter().all(|(_, p)| p.is_none()) {
                return Err(Error::InvalidArgument("report needs at least one input CSV".into()));
            }
            for (title, path) in sections {
                if let Some(path) = path {
                    md.push_str(&format!("\n## {title}\n\n"));
                    md.push_str(&csv_to_markdown(&path)?);
                }
            }
            emit(out.as_deref(), md.as_bytes())
        }
    }
}

/// Error columns ordered by model (sl, icc, jcc, then others), then dataset.
fn group_by_model_first(instances: &[Instance]) -> Vec<((String, String), Vec<&Instance>)> {
    let rank = |m: &str| {
        m.parse::<Architecture>()
            .map(|a| Architecture::ALL.iter().position(|&x| x == a).unwrap_or(3))
            .unwrap_or(3)
    };
    let mut groups: Vec<_> = group_predictions(instances).into_iter().collect();
    groups.sort_by(|((da, ma), _), ((db, mb), _)| (rank(ma), ma, da).cmp(&(rank(mb), mb, db)));
    groups
}

fn eval_rows(instances: &[Instance], modes: &[MatchMode]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for ((dataset, model), group) in group_predictions(instances) {
        for &mode in modes {
            let prf = if mode == MatchMode::Clause {
                let (mut pred, mut gold) = (Vec::new(), Vec::new());
                for inst in group.iter().filter(|i| i.clauses.is_some()) {
                    let spans = inst.clause_spans().unwrap_or_default();
                    pred.push(match &inst.pred_clauses {
                        Some(flags) => flags.clone(),
                        None => tokens_to_clauses(predicted_iob(inst)?, &spans),
                    });
                    gold.push(gold_clause_flags(inst)?);
                }
                if gold.is_empty() {
                    continue;
                }
                clause_prf(&pred, &gold)?
            } else {
                let gold: Vec<_> = group.iter().map(|i| i.stimulus_spans()).collect();
                let pred: Vec<_> = group
                    .iter()
                    .map(|i| predicted_iob(i).map(iob_to_spans))
                    .collect::<Result<_>>()?;
                span_prf(&pred, &gold, mode)?
            };
            rows.push(EvalRow {
                dataset: dataset.clone(),
                model: model.clone(),
                mode,
                prf,
            });
        }
    }
    Ok(rows)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let instances = load_corpus(&args.corpus)?;
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.max_epochs {
        config.max_epochs = e;
        config.patience = config.patience.min(e);
    }
    if let Some(d) = args.embedding_dim {
        config.embedding_dim = d;
    }
    if let Some(h) = args.hidden_dim {
        config.hidden_dim = h;
    }
    config.validate()?;

    let (train_set, dev_set): (Vec<Instance>, Vec<Instance>) = match &args.splits {
        Some(p) => {
            let split = SplitFile::load(p)?;
            (
                select(&instances, &split.train)?.into_iter().cloned().collect(),
                select(&instances, &split.dev)?.into_iter().cloned().collect(),
            )
        }
        None => (instances.clone(), instances.clone()),
    };
    let (table, source) = match &args.embeddings {
        Some(path) => (EmbeddingTable::load_text(path)?, EmbeddingSource::File { path: path.clone() }),
        None => {
            let vocab = vocabulary(&train_set);
            (
                EmbeddingTable::random(&vocab, config.embedding_dim, config.seed)?,
                EmbeddingSource::Random {
                    dim: config.embedding_dim,
                    seed: config.seed,
                    vocabulary: vocab,
                },
            )
        }
    };
    let trained = train(args.arch, &train_set, &dev_set, table, source, &config)?;
    Checkpoint::from_trained(&trained).save(&args.checkpoint)?;
    if let Some(path) = &args.history {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "dev_metric"])?;
        for r in &trained.history {
            w.write_record([r.epoch.to_string(), format!("{:.6}", r.train_loss), format!("{:.6}", r.dev_metric)])?;
        }
        let buf = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        emit(Some(path), &buf)?;
    }
    eprintln!(
        "trained {} for {} epochs; best dev metric {:.4} at epoch {}",
        args.arch,
        trained.history.len(),
        trained.history[trained.best_epoch - 1].dev_metric,
        trained.best_epoch
    );
    Ok(())
}

fn load_trees(path: Option<&Path>) -> Result<HashMap<String, String>> {
    let Some(path) = path else { return Ok(HashMap::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut trees = HashMap::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TreeRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: k + 1,
            message: e.to_string(),
        })?;
        trees.insert(rec.id, rec.parse);
    }
    Ok(trees)
}

fn parse_of<'a>(inst: &'a Instance, trees: &'a HashMap<String, String>) -> Option<&'a str> {
    trees.get(&inst.id).map(String::as_str).or(inst.parse.as_deref())
}

fn extract_for(inst: &Instance, trees: &HashMap<String, String>, join: bool) -> Result<Vec<Span>> {
    let parse = parse_of(inst, trees)
        .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no parse tree", inst.id)))?;
    let labels = ClauseLabels::new(DEFAULT_CLAUSE_LABELS);
    Ok(extract_from_bracket(parse, Some(&inst.tokens), &labels, join)?.segments)
}

pub const CLAUSE_REPORT_HEADER: [&str; 12] = [
    "dataset",
    "instances",
    "kappa",
    "anno_exact",
    "anno_left",
    "anno_right",
    "extracted_precision",
    "extracted_recall",
    "extracted_f1",
    "extracted_exact",
    "extracted_left",
    "extracted_right",
];

fn clause_report(
    instances: &[Instance],
    trees: &HashMap<String, String>,
    join: bool,
    second: Option<&[Instance]>,
) -> Result<Vec<u8>> {
    let second: HashMap<&str, &Instance> = second
        .unwrap_or_default()
        .iter()
        .map(|i| (i.id.as_str(), i))
        .collect();
    let mut by_dataset: BTreeMap<&str, Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        by_dataset.entry(&inst.dataset).or_default().push(inst);
    }
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CLAUSE_REPORT_HEADER)?;
    for (dataset, group) in by_dataset {
        // Stimuli against annotated clauses.
        let annotated: Vec<&Instance> = group.iter().copied().filter(|i| i.clauses.is_some()).collect();
        let anno = if annotated.is_empty() {
            None
        } else {
            let stimuli: Vec<_> = annotated.iter().map(|i| i.stimulus_spans()).collect();
            let clauses: Vec<_> = annotated.iter().map(|i| i.clause_spans().unwrap_or_default()).collect();
            Some(clause_alignment(&stimuli, &clauses)?)
        };

        // Extracted clauses against annotation and stimuli.
        let parsed: Vec<&Instance> = group.iter().copied().filter(|i| parse_of(i, trees).is_some()).collect();
        let extracted: Vec<Vec<Span>> = parsed.iter().map(|i| extract_for(i, trees, join)).collect::<Result<_>>()?;
        let stim_vs_extracted = if parsed.is_empty() {
            None
        } else {
            let stimuli: Vec<_> = parsed.iter().map(|i| i.stimulus_spans()).collect();
            Some(clause_alignment(&stimuli, &extracted)?)
        };
        let (mut ext, mut ann) = (Vec::new(), Vec::new());
        for (inst, spans) in parsed.iter().zip(&extracted) {
            if let Some(a) = inst.clause_spans() {
                ext.push(spans.clone());
                ann.push(a);
            }
        }
        let match_prf = if ann.is_empty() { None } else { Some(clause_match_prf(&ext, &ann)?) };

        // Agreement with a second annotator over shared records.
        let (mut a1, mut a2) = (Vec::new(), Vec::new());
        for inst in &annotated {
            if let Some(other) = second.get(inst.id.as_str()).and_then(|o| o.clause_spans()) {
                a1.extend(boundary_decisions(&inst.clause_spans().unwrap_or_default(), inst.len()));
                a2.extend(boundary_decisions(&other, inst.len()));
            }
        }
        let kappa = if a1.is_empty() { None } else { Some(cohen_kappa(&a1, &a2)?) };

        w.write_record([
            dataset.to_string(),
            group.len().to_string(),
            fmt(kappa),
            fmt(anno.map(|a| a.exact)),
            fmt(anno.map(|a| a.left)),
            fmt(anno.map(|a| a.right)),
            fmt(match_prf.map(|p| p.precision)),
            fmt(match_prf.map(|p| p.recall)),
            fmt(match_prf.map(|p| p.f1)),
            fmt(stim_vs_extracted.map(|a| a.exact)),
            fmt(stim_vs_extracted.map(|a| a.left)),
            fmt(stim_vs_extracted.map(|a| a.right)),
        ])?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Renders a CSV file as a GitHub-flavored Markdown table.
pub fn csv_to_markdown(path: &Path) -> Result<String> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for rec in reader.records() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    Ok(out)
}
