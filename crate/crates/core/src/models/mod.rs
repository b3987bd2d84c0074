//! Stimulus detectors: token sequence labeling (SL), independent clause
//! classification (ICC) and joint clause classification (JCC).

mod checkpoint;
mod config;
mod embeddings;
mod network;
mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{Architecture, SelectionMetric, TrainConfig};
pub use embeddings::{vocabulary, EmbeddingSource, EmbeddingTable};
pub use network::{Dropout, IccNet, JccNet, Network, SlNet};
pub use train::{dev_metric, train, EpochRecord, TrainedModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{IobLabel, Instance, Span};
use crate::crf::viterbi_decode;
use crate::error::{Error, Result};
use crate::mapping::{clauses_to_tokens, tokens_to_clauses};
use crate::nn::{Graph, ParamStore, Tensor, Var};

/// Gold clause flags: explicit annotations when present, otherwise derived
/// from the gold token labels.
pub fn gold_clause_flags(instance: &Instance) -> Result<Vec<bool>> {
    let clauses = instance
        .clauses
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no clause spans", instance.id)))?;
    let derived = tokens_to_clauses(&instance.iob, &instance.clause_spans().unwrap_or_default());
    Ok(clauses
        .iter()
        .zip(derived)
        .map(|(c, d)| c.is_stimulus.unwrap_or(d))
        .collect())
}

/// One unit of supervision.
#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    /// Token labels of a whole instance (SL).
    Tokens { tokens: Vec<String>, labels: Vec<usize> },
    /// One clause and its flag (ICC).
    Clause { tokens: Vec<String>, label: bool },
    /// All clauses of an instance and their flags (JCC).
    Clauses { tokens: Vec<String>, clauses: Vec<Span>, labels: Vec<bool> },
}

/// Model outputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub iob: Vec<IobLabel>,
    pub clauses: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub network: Network,
    pub embeddings: EmbeddingTable,
    pub embedding_source: EmbeddingSource,
}

fn check_clauses(clauses: &[Span], n: usize) -> Result<()> {
    if clauses.is_empty() {
        return Err(Error::InvalidArgument("no clause spans".into()));
    }
    for c in clauses {
        if c.is_empty() || c.end > n {
            return Err(Error::InvalidArgument(format!("clause {c} outside 0..{n}")));
        }
    }
    Ok(())
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(
        arch: Architecture,
        config: TrainConfig,
        embeddings: EmbeddingTable,
        embedding_source: EmbeddingSource,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embedding_dim {
            return Err(Error::InvalidArgument(format!(
                "embeddings have dimension {}, config expects {}",
                embeddings.dim(),
                config.embedding_dim
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network = Network::build(arch, &config, &mut store, &mut rng)?;
        Ok(Model {
            config,
            store,
            network,
            embeddings,
            embedding_source,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.network.architecture()
    }

    /// Turns an instance into training examples for this architecture.
    pub fn examples(&self, instance: &Instance) -> Result<Vec<Example>> {
        if instance.tokens.is_empty() {
            return Err(Error::InvalidArgument(format!("instance {} is empty", instance.id)));
        }
        Ok(match self.architecture() {
            Architecture::Sl => vec![Example::Tokens {
                tokens: instance.tokens.clone(),
                labels: instance.iob.iter().map(|l| l.index()).collect(),
            }],
            Architecture::Icc => {
                let flags = gold_clause_flags(instance)?;
                let spans = instance.clause_spans().unwrap_or_default();
                check_clauses(&spans, instance.len())?;
                spans
                    .iter()
                    .zip(flags)
                    .map(|(s, label)| Example::Clause {
                        tokens: instance.tokens[s.start..s.end].to_vec(),
                        label,
                    })
                    .collect()
            }
            Architecture::Jcc => {
                let labels = gold_clause_flags(instance)?;
                let clauses = instance.clause_spans().unwrap_or_default();
                check_clauses(&clauses, instance.len())?;
                vec![Example::Clauses {
                    tokens: instance.tokens.clone(),
                    clauses,
                    labels,
                }]
            }
        })
    }

    fn embed(&self, g: &mut Graph, tokens: &[String]) -> Result<Vec<Var>> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty token sequence".into()));
        }
        Ok(tokens
            .iter()
            .map(|t| g.input(Tensor::vector(self.embeddings.lookup(t).to_vec())))
            .collect())
    }

    fn embed_clauses(&self, g: &mut Graph, tokens: &[String], clauses: &[Span]) -> Result<Vec<Vec<Var>>> {
        check_clauses(clauses, tokens.len())?;
        clauses.iter().map(|c| self.embed(g, &tokens[c.start..c.end])).collect()
    }

    /// Scalar training loss of one example under the weights in `store`.
    pub fn loss(&self, store: &ParamStore, g: &mut Graph, example: &Example, drop: &mut Dropout) -> Result<Var> {
        match (&self.network, example) {
            (Network::Sl(net), Example::Tokens { tokens, labels }) => {
                let inputs = self.embed(g, tokens)?;
                let emissions = net.emissions(g, store, &inputs, drop)?;
                net.crf.nll(g, store, emissions, labels)
            }
            (Network::Icc(net), Example::Clause { tokens, label }) => {
                let inputs = self.embed(g, tokens)?;
                let logits = net.logits(g, store, &inputs, drop)?;
                g.cross_entropy(logits, *label as usize)
            }
            (Network::Jcc(net), Example::Clauses { tokens, clauses, labels }) => {
                if labels.len() != clauses.len() {
                    return Err(Error::Shape(format!("{} labels for {} clauses", labels.len(), clauses.len())));
                }
                let inputs = self.embed_clauses(g, tokens, clauses)?;
                let emissions = net.emissions(g, store, &inputs, drop)?;
                let gold: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
                net.crf.nll(g, store, emissions, &gold)
            }
            _ => Err(Error::InvalidArgument(format!(
                "example does not fit a {} model",
                self.architecture()
            ))),
        }
    }

    fn wrong_arch<T>(&self, wanted: Architecture) -> Result<T> {
        Err(Error::InvalidArgument(format!(
            "operation needs a {wanted} model, this is {}",
            self.architecture()
        )))
    }

    /// `[n, 3]` token emission scores (inference mode).
    pub fn sl_emissions(&self, tokens: &[String]) -> Result<Tensor> {
        let Network::Sl(net) = &self.network else { return self.wrong_arch(Architecture::Sl) };
        let mut g = Graph::new();
        let inputs = self.embed(&mut g, tokens)?;
        let e = net.emissions(&mut g, &self.store, &inputs, &mut Dropout::eval())?;
        Ok(g.value(e).clone())
    }

    pub fn sl_predict(&self, tokens: &[String]) -> Result<Vec<IobLabel>> {
        let Network::Sl(net) = &self.network else { return self.wrong_arch(Architecture::Sl) };
        let emissions = self.sl_emissions(tokens)?;
        let (path, _) = viterbi_decode(&emissions, &net.crf.params(&self.store)?)?;
        Ok(path
            .into_iter()
            .map(|k| IobLabel::from_index(k).expect("three labels"))
            .collect())
    }

    /// Softmax over (not stimulus, stimulus) for one clause.
    pub fn icc_probabilities(&self, clause_tokens: &[String]) -> Result<[f64; 2]> {
        let Network::Icc(net) = &self.network else { return self.wrong_arch(Architecture::Icc) };
        let mut g = Graph::new();
        let inputs = self.embed(&mut g, clause_tokens)?;
        let logits = net.logits(&mut g, &self.store, &inputs, &mut Dropout::eval())?;
        let p = g.softmax(logits);
        let d = g.value(p).data();
        Ok([d[0], d[1]])
    }

    pub fn icc_predict(&self, clause_tokens: &[String]) -> Result<bool> {
        let [no, yes] = self.icc_probabilities(clause_tokens)?;
        Ok(yes > no)
    }

    /// `[m, 2]` clause emission scores (inference mode).
    pub fn jcc_emissions(&self, tokens: &[String], clauses: &[Span]) -> Result<Tensor> {
        let Network::Jcc(net) = &self.network else { return self.wrong_arch(Architecture::Jcc) };
        let mut g = Graph::new();
        let inputs = self.embed_clauses(&mut g, tokens, clauses)?;
        let e = net.emissions(&mut g, &self.store, &inputs, &mut Dropout::eval())?;
        Ok(g.value(e).clone())
    }

    pub fn jcc_predict(&self, tokens: &[String], clauses: &[Span]) -> Result<Vec<bool>> {
        let Network::Jcc(net) = &self.network else { return self.wrong_arch(Architecture::Jcc) };
        let emissions = self.jcc_emissions(tokens, clauses)?;
        let (path, _) = viterbi_decode(&emissions, &net.crf.params(&self.store)?)?;
        Ok(path.into_iter().map(|k| k == 1).collect())
    }

    /// Token labels plus clause flags (when the instance has clauses).
    pub fn predict(&self, instance: &Instance) -> Result<Prediction> {
        let n = instance.len();
        let spans = instance.clause_spans();
        match self.architecture() {
            Architecture::Sl => {
                let iob = self.sl_predict(&instance.tokens)?;
                let clauses = spans.map(|s| tokens_to_clauses(&iob, &s));
                Ok(Prediction { iob, clauses })
            }
            arch => {
                let spans = spans.ok_or_else(|| {
                    Error::InvalidArgument(format!("{arch} needs clause spans for instance {}", instance.id))
                })?;
                let flags = if arch == Architecture::Icc {
                    check_clauses(&spans, n)?;
                    spans
                        .iter()
                        .map(|s| self.icc_predict(&instance.tokens[s.start..s.end]))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    self.jcc_predict(&instance.tokens, &spans)?
                };
                let iob = clauses_to_tokens(&flags, &spans, n)?;
                Ok(Prediction {
                    iob,
                    clauses: Some(flags),
                })
            }
        }
    }
}
