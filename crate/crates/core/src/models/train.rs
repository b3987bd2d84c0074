//! Mini-batch Adam training with dev-based model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Architecture, SelectionMetric, TrainConfig};
use super::embeddings::{EmbeddingSource, EmbeddingTable};
use super::network::Dropout;
use super::{gold_clause_flags, Model};
use crate::corpus::{iob_to_spans, Instance};
use crate::error::{Error, Result};
use crate::evaluation::{clause_prf, span_prf, MatchMode};
use crate::nn::{AdamState, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example loss over the epoch, with dropout active.
    pub train_loss: f64,
    pub dev_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Weights of the best dev epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// The configured selection metric of `model` on `dev`.
pub fn dev_metric(model: &Model, dev: &[Instance]) -> Result<f64> {
    let metric = model.config.selection_metric;
    if model.architecture() == Architecture::Sl {
        let (mut correct, mut total) = (0usize, 0usize);
        let (mut pred_spans, mut gold_spans) = (Vec::new(), Vec::new());
        for inst in dev {
            let iob = model.sl_predict(&inst.tokens)?;
            correct += iob.iter().zip(&inst.iob).filter(|(a, b)| a == b).count();
            total += iob.len();
            pred_spans.push(iob_to_spans(&iob));
            gold_spans.push(inst.stimulus_spans());
        }
        return Ok(match metric {
            SelectionMetric::Accuracy => correct as f64 / total.max(1) as f64,
            SelectionMetric::F1 => span_prf(&pred_spans, &gold_spans, MatchMode::Exact)?.f1,
        });
    }
    let (mut pred, mut gold) = (Vec::new(), Vec::new());
    for inst in dev {
        pred.push(model.predict(inst)?.clauses.unwrap_or_default());
        gold.push(gold_clause_flags(inst)?);
    }
    Ok(match metric {
        SelectionMetric::Accuracy => {
            let total: usize = gold.iter().map(Vec::len).sum();
            let correct: usize = pred
                .iter()
                .zip(&gold)
                .map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a == b).count())
                .sum();
            correct as f64 / total.max(1) as f64
        }
        SelectionMetric::F1 => clause_prf(&pred, &gold)?.f1,
    })
}

/// Trains `arch` on `train`, selecting the epoch with the best dev metric.
/// Stops after `patience` epochs without improvement (never, if 0).
pub fn train(
    arch: Architecture,
    train: &[Instance],
    dev: &[Instance],
    embeddings: EmbeddingTable,
    embedding_source: EmbeddingSource,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("training needs non-empty train and dev splits".into()));
    }
    let mut model = Model::new(arch, config.clone(), embeddings, embedding_source)?;
    let mut examples = Vec::new();
    for inst in train {
        examples.extend(model.examples(inst)?);
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument("training split yields no examples".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&model.store, config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let mut losses = Vec::with_capacity(batch.len());
            for &k in batch {
                let mut drop = Dropout::train(config.dropout_p, &mut rng);
                losses.push(model.loss(&model.store, &mut g, &examples[k], &mut drop)?);
            }
            let sum = g.add_all(&losses)?;
            total_loss += g.value(sum).item();
            let loss = g.scale(sum, 1.0 / batch.len() as f64);
            let grads = g.backward(loss)?;
            model.store.zero_grad();
            grads.accumulate_into(&g, &mut model.store);
            adam.step(&mut model.store)?;
        }
        let metric = dev_metric(&model, dev)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total_loss / examples.len() as f64,
            dev_metric: metric,
        });
        match &best {
            Some((b, _, _)) if metric <= *b => {
                stale += 1;
                if config.patience > 0 && stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((metric, epoch, model.store.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
    })
}
