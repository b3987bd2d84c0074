//! Layer layouts of the three architectures.
//!
//! Every forward pass takes the [`ParamStore`] explicitly so gradient checks
//! can perturb a copy of the weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, TrainConfig};
use crate::crf::CrfLayer;
use crate::error::{Error, Result};
use crate::nn::{attention, dropout, BiLstm, Graph, Linear, ParamStore, Var};

/// Dropout that is active only when it owns a random source.
pub struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn train(p: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Dropout { p, rng: Some(rng) }
    }

    pub fn eval() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => dropout(g, x, self.p, true, rng),
            None => Ok(x),
        }
    }
}

/// Token BiLSTM → attention → linear emissions → 3-label CRF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlNet {
    pub encoder: BiLstm,
    pub output: Linear,
    pub crf: CrfLayer,
    pub include_self: bool,
}

impl SlNet {
    pub fn new(store: &mut ParamStore, config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = config.hidden_dim;
        Ok(SlNet {
            encoder: BiLstm::new(store, "sl.encoder", config.embedding_dim, h, rng)?,
            output: Linear::new(store, "sl.output", 4 * h, 3, rng)?,
            crf: CrfLayer::new(store, "sl.crf", 3)?,
            include_self: config.attention_include_self,
        })
    }

    /// `[n, 3]` emission scores.
    pub fn emissions(&self, g: &mut Graph, store: &ParamStore, tokens: &[Var], drop: &mut Dropout) -> Result<Var> {
        let dropped: Vec<Var> = tokens.iter().map(|&x| drop.apply(g, x)).collect::<Result<_>>()?;
        let hidden = self.encoder.forward(g, store, &dropped)?;
        let attended = attention(g, &hidden, self.include_self)?;
        let rows: Vec<Var> = attended
            .into_iter()
            .map(|u| {
                let u = drop.apply(g, u)?;
                self.output.forward(g, store, u)
            })
            .collect::<Result<_>>()?;
        g.stack(&rows)
    }
}

/// Independent clause encoder with a two-way softmax classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IccNet {
    pub encoder: BiLstm,
    pub hidden: Linear,
    pub output: Linear,
    pub include_self: bool,
}

impl IccNet {
    pub fn new(store: &mut ParamStore, config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = config.hidden_dim;
        Ok(IccNet {
            encoder: BiLstm::new(store, "icc.encoder", config.embedding_dim, h, rng)?,
            hidden: Linear::new(store, "icc.hidden", 4 * h, h, rng)?,
            output: Linear::new(store, "icc.output", h, 2, rng)?,
            include_self: config.attention_include_self,
        })
    }

    /// Two logits for one clause; the clause vector is the mean of the
    /// attention-augmented token states.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, tokens: &[Var], drop: &mut Dropout) -> Result<Var> {
        let encoded = self.encoder.forward(g, store, tokens)?;
        let attended = attention(g, &encoded, self.include_self)?;
        let stacked = g.stack(&attended)?;
        let pooled = g.mean_rows(stacked)?;
        let projected = self.hidden.forward(g, store, pooled)?;
        let dropped = drop.apply(g, projected)?;
        let activated = g.relu(dropped);
        self.output.forward(g, store, activated)
    }
}

/// Shared word-level encoder per clause, two clause-level BiLSTMs, optional
/// clause attention, and a 2-label CRF over clauses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JccNet {
    pub word: BiLstm,
    pub clause_lower: BiLstm,
    pub clause_upper: BiLstm,
    pub output: Linear,
    pub crf: CrfLayer,
    pub include_self: bool,
    pub clause_attention: bool,
}

impl JccNet {
    pub fn new(store: &mut ParamStore, config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = config.hidden_dim;
        let out_dim = if config.clause_attention { 4 * h } else { 2 * h };
        Ok(JccNet {
            word: BiLstm::new(store, "jcc.word", config.embedding_dim, h, rng)?,
            clause_lower: BiLstm::new(store, "jcc.clause1", 2 * h, h, rng)?,
            clause_upper: BiLstm::new(store, "jcc.clause2", 2 * h, h, rng)?,
            output: Linear::new(store, "jcc.output", out_dim, 2, rng)?,
            crf: CrfLayer::new(store, "jcc.crf", 2)?,
            include_self: config.attention_include_self,
            clause_attention: config.clause_attention,
        })
    }

    /// `[m, 2]` emission scores for `m` clauses given each clause's token inputs.
    pub fn emissions(&self, g: &mut Graph, store: &ParamStore, clauses: &[Vec<Var>], drop: &mut Dropout) -> Result<Var> {
        if clauses.is_empty() {
            return Err(Error::InvalidArgument("joint clause model needs at least one clause".into()));
        }
        let mut vectors = Vec::with_capacity(clauses.len());
        for tokens in clauses {
            let dropped: Vec<Var> = tokens.iter().map(|&x| drop.apply(g, x)).collect::<Result<_>>()?;
            let (fwd, bwd) = self.word.states(g, store, &dropped)?;
            vectors.push(g.concat(&[*fwd.last().expect("non-empty clause"), bwd[0]])?);
        }
        let lower = self.clause_lower.forward(g, store, &vectors)?;
        let mut upper = self.clause_upper.forward(g, store, &lower)?;
        if self.clause_attention {
            upper = attention(g, &upper, self.include_self)?;
        }
        let rows: Vec<Var> = upper
            .into_iter()
            .map(|c| {
                let c = drop.apply(g, c)?;
                self.output.forward(g, store, c)
            })
            .collect::<Result<_>>()?;
        g.stack(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Network {
    Sl(SlNet),
    Icc(IccNet),
    Jcc(JccNet),
}

impl Network {
    pub fn build(arch: Architecture, config: &TrainConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        Ok(match arch {
            Architecture::Sl => Network::Sl(SlNet::new(store, config, rng)?),
            Architecture::Icc => Network::Icc(IccNet::new(store, config, rng)?),
            Architecture::Jcc => Network::Jcc(JccNet::new(store, config, rng)?),
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Network::Sl(_) => Architecture::Sl,
            Network::Icc(_) => Architecture::Icc,
            Network::Jcc(_) => Architecture::Jcc,
        }
    }
}
