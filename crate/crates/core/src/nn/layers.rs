//! Layer primitives built on [`Graph`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            weight: store.add_matrix(&format!("{name}.weight"), output_dim, input_dim, rng)?,
            bias: store.add_vector(&format!("{name}.bias"), vec![0.0; output_dim])?,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let wx = g.matvec(w, x)?;
        g.add(wx, b)
    }
}

/// One direction of an LSTM. Gate rows are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add_matrix(&format!("{name}.weight"), 4 * hidden_dim, input_dim + hidden_dim, rng)?;
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].iter_mut().for_each(|b| *b = 1.0);
        let bias = store.add_vector(&format!("{name}.bias"), bias)?;
        Ok(Lstm {
            weight,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    /// Runs over `inputs` in order and returns the hidden state after each step.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, inputs: &[Var]) -> Result<Vec<Var>> {
        let h_dim = self.hidden_dim;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let mut h = g.input(Tensor::zeros(&[h_dim]));
        let mut c = g.input(Tensor::zeros(&[h_dim]));
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            if g.shape(x) != [self.input_dim] {
                return Err(Error::Shape(format!(
                    "lstm input {:?}, expected [{}]",
                    g.shape(x),
                    self.input_dim
                )));
            }
            let xh = g.concat(&[x, h])?;
            let z = g.matvec(w, xh)?;
            let z = g.add(z, b)?;
            let zi = g.slice(z, 0, h_dim)?;
            let zf = g.slice(z, h_dim, h_dim)?;
            let zg = g.slice(z, 2 * h_dim, h_dim)?;
            let zo = g.slice(z, 3 * h_dim, h_dim)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o, tc)?;
            states.push(h);
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(BiLstm {
            forward: Lstm::new(store, &format!("{name}.fwd"), input_dim, hidden_dim, rng)?,
            backward: Lstm::new(store, &format!("{name}.bwd"), input_dim, hidden_dim, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden_dim + self.backward.hidden_dim
    }

    pub fn states(&self, g: &mut Graph, store: &ParamStore, inputs: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("bilstm over an empty sequence".into()));
        }
        let fwd = self.forward.run(g, store, inputs)?;
        let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut bwd = self.backward.run(g, store, &reversed)?;
        bwd.reverse();
        Ok((fwd, bwd))
    }

    /// Position `i` yields `[forward_i ; backward_i]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, inputs: &[Var]) -> Result<Vec<Var>> {
        let (fwd, bwd) = self.states(g, store, inputs)?;
        fwd.iter().zip(&bwd).map(|(&f, &b)| g.concat(&[f, b])).collect()
    }
}

/// Dot-product self-attention: `u_i = [h_i ; Σ_j a_ij h_j]` with
/// `a_i = softmax_j(h_i · h_j)`. With `include_self = false` the diagonal is
/// masked out (except for single-element inputs).
pub fn attention(g: &mut Graph, hidden: &[Var], include_self: bool) -> Result<Vec<Var>> {
    let (_, context) = attention_parts(g, hidden, include_self)?;
    hidden
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let ctx = g.row(context, i)?;
            g.concat(&[h, ctx])
        })
        .collect()
}

/// Returns the `[n, n]` weight matrix and the `[n, k]` context rows.
pub fn attention_parts(g: &mut Graph, hidden: &[Var], include_self: bool) -> Result<(Var, Var)> {
    if hidden.is_empty() {
        return Err(Error::InvalidArgument("attention over an empty sequence".into()));
    }
    let n = hidden.len();
    let h = g.stack(hidden)?;
    let ht = g.transpose(h)?;
    let mut scores = g.matmul(h, ht)?;
    if !include_self && n > 1 {
        let mut mask = Tensor::zeros(&[n, n]);
        for i in 0..n {
            mask.data_mut()[i * n + i] = f64::NEG_INFINITY;
        }
        let mask = g.input(mask);
        scores = g.add(scores, mask)?;
    }
    let weights = g.softmax(scores);
    let context = g.matmul(weights, h)?;
    Ok((weights, context))
}

/// Inverted dropout: survivors are scaled by `1 / (1 - p)`; identity when
/// not training.
pub fn dropout(g: &mut Graph, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let scale = 1.0 / (1.0 - p);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
        .collect();
    g.mask_mul(x, mask)
}
