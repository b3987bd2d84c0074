use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named parameters of one model, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

/// Serialized form of one parameter: shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(tensor.shape());
        self.params.push(Parameter {
            name: name.clone(),
            tensor,
            grad,
            trainable: true,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Glorot-uniform matrix in `±sqrt(6 / (rows + cols))`.
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_vector(&mut self, name: &str, values: Vec<f64>) -> Result<ParamId> {
        self.add(name, Tensor::vector(values))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn to_records(&self) -> BTreeMap<String, ParamRecord> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    ParamRecord {
                        shape: p.tensor.shape().to_vec(),
                        values: p.tensor.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites values from records. Every parameter must be present with
    /// its registered shape.
    pub fn load_records(&mut self, records: &BTreeMap<String, ParamRecord>) -> Result<()> {
        for p in &mut self.params {
            let rec = records
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if rec.shape != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.tensor.shape(),
                    rec.shape
                )));
            }
            p.tensor = Tensor::new(rec.shape.clone(), rec.values.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", p.name)))?;
        }
        if records.len() != self.params.len() {
            let extra: Vec<&String> = records.keys().filter(|k| !self.by_name.contains_key(*k)).collect();
            return Err(Error::Checkpoint(format!("unknown parameters {extra:?}")));
        }
        Ok(())
    }
}
