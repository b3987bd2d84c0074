//! Frozen word vectors.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::error::{Error, Result};

/// How a table was obtained, so a checkpoint can rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    File { path: PathBuf },
    Random { dim: usize, seed: u64, vocabulary: Vec<String> },
}

/// Token → row lookup. Unknown tokens embed to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    matrix: Vec<f64>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(rows.len());
        let mut matrix = Vec::with_capacity(rows.len() * dim);
        for (token, values) in rows {
            if values.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding for `{token}` has {} values, expected {dim}",
                    values.len()
                )));
            }
            // First occurrence wins, as in most published vector files.
            if !index.contains_key(&token) {
                index.insert(token, matrix.len() / dim);
                matrix.extend(values);
            }
        }
        Ok(EmbeddingTable {
            dim,
            index,
            matrix,
            zero: vec![0.0; dim],
        })
    }

    /// Reads `token v1 … vd` lines; the dimension is fixed by the first line.
    pub fn read_text(reader: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        let mut dim = None;
        for (k, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Malformed {
                        line: k + 1,
                        message: format!("bad embedding value `{f}`"),
                    })
                })
                .collect::<Result<_>>()?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d || d == 0 {
                return Err(Error::Malformed {
                    line: k + 1,
                    message: format!("expected {d} values, found {}", values.len()),
                });
            }
            rows.push((token.to_string(), values));
        }
        let dim = dim.ok_or_else(|| Error::InvalidArgument("embedding file is empty".into()))?;
        Self::new(dim, rows)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(std::io::BufReader::new(file))
    }

    /// Uniform(−1, 1) vectors for `vocabulary`, drawn in the given order.
    pub fn random(vocabulary: &[String], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = vocabulary
            .iter()
            .map(|t| (t.clone(), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        Self::new(dim, rows)
    }

    pub fn from_source(source: &EmbeddingSource) -> Result<Self> {
        match source {
            EmbeddingSource::File { path } => Self::load_text(path),
            EmbeddingSource::Random { dim, seed, vocabulary } => Self::random(vocabulary, *dim, *seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.row(token) {
            Some(r) => &self.matrix[r * self.dim..(r + 1) * self.dim],
            None => &self.zero,
        }
    }
}

/// Sorted distinct tokens of `instances`.
pub fn vocabulary<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Vec<String> {
    let set: BTreeSet<&str> = instances
        .into_iter()
        .flat_map(|i| i.tokens.iter().map(String::as_str))
        .collect();
    set.into_iter().map(str::to_string).collect()
}
