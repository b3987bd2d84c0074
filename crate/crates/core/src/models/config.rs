//! Training hyperparameters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Sl,
    Icc,
    Jcc,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Sl, Architecture::Icc, Architecture::Jcc];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Sl => "sl",
            Architecture::Icc => "icc",
            Architecture::Jcc => "jcc",
        }
    }

    /// Whether the model labels clauses rather than tokens.
    pub fn is_clause_level(self) -> bool {
        self != Architecture::Sl
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    /// Token accuracy for SL, clause accuracy for ICC/JCC.
    Accuracy,
    /// Exact span F1 for SL, clause F1 for ICC/JCC.
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    /// Let each position attend to itself.
    pub attention_include_self: bool,
    /// Attention over clause vectors in JCC.
    pub clause_attention: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            batch_size: 10,
            dropout_p: 0.5,
            max_epochs: 50,
            patience: 10,
            embedding_dim: 300,
            hidden_dim: 100,
            seed: 0,
            selection_metric: SelectionMetric::Accuracy,
            attention_include_self: true,
            clause_attention: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return bad("batch_size, max_epochs, embedding_dim and hidden_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.learning_rate, c.batch_size, c.dropout_p), (0.003, 10, 0.5));
        assert_eq!((c.max_epochs, c.patience, c.embedding_dim, c.hidden_dim), (50, 10, 300, 100));
    }

    #[test]
    fn toml_overrides_and_rejects_unknown_keys() {
        let c = TrainConfig::from_toml("hidden_dim = 8\nselection_metric = \"f1\"\n").unwrap();
        assert_eq!(c.hidden_dim, 8);
        assert_eq!(c.selection_metric, SelectionMetric::F1);
        assert_eq!(c.batch_size, 10);
        assert!(TrainConfig::from_toml("hiden_dim = 8").is_err());
        assert!(TrainConfig::from_toml("patience = 60").is_err());
        assert!(TrainConfig::from_toml("dropout_p = 1.0").is_err());
    }

    #[test]
    fn architecture_names() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("crf".parse::<Architecture>().is_err());
    }
}
