//! Versioned JSON model files shared by both trainers.
//!
//! `λ` is stored materialized, one sparse `{value id: λ}` map per (r, f);
//! ids missing from a map sit at the prior `η_f`. The file embeds the
//! training vocabulary and its hash so evaluation corpora can be frozen to
//! the same id space.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::corpus::{Vocabulary, VocabularyRecord};
use crate::error::{Error, ModelFileError};
use crate::evaluation::{PerplexityConfig, PointEstimate};
use crate::ssvi::VariationalModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainer {
    Ssvi,
    Gibbs,
    /// Parameters written directly, e.g. a planted synthetic truth.
    Planted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub trainer: Trainer,
    #[serde(rename = "R")]
    pub relations: usize,
    #[serde(rename = "F")]
    pub num_types: usize,
    pub feature_types: Vec<String>,
    pub vocab_sizes: Vec<usize>,
    pub eta: Vec<f64>,
    pub alpha: f64,
    pub t: usize,
    pub pi: f64,
    /// `lambda[r][f]`: stored entries only.
    pub lambda: Vec<Vec<BTreeMap<u32, f64>>>,
    pub vocab_hash: String,
    pub vocabulary: VocabularyRecord,
    pub perplexity_protocol: PerplexityConfig,
    /// The run configuration, echoed verbatim.
    pub config: serde_json::Value,
}

impl ModelFile {
    pub fn new(
        model: &VariationalModel,
        vocab: &Vocabulary,
        trainer: Trainer,
        config: serde_json::Value,
        perplexity_protocol: PerplexityConfig,
    ) -> Self {
        let f_count = model.num_types();
        ModelFile {
            version: FORMAT_VERSION,
            trainer,
            relations: model.num_relations(),
            num_types: f_count,
            feature_types: vocab.features().names(),
            vocab_sizes: model.vocab_sizes().to_vec(),
            eta: model.eta().to_vec(),
            alpha: model.alpha(),
            t: model.iteration(),
            pi: model.pi(),
            lambda: (0..model.num_relations())
                .map(|r| {
                    (0..f_count)
                        .map(|f| model.stored_entries(r, f).collect())
                        .collect()
                })
                .collect(),
            vocab_hash: vocab.content_hash(),
            vocabulary: vocab.to_record(),
            perplexity_protocol,
            config,
        }
    }

    /// Structural checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), ModelFileError> {
        let bad = |m: String| Err(ModelFileError::Inconsistent(m));
        if self.version != FORMAT_VERSION {
            return Err(ModelFileError::Version(self.version));
        }
        let f = self.num_types;
        if self.feature_types.len() != f || self.vocab_sizes.len() != f || self.eta.len() != f {
            return bad(format!("F = {f} disagrees with the per-type arrays"));
        }
        if self.relations == 0 || self.lambda.len() != self.relations {
            return bad(format!(
                "R = {} but {} lambda rows",
                self.relations,
                self.lambda.len()
            ));
        }
        if self
            .eta
            .iter()
            .chain([&self.alpha])
            .any(|x| !(*x > 0.0 && x.is_finite()))
        {
            return bad("hyperparameters must be positive and finite".to_string());
        }
        for (r, row) in self.lambda.iter().enumerate() {
            if row.len() != f {
                return bad(format!("lambda[{r}] has {} types, expected {f}", row.len()));
            }
            for (ff, map) in row.iter().enumerate() {
                for (&v, &x) in map {
                    if v as usize >= self.vocab_sizes[ff] {
                        return bad(format!(
                            "lambda[{r}][{ff}] has id {v} beyond W = {}",
                            self.vocab_sizes[ff]
                        ));
                    }
                    if !(x > 0.0 && x.is_finite()) {
                        return bad(format!("lambda[{r}][{ff}][{v}] = {x}"));
                    }
                }
            }
        }
        let vocab = self.vocabulary()?;
        if vocab.features().names() != self.feature_types {
            return bad("feature types disagree with the vocabulary".to_string());
        }
        if vocab.sizes() != self.vocab_sizes {
            return bad("vocabulary sizes disagree with the vocabulary".to_string());
        }
        if vocab.content_hash() != self.vocab_hash {
            return bad("vocabulary hash does not match the embedded vocabulary".to_string());
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Arc<Vocabulary>, ModelFileError> {
        Vocabulary::from_record(&self.vocabulary)
            .map(Arc::new)
            .map_err(|e| ModelFileError::Inconsistent(e.to_string()))
    }

    /// Rebuilds the model from the materialized `λ` (with `π = 1`).
    pub fn to_variational(&self) -> Result<VariationalModel, ModelFileError> {
        VariationalModel::from_materialized(
            self.relations,
            self.vocab_sizes.clone(),
            self.eta.clone(),
            self.alpha,
            self.t,
            |r, f| self.lambda[r][f].iter().map(|(&v, &x)| (v, x)),
        )
        .map_err(|e| ModelFileError::Inconsistent(e.to_string()))
    }

    /// `β̄ = λ / Λ` straight from the stored values.
    pub fn point_estimate(&self) -> PointEstimate {
        PointEstimate::from_weights(
            self.relations,
            self.vocab_sizes.clone(),
            self.alpha,
            |r, f, v| {
                self.lambda[r][f]
                    .get(&(v as u32))
                    .copied()
                    .unwrap_or(self.eta[f])
            },
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    /// Parses and validates a model file.
    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|source| ModelFileError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        file.validate()?;
        Ok(file)
    }

    /// Writes atomically; an interrupted save leaves any previous file intact.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let json = self.to_json();
        write_atomic(path, |w| w.write_all(json.as_bytes()))
    }
}
