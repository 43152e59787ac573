//! Planted-structure corpora: documents generated from known relation
//! distributions, with the true sentence relations kept for scoring.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, FeatureKind, FeatureSet, Sentence, Vocabulary};
use crate::error::{ConfigError, Error};
use crate::evaluation::{PerplexityConfig, PointEstimate};
use crate::model_file::{ModelFile, Trainer, FORMAT_VERSION};
use crate::numerics::{root_rng, Rng};

/// Smallest probability any planted value keeps, before renormalizing.
const PROBABILITY_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedType {
    pub kind: FeatureKind,
    pub vocab_size: usize,
    /// Tokens of this type emitted by every sentence.
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub relations: usize,
    pub documents: usize,
    /// Extra documents drawn from the same parameters for evaluation.
    pub eval_documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub types: Vec<PlantedType>,
    /// Dirichlet concentration of each document's relation mixture.
    pub alpha: f64,
    /// Dirichlet concentration of each relation's value distribution.
    pub beta_concentration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            relations: 5,
            documents: 500,
            eval_documents: 0,
            min_sentences: 3,
            max_sentences: 6,
            types: vec![
                PlantedType {
                    kind: FeatureKind::Vb,
                    vocab_size: 60,
                    tokens: 2,
                },
                PlantedType {
                    kind: FeatureKind::Pp,
                    vocab_size: 20,
                    tokens: 1,
                },
                PlantedType {
                    kind: FeatureKind::EntType,
                    vocab_size: 12,
                    tokens: 1,
                },
            ],
            alpha: 0.3,
            beta_concentration: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.relations == 0 {
            return Err(ConfigError::ZeroRelations);
        }
        if self.documents == 0 {
            return Err(ConfigError::Other("documents must be ≥ 1".to_string()));
        }
        if self.min_sentences == 0 || self.max_sentences < self.min_sentences {
            return Err(ConfigError::Other(format!(
                "sentence range {}..={} must be non-empty and start at ≥ 1",
                self.min_sentences, self.max_sentences
            )));
        }
        if self.types.is_empty() || self.types.iter().all(|t| t.tokens == 0) {
            return Err(ConfigError::Other(
                "at least one type must emit tokens".to_string(),
            ));
        }
        for t in &self.types {
            if t.vocab_size == 0 {
                return Err(ConfigError::Other(format!(
                    "type {} has an empty vocabulary",
                    t.kind.name()
                )));
            }
            let shared = self
                .types
                .iter()
                .find(|u| u.kind != t.kind && u.kind.table_name() == t.kind.table_name());
            if shared.is_some_and(|u| u.vocab_size != t.vocab_size) {
                return Err(ConfigError::Other(format!(
                    "types sharing the {} vocabulary need equal sizes",
                    t.kind.table_name()
                )));
            }
        }
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta concentration", self.beta_concentration),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// A generated corpus with its hidden parameters.
#[derive(Clone, Debug)]
pub struct Planted {
    pub train: Corpus,
    /// Empty unless `eval_documents > 0`; shares the training vocabulary.
    pub eval: Corpus,
    /// True relation of every training sentence, `[d][i]`.
    pub labels: Vec<Vec<usize>>,
    pub eval_labels: Vec<Vec<usize>>,
    /// `beta[r][f][v]`, in the corpus's feature-type order.
    pub beta: Vec<Vec<Vec<f64>>>,
    pub alpha: f64,
}

fn dirichlet(rng: &mut Rng, concentration: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("validated concentration");
    let mut x: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = x.iter().sum();
    if total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        // every draw underflowed; fall back to a random vertex
        let i = rng.random_range(0..k);
        x.iter_mut().for_each(|v| *v = 0.0);
        x[i] = 1.0;
        return x;
    }
    x.iter_mut().for_each(|v| *v /= total);
    x
}

fn with_floor(mut p: Vec<f64>) -> Vec<f64> {
    p.iter_mut().for_each(|v| *v = v.max(PROBABILITY_FLOOR));
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

fn draw(rng: &mut Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Draws `β_{rf} ~ Dir(beta_concentration)`, then for every document
/// `θ_d ~ Dir(α)`, and for every sentence `z ~ θ_d` and each type's tokens
/// from `β_{zf}`.
///
/// Value `v` of a type is the string `<table>_<v>` and is pre-interned, so
/// corpus ids coincide with the planted indices.
pub fn generate(config: &SynthConfig) -> Result<Planted, Error> {
    config.validate()?;
    let features = FeatureSet::new(config.types.iter().map(|t| t.kind))?;
    // `types` may list kinds in any order; the corpus uses registry order
    let by_kind: BTreeMap<FeatureKind, &PlantedType> =
        config.types.iter().map(|t| (t.kind, t)).collect();
    let ordered: Vec<&PlantedType> = features.kinds().iter().map(|k| by_kind[k]).collect();
    let mut vocab = Vocabulary::new(features);
    for (f, t) in ordered.iter().enumerate() {
        for v in 0..t.vocab_size {
            vocab.intern(f, &format!("{}_{v}", t.kind.table_name()));
        }
    }
    let vocab = Arc::new(vocab);

    let mut rng = root_rng(config.seed);
    let beta: Vec<Vec<Vec<f64>>> = (0..config.relations)
        .map(|_| {
            ordered
                .iter()
                .map(|t| with_floor(dirichlet(&mut rng, config.beta_concentration, t.vocab_size)))
                .collect()
        })
        .collect();

    let make = |count: usize, prefix: &str, rng: &mut Rng| {
        let mut docs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for d in 0..count {
            let theta = dirichlet(rng, config.alpha, config.relations);
            let n = rng.random_range(config.min_sentences..=config.max_sentences);
            let mut sentences = Vec::with_capacity(n);
            let mut z_doc = Vec::with_capacity(n);
            for _ in 0..n {
                let z = draw(rng, &theta);
                let ids = ordered
                    .iter()
                    .enumerate()
                    .map(|(f, t)| {
                        (0..t.tokens)
                            .map(|_| draw(rng, &beta[z][f]) as u32)
                            .collect()
                    })
                    .collect();
                sentences.push(Sentence::from_ids(ids));
                z_doc.push(z);
            }
            docs.push(Document {
                id: format!("{prefix}{d:05}"),
                sentences,
            });
            labels.push(z_doc);
        }
        (docs, labels)
    };
    let (train_docs, labels) = make(config.documents, "doc", &mut rng);
    let (eval_docs, eval_labels) = make(config.eval_documents, "eval", &mut rng);
    Ok(Planted {
        train: Corpus {
            documents: train_docs,
            vocab: vocab.clone(),
        },
        eval: Corpus {
            documents: eval_docs,
            vocab,
        },
        labels,
        eval_labels,
        beta,
        alpha: config.alpha,
    })
}

#[derive(Serialize)]
struct LabelRecord<'a> {
    id: &'a str,
    relations: &'a [usize],
}

impl Planted {
    /// Planted labels flattened in corpus order.
    pub fn flat_labels(&self) -> Vec<usize> {
        self.labels.iter().flatten().copied().collect()
    }

    /// The true `β` with the generating `α`.
    pub fn point_estimate(&self) -> PointEstimate {
        let sizes = self.train.vocab.sizes();
        PointEstimate::from_weights(self.beta.len(), sizes, self.alpha, |r, f, v| {
            self.beta[r][f][v]
        })
    }

    /// The true parameters as a model file with `λ = β`.
    pub fn model_file(&self, config: serde_json::Value) -> ModelFile {
        let vocab = &self.train.vocab;
        let f_count = vocab.num_types();
        ModelFile {
            version: FORMAT_VERSION,
            trainer: Trainer::Planted,
            relations: self.beta.len(),
            num_types: f_count,
            feature_types: vocab.features().names(),
            vocab_sizes: vocab.sizes(),
            eta: vec![PROBABILITY_FLOOR / 2.0; f_count],
            alpha: self.alpha,
            t: 0,
            pi: 1.0,
            lambda: self
                .beta
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|p| p.iter().enumerate().map(|(v, &x)| (v as u32, x)).collect())
                        .collect()
                })
                .collect(),
            vocab_hash: vocab.content_hash(),
            vocabulary: vocab.to_record(),
            perplexity_protocol: PerplexityConfig::default(),
            config,
        }
    }

    /// JSON Lines of `{"id": ..., "relations": [...]}`, one per training document.
    pub fn write_labels<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (doc, labels) in self.train.documents.iter().zip(&self.labels) {
            serde_json::to_writer(
                &mut out,
                &LabelRecord {
                    id: &doc.id,
                    relations: labels,
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
