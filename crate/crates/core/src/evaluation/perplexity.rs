use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{run_chain, SentenceLikelihoods};
use crate::corpus::{Corpus, Document};
use crate::error::{ConfigError, Error, NumericalError};
use crate::numerics::{child_rng, log_sum_exp};

use super::PointEstimate;

/// Plug-in perplexity protocol: for each document, `sweeps` Gibbs sweeps over
/// z under fixed `β̄`, the first `burnin` discarded; `θ̂_{dr}` is the averaged
/// occupancy smoothed by `α`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerplexityConfig {
    pub sweeps: usize,
    pub burnin: usize,
    pub seed: u64,
}

impl Default for PerplexityConfig {
    fn default() -> Self {
        PerplexityConfig {
            sweeps: 50,
            burnin: 10,
            seed: 0,
        }
    }
}

impl PerplexityConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sweeps <= self.burnin {
            return Err(ConfigError::Other(format!(
                "perplexity sweeps ({}) must exceed burn-in ({})",
                self.sweeps, self.burnin
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub log_likelihood: f64,
    pub tokens: u64,
    pub scored_sentences: usize,
    /// Sentences with no features (typically emptied by OOV dropping).
    pub skipped_sentences: usize,
    pub protocol: PerplexityConfig,
}

struct DocScore {
    log_likelihood: f64,
    tokens: u64,
    scored: usize,
    skipped: usize,
}

fn score_document(
    est: &PointEstimate,
    doc: &Document,
    doc_index: usize,
    config: &PerplexityConfig,
) -> Result<DocScore, NumericalError> {
    let r_count = est.num_relations();
    let n = doc.sentences.len();
    let mut log_rows = vec![0.0; n * r_count];
    for (i, s) in doc.sentences.iter().enumerate() {
        let row = &mut log_rows[i * r_count..(i + 1) * r_count];
        est.sentence_log_likelihood(s, row);
        if row.iter().all(|&x| x == f64::NEG_INFINITY) {
            return Err(NumericalError::ZeroProbability {
                doc: doc.id.clone(),
                sentence: i,
            });
        }
    }
    let lik = SentenceLikelihoods::from_log(r_count, log_rows.clone(), doc_index)?;
    let kept = config.sweeps - config.burnin;
    let mut occupancy_sum = vec![0u64; r_count];
    let mut rng = child_rng(config.seed, 0, &doc.id);
    run_chain(&lik, est.alpha(), config.burnin, kept, &mut rng, |state| {
        for (acc, &o) in occupancy_sum.iter_mut().zip(state.occupancy()) {
            *acc += o as u64;
        }
    });
    let denom = n as f64 + r_count as f64 * est.alpha();
    let log_theta: Vec<f64> = occupancy_sum
        .iter()
        .map(|&o| ((o as f64 / kept as f64 + est.alpha()) / denom).ln())
        .collect();

    let mut score = DocScore {
        log_likelihood: 0.0,
        tokens: 0,
        scored: 0,
        skipped: 0,
    };
    let mut terms = vec![0.0; r_count];
    for (i, s) in doc.sentences.iter().enumerate() {
        if s.is_empty() {
            score.skipped += 1;
            continue;
        }
        let row = &log_rows[i * r_count..(i + 1) * r_count];
        for r in 0..r_count {
            terms[r] = log_theta[r] + row[r];
        }
        let ll = log_sum_exp(&terms);
        if !ll.is_finite() {
            return Err(NumericalError::ZeroProbability {
                doc: doc.id.clone(),
                sentence: i,
            });
        }
        score.log_likelihood += ll;
        score.tokens += s.token_count();
        score.scored += 1;
    }
    Ok(score)
}

/// `exp(−Σ log p(sentence) / Σ tokens)` over every active feature type.
pub fn perplexity(
    est: &PointEstimate,
    corpus: &Corpus,
    config: &PerplexityConfig,
) -> Result<PerplexityReport, Error> {
    config.validate()?;
    est.check_corpus(corpus)?;
    let scores = corpus
        .documents
        .par_iter()
        .enumerate()
        .map(|(d, doc)| score_document(est, doc, d, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut log_likelihood = 0.0;
    let mut tokens = 0;
    let mut scored = 0;
    let mut skipped = 0;
    for s in scores {
        log_likelihood += s.log_likelihood;
        tokens += s.tokens;
        scored += s.scored;
        skipped += s.skipped;
    }
    if skipped > 0 {
        warn!("perplexity: skipped {skipped} sentences with no in-vocabulary features");
    }
    if tokens == 0 {
        return Err(ConfigError::Other(
            "evaluation corpus has no in-vocabulary tokens".to_string(),
        )
        .into());
    }
    Ok(PerplexityReport {
        perplexity: (-log_likelihood / tokens as f64).exp(),
        log_likelihood,
        tokens,
        scored_sentences: scored,
        skipped_sentences: skipped,
        protocol: *config,
    })
}
