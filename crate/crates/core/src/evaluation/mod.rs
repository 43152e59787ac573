//! Held-out perplexity, ranked cluster reports and SSVI-vs-Gibbs comparison
//! tables, all computed from a plug-in point estimate `β̄`.

mod compare;
mod perplexity;
mod report;

pub use compare::{
    comparison_curves, iterations_per_gibbs_sweep, sampling_steps_per_iteration, ComparisonTable,
    CurvePoint,
};
pub use perplexity::{perplexity, PerplexityConfig, PerplexityReport};
pub use report::{
    infer_assignments, rank_sentences, sentence_proportions, ClusterReport, RankedSentence,
    RelationCluster, ReportConfig,
};

use crate::corpus::{Corpus, Sentence};
use crate::error::CorpusError;
use crate::ssvi::VariationalModel;

/// `log β̄_{rfv}` together with the `α` used for document mixtures.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate {
    relations: usize,
    vocab_sizes: Vec<usize>,
    /// per type, `[v · R + r]`
    log_beta: Vec<Vec<f64>>,
    alpha: f64,
}

impl PointEstimate {
    /// `β̄ = λ / Λ`, the variational posterior mean.
    pub fn from_variational(model: &VariationalModel) -> Self {
        PointEstimate {
            relations: model.num_relations(),
            vocab_sizes: model.vocab_sizes().to_vec(),
            log_beta: model.log_mean_beta(),
            alpha: model.alpha(),
        }
    }

    /// Normalizes non-negative weights `weight(r, f, v)` per (r, f).
    pub fn from_weights(
        relations: usize,
        vocab_sizes: Vec<usize>,
        alpha: f64,
        weight: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let log_beta = vocab_sizes
            .iter()
            .enumerate()
            .map(|(f, &w)| {
                let mut out = vec![0.0; w * relations];
                for r in 0..relations {
                    let total: f64 = (0..w).map(|v| weight(r, f, v)).sum();
                    let log_total = total.ln();
                    for v in 0..w {
                        out[v * relations + r] = weight(r, f, v).ln() - log_total;
                    }
                }
                out
            })
            .collect();
        PointEstimate {
            relations,
            vocab_sizes,
            log_beta,
            alpha,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.relations
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn log_beta(&self, r: usize, f: usize, v: usize) -> f64 {
        self.log_beta[f][v * self.relations + r]
    }

    /// Relabels relations: new relation `perm[r]` takes old relation `r`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.relations);
        let log_beta = self
            .log_beta
            .iter()
            .map(|row| {
                let mut out = row.clone();
                for v in 0..row.len() / self.relations {
                    for r in 0..self.relations {
                        out[v * self.relations + perm[r]] = row[v * self.relations + r];
                    }
                }
                out
            })
            .collect();
        PointEstimate {
            log_beta,
            ..self.clone()
        }
    }

    /// `Σ_{f,v} N_{fv} log β̄_{rfv}` for every r.
    pub fn sentence_log_likelihood(&self, sentence: &Sentence, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (f, v, n) in sentence.entries() {
            let row =
                &self.log_beta[f][v as usize * self.relations..(v as usize + 1) * self.relations];
            for (o, lb) in out.iter_mut().zip(row) {
                *o += n as f64 * lb;
            }
        }
    }

    pub(crate) fn check_corpus(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        let sizes = corpus.vocab.sizes();
        if sizes != self.vocab_sizes {
            return Err(CorpusError::VocabularyMismatch(format!(
                "model vocabulary sizes {:?} do not match corpus {:?}",
                self.vocab_sizes, sizes
            )));
        }
        Ok(())
    }
}

/// Normalized mutual information `I(a; b) / ((H(a) + H(b)) / 2)`.
///
/// Two single-cluster labelings count as identical (1.0).
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0.0; ka * kb];
    let mut pa = vec![0.0; ka];
    let mut pb = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let entropy = |p: &[f64]| -> f64 {
        p.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let q = c / n;
                -q * q.ln()
            })
            .sum()
    };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0.0 {
                mi += c / n * (c * n / (pa[x] * pb[y])).ln();
            }
        }
    }
    (mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0)
}
