use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{run_chain, SentenceLikelihoods};
use crate::corpus::{Corpus, Sentence, Vocabulary};
use crate::error::{Error, NumericalError};
use crate::numerics::child_rng;

use super::PointEstimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Posterior samples of z taken per document after burn-in.
    pub samples: usize,
    pub burnin: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            samples: 50,
            burnin: 10,
            top_k: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSentence {
    pub document: String,
    pub sentence: usize,
    pub proportion: f64,
    /// `type=value` pairs joined with ` / `.
    pub features: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCluster {
    pub relation: usize,
    pub sentences: Vec<RankedSentence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub samples: usize,
    pub relations: Vec<RelationCluster>,
}

/// Fraction of posterior samples placing each sentence in each relation:
/// `out[d][i][r]`.
pub fn sentence_proportions(
    est: &PointEstimate,
    corpus: &Corpus,
    burnin: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>, Error> {
    est.check_corpus(corpus)?;
    let r_count = est.num_relations();
    let samples = samples.max(1);
    corpus
        .documents
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let n = doc.sentences.len();
            let mut log_rows = vec![0.0; n * r_count];
            for (i, s) in doc.sentences.iter().enumerate() {
                est.sentence_log_likelihood(s, &mut log_rows[i * r_count..(i + 1) * r_count]);
            }
            let lik = SentenceLikelihoods::from_log(r_count, log_rows, d)?;
            let mut hits = vec![vec![0u32; r_count]; n];
            let mut rng = child_rng(seed, 0, &doc.id);
            run_chain(&lik, est.alpha(), burnin, samples, &mut rng, |state| {
                for (i, z) in state.assignments().enumerate() {
                    hits[i][z.expect("assigned")] += 1;
                }
            });
            Ok(hits
                .into_iter()
                .map(|row| row.into_iter().map(|h| h as f64 / samples as f64).collect())
                .collect())
        })
        .collect::<Result<Vec<_>, NumericalError>>()
        .map_err(Error::from)
}

/// Most probable relation for every sentence, `out[d][i]`; ties go to the lower index.
pub fn infer_assignments(
    est: &PointEstimate,
    corpus: &Corpus,
    burnin: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, Error> {
    let props = sentence_proportions(est, corpus, burnin, samples, seed)?;
    Ok(props
        .into_iter()
        .map(|doc| {
            doc.into_iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (r, &x)| {
                            if x > best.1 {
                                (r, x)
                            } else {
                                best
                            }
                        })
                        .0
                })
                .collect()
        })
        .collect())
}

fn render(vocab: &Vocabulary, sentence: &Sentence) -> String {
    let kinds = vocab.features().kinds();
    let mut parts = Vec::new();
    for (f, v, n) in sentence.entries() {
        let value = vocab.decode(f, v).unwrap_or("?");
        for _ in 0..n {
            parts.push(format!("{}={}", kinds[f].name(), value));
        }
    }
    parts.join(" / ")
}

/// Per relation, the `top_k` sentences with the highest sampled association
/// proportion, ties broken by (document id, sentence index).
pub fn rank_sentences(
    est: &PointEstimate,
    corpus: &Corpus,
    config: &ReportConfig,
) -> Result<ClusterReport, Error> {
    let props = sentence_proportions(est, corpus, config.burnin, config.samples, config.seed)?;
    let mut relations = Vec::with_capacity(est.num_relations());
    for r in 0..est.num_relations() {
        let mut candidates: Vec<(usize, usize, f64)> = props
            .iter()
            .enumerate()
            .flat_map(|(d, doc)| doc.iter().enumerate().map(move |(i, p)| (d, i, p[r])))
            .filter(|&(_, _, p)| p > 0.0)
            .collect();
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| corpus.documents[a.0].id.cmp(&corpus.documents[b.0].id))
                .then_with(|| a.1.cmp(&b.1))
        });
        candidates.truncate(config.top_k);
        relations.push(RelationCluster {
            relation: r,
            sentences: candidates
                .into_iter()
                .map(|(d, i, p)| RankedSentence {
                    document: corpus.documents[d].id.clone(),
                    sentence: i,
                    proportion: p,
                    features: render(&corpus.vocab, &corpus.documents[d].sentences[i]),
                })
                .collect(),
        });
    }
    Ok(ClusterReport {
        samples: config.samples.max(1),
        relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, FeatureSet};

    fn corpus() -> Corpus {
        let text = "{\"id\":\"b\",\"sentences\":[{\"features\":{\"vb\":[\"x\"],\"pp\":[\"of\"]}},{\"features\":{\"vb\":[\"y\"]}}]}\n\
                    {\"id\":\"a\",\"sentences\":[{\"features\":{\"vb\":[\"y\",\"y\"]}}]}\n";
        parse_corpus(text.as_bytes(), &FeatureSet::parse("vb,pp").unwrap()).unwrap()
    }

    #[test]
    fn exclusive_support_gives_certain_assignment() {
        let c = corpus();
        // types are [pp, vb]; relation 2 is the only one that can emit vb "x" (id 0)
        let est = PointEstimate::from_weights(3, vec![1, 2], 1.0, |r, f, v| match (r, f, v) {
            (2, 1, _) => 1.0,
            (_, 1, 0) => 0.0,
            _ => 1.0,
        });
        let props = sentence_proportions(&est, &c, 5, 50, 1).unwrap();
        assert_eq!(props[0][0][2], 1.0);
        for doc in &props {
            for p in doc {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_is_sorted_truncated_and_rendered() {
        let c = corpus();
        let est = PointEstimate::from_weights(2, vec![1, 2], 0.5, |_, _, _| 1.0);
        let rep = rank_sentences(
            &est,
            &c,
            &ReportConfig {
                top_k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.relations.len(), 2);
        for cluster in &rep.relations {
            assert!(cluster.sentences.len() <= 2);
            for w in cluster.sentences.windows(2) {
                let ord = w[1]
                    .proportion
                    .partial_cmp(&w[0].proportion)
                    .unwrap()
                    .then_with(|| w[0].document.cmp(&w[1].document))
                    .then_with(|| w[0].sentence.cmp(&w[1].sentence));
                assert_ne!(ord, Ordering::Greater);
            }
        }
        let full = rank_sentences(&est, &c, &ReportConfig::default()).unwrap();
        let all: Vec<&RankedSentence> = full.relations.iter().flat_map(|c| &c.sentences).collect();
        let b0 = all
            .iter()
            .find(|s| s.document == "b" && s.sentence == 0)
            .unwrap();
        assert_eq!(b0.features, "pp=of / vb=x");
        let a = all.iter().find(|s| s.document == "a").unwrap();
        assert_eq!(a.features, "vb=y / vb=y");
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let c = corpus();
        let est =
            PointEstimate::from_weights(3, vec![1, 2], 0.2, |r, _, v| 1.0 + (r * 2 + v) as f64);
        let cfg = ReportConfig::default();
        let a = rank_sentences(&est, &c, &cfg).unwrap();
        assert_eq!(a, rank_sentences(&est, &c, &cfg).unwrap());
        let mut reversed = c.clone();
        reversed.documents.reverse();
        assert_eq!(a, rank_sentences(&est, &reversed, &cfg).unwrap());
    }
}
