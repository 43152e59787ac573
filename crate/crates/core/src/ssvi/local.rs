use crate::assignment::{run_chain, DocAssignment, SentenceLikelihoods};
use crate::corpus::{Document, Sentence};
use crate::error::NumericalError;
use crate::numerics::{digamma_unchecked, log_gamma_unchecked, Rng};

use super::model::VariationalModel;

/// Read-only view of a model with `ψ(Λ_{rf})` precomputed, shared by all
/// chains of one iteration.
pub struct ChainContext<'a> {
    model: &'a VariationalModel,
    psi_totals: Vec<f64>,
}

impl<'a> ChainContext<'a> {
    pub fn new(model: &'a VariationalModel) -> Self {
        ChainContext {
            model,
            psi_totals: model.digamma_row_totals(),
        }
    }

    pub fn model(&self) -> &VariationalModel {
        self.model
    }

    /// `E_q[log β_{rfv}] = ψ(λ_{rfv}) − ψ(Λ_{rf})`.
    #[inline]
    pub fn expected_log_beta(&self, r: usize, f: usize, v: usize) -> f64 {
        digamma_unchecked(self.model.lambda(r, f, v))
            - self.psi_totals[r * self.model.num_types() + f]
    }

    /// `Σ_{f,v} N_{fv} [ψ(λ_{rfv}) − ψ(Λ_{rf})]` for every r, written into `out`.
    pub fn sentence_log_likelihood(&self, sentence: &Sentence, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (f, v, n) in sentence.entries() {
            for (r, o) in out.iter_mut().enumerate() {
                *o += n as f64 * self.expected_log_beta(r, f, v as usize);
            }
        }
    }

    fn document_likelihoods(
        &self,
        doc: &Document,
        doc_index: usize,
    ) -> Result<SentenceLikelihoods, NumericalError> {
        let r_count = self.model.num_relations();
        let mut rows = vec![0.0; doc.sentences.len() * r_count];
        for (i, s) in doc.sentences.iter().enumerate() {
            self.sentence_log_likelihood(s, &mut rows[i * r_count..(i + 1) * r_count]);
        }
        SentenceLikelihoods::from_log(r_count, rows, doc_index)
    }
}

/// Unnormalized `q*(z_{do} = r | z_d^{−o})` for every r.
///
/// `assignment` must already have sentence `o` removed. Weights are formed in
/// log space and exponentiated after subtracting the maximum, so the largest
/// weight is exactly 1.
pub fn gibbs_conditional(
    model: &VariationalModel,
    assignment: &DocAssignment,
    doc: &Document,
    doc_index: usize,
    o: usize,
) -> Result<Vec<f64>, NumericalError> {
    debug_assert!(assignment.relation(o).is_none());
    let ctx = ChainContext::new(model);
    conditional_with_context(&ctx, assignment, doc, doc_index, o)
}

pub fn conditional_with_context(
    ctx: &ChainContext<'_>,
    assignment: &DocAssignment,
    doc: &Document,
    doc_index: usize,
    o: usize,
) -> Result<Vec<f64>, NumericalError> {
    let model = ctx.model();
    let mut log_w = vec![0.0; model.num_relations()];
    ctx.sentence_log_likelihood(&doc.sentences[o], &mut log_w);
    for (r, lw) in log_w.iter_mut().enumerate() {
        *lw += (assignment.occupancy()[r] as f64 + model.alpha()).ln();
        if !lw.is_finite() {
            return Err(NumericalError::NonFiniteWeight {
                doc: doc_index,
                sentence: o,
                relation: r,
            });
        }
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(log_w.into_iter().map(|x| (x - max).exp()).collect())
}

/// Output of one document's local chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainResult {
    pub doc_index: usize,
    relations: usize,
    sweeps: usize,
    /// How many estimation sweeps left sentence i in relation r, `[i · R + r]`.
    hits: Vec<u32>,
    /// `O_{dr}` after each estimation sweep.
    pub occupancy_snapshots: Vec<Vec<u32>>,
}

impl ChainResult {
    /// Fraction of estimation sweeps in which sentence `i` sat in relation `r`.
    pub fn assignment_frequency(&self, i: usize, r: usize) -> f64 {
        self.hits[i * self.relations + r] as f64 / self.sweeps as f64
    }

    /// `N̂_{drfv} = (1/S′) Σ_{s′} N^{(s′)}_{drfv}` as `(f, v, r, value)` entries.
    pub fn expected_counts<'d>(
        &'d self,
        doc: &'d Document,
    ) -> impl Iterator<Item = (usize, u32, usize, f64)> + 'd {
        doc.sentences.iter().enumerate().flat_map(move |(i, s)| {
            (0..self.relations)
                .filter(move |&r| self.hits[i * self.relations + r] > 0)
                .flat_map(move |r| {
                    let freq = self.assignment_frequency(i, r);
                    s.entries().map(move |(f, v, n)| (f, v, r, n as f64 * freq))
                })
        })
    }
}

/// Local Gibbs chain for one document under `q(β)`.
///
/// Sentences are initialized sequentially from the conditional, then `burnin`
/// sweeps are discarded and `sweeps` sweeps are recorded.
pub fn run_local_chain(
    ctx: &ChainContext<'_>,
    doc: &Document,
    doc_index: usize,
    burnin: usize,
    sweeps: usize,
    rng: &mut Rng,
) -> Result<ChainResult, NumericalError> {
    let model = ctx.model();
    let r_count = model.num_relations();
    let lik = ctx.document_likelihoods(doc, doc_index)?;
    let mut hits = vec![0u32; doc.sentences.len() * r_count];
    let mut occupancy_snapshots = Vec::with_capacity(sweeps);
    run_chain(&lik, model.alpha(), burnin, sweeps, rng, |state| {
        for (i, z) in state.assignments().enumerate() {
            hits[i * r_count + z.expect("every sentence assigned after a sweep")] += 1;
        }
        occupancy_snapshots.push(state.occupancy().to_vec());
    });
    Ok(ChainResult {
        doc_index,
        relations: r_count,
        sweeps,
        hits,
        occupancy_snapshots,
    })
}

/// Minibatch sufficient statistics `N̂^M_{rfv} = Σ_{d∈M} N̂_{drfv}`, sorted by (f, v, r).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinibatchCounts {
    entries: Vec<(usize, u32, usize, f64)>,
}

impl MinibatchCounts {
    /// Sums chain results in the order given; callers pass them in document order.
    pub fn accumulate<'a>(
        parts: impl IntoIterator<Item = (&'a ChainResult, &'a Document)>,
    ) -> Self {
        let mut entries: Vec<(usize, u32, usize, f64)> = Vec::new();
        for (result, doc) in parts {
            entries.extend(result.expected_counts(doc));
        }
        entries.sort_by_key(|&(f, v, r, _)| (f, v, r));
        let mut merged: Vec<(usize, u32, usize, f64)> = Vec::with_capacity(entries.len());
        for (f, v, r, n) in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1, last.2) == (f, v, r) => last.3 += n,
                _ => merged.push((f, v, r, n)),
            }
        }
        MinibatchCounts { entries: merged }
    }

    pub fn from_entries(mut entries: Vec<(usize, u32, usize, f64)>) -> Self {
        entries.sort_by_key(|&(f, v, r, _)| (f, v, r));
        MinibatchCounts { entries }
    }

    pub fn entries(&self) -> &[(usize, u32, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, f: usize, v: u32, r: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(f, v, r), |&(f, v, r, _)| (f, v, r))
            .map(|i| self.entries[i].3)
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The natural gradient `ĝ_{rfv} = (D/S)·N̂^M_{rfv} + η_f − λ_{rfv}`.
///
/// Only entries touched by the minibatch are stored; every other entry has
/// gradient `η_f − λ_{rfv}`, which the `π` rescaling applies implicitly.
#[derive(Clone, Debug)]
pub struct NaturalGradient<'a> {
    model: &'a VariationalModel,
    scale: f64,
    counts: &'a MinibatchCounts,
}

pub fn natural_gradient<'a>(
    model: &'a VariationalModel,
    counts: &'a MinibatchCounts,
    corpus_size: usize,
    minibatch_size: usize,
) -> NaturalGradient<'a> {
    NaturalGradient {
        model,
        scale: corpus_size as f64 / minibatch_size as f64,
        counts,
    }
}

impl NaturalGradient<'_> {
    pub fn value(&self, r: usize, f: usize, v: usize) -> f64 {
        self.scale * self.counts.get(f, v as u32, r) + self.model.eta()[f]
            - self.model.lambda(r, f, v)
    }

    /// `(f, v, r, ĝ)` for the explicitly stored entries.
    pub fn explicit(&self) -> impl Iterator<Item = (usize, u32, usize, f64)> + '_ {
        self.counts
            .entries()
            .iter()
            .map(|&(f, v, r, _)| (f, v, r, self.value(r, f, v as usize)))
    }
}

/// `λ ← λ + ρ ĝ`, realized sparsely. Returns the rate used.
pub fn ssvi_step(
    model: &mut VariationalModel,
    counts: &MinibatchCounts,
    corpus_size: usize,
    minibatch_size: usize,
    rho: f64,
) -> f64 {
    let scale = corpus_size as f64 / minibatch_size as f64;
    model.apply_step(
        rho,
        counts
            .entries()
            .iter()
            .map(|&(f, v, r, n)| (f, v, r, scale * n)),
    );
    rho
}

/// Minibatch estimate of the λ-dependent part of the ELBO.
///
/// The data term `Σ_{d∈M} Σ N̂_{drfv} E[log β_{rfv}]` is scaled by `D/S`; the
/// prior and entropy terms, which carry a `1/D` per document, sum to one copy
/// of `Σ_{r,f} [Σ_v (η_f − λ_{rfv}) E[log β_{rfv}] + Σ_v log Γ(λ_{rfv}) − log Γ(Λ_{rf})]`.
pub fn elbo_proxy(
    ctx: &ChainContext<'_>,
    counts: &MinibatchCounts,
    corpus_size: usize,
    minibatch_size: usize,
) -> f64 {
    let model = ctx.model();
    let scale = corpus_size as f64 / minibatch_size as f64;
    let data: f64 = counts
        .entries()
        .iter()
        .map(|&(f, v, r, n)| n * ctx.expected_log_beta(r, f, v as usize))
        .sum();
    let mut global = 0.0;
    for r in 0..model.num_relations() {
        for f in 0..model.num_types() {
            let eta = model.eta()[f];
            let mut row = 0.0;
            for v in 0..model.vocab_sizes()[f] {
                let lambda = model.lambda(r, f, v);
                row +=
                    (eta - lambda) * ctx.expected_log_beta(r, f, v) + log_gamma_unchecked(lambda);
            }
            global += row - log_gamma_unchecked(model.row_total(r, f));
        }
    }
    scale * data + global
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{child_rng, digamma};

    fn doc_with(per_sentence: Vec<Vec<Vec<u32>>>) -> Document {
        Document {
            id: "d".into(),
            sentences: per_sentence.into_iter().map(Sentence::from_ids).collect(),
        }
    }

    #[test]
    fn symmetric_model_gives_uniform_weights() {
        let m = VariationalModel::new(4, vec![3], vec![0.2], 0.5).unwrap();
        let doc = doc_with(vec![vec![vec![0, 2, 2]]]);
        let a = DocAssignment::new(1, 4);
        let w = gibbs_conditional(&m, &a, &doc, 0, 0).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn hand_evaluated_weight_ratio_is_e() {
        // lambda_1 = (2, 1), lambda_2 = (1, 2): Λ = 3 for both relations
        let m = VariationalModel::from_materialized(2, vec![2], vec![1.0], 1.0, 0, |r, _| {
            vec![(r as u32, 2.0)].into_iter()
        })
        .unwrap();
        assert_eq!(m.lambda(0, 0, 0), 2.0);
        assert_eq!(m.lambda(1, 0, 0), 1.0);
        assert_eq!(m.row_total(0, 0), 3.0);
        let doc = doc_with(vec![vec![vec![0]]]);
        let a = DocAssignment::new(1, 2);
        let w = gibbs_conditional(&m, &a, &doc, 0, 0).unwrap();
        let expected = (digamma(2.0).unwrap() - digamma(1.0).unwrap()).exp();
        assert!((w[0] / w[1] - std::f64::consts::E).abs() < 1e-12);
        assert!((w[0] / w[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn single_relation_chain_returns_raw_counts() {
        let m = VariationalModel::new(1, vec![4, 2], vec![0.1, 0.1], 1.0).unwrap();
        let doc = doc_with(vec![vec![vec![0, 0, 3], vec![1]], vec![vec![2], vec![]]]);
        let ctx = ChainContext::new(&m);
        let res = run_local_chain(&ctx, &doc, 0, 3, 7, &mut child_rng(1, 0, "d")).unwrap();
        let counts = MinibatchCounts::accumulate([(&res, &doc)]);
        assert_eq!(
            counts.entries(),
            &[
                (0, 0, 0, 2.0),
                (0, 2, 0, 1.0),
                (0, 3, 0, 1.0),
                (1, 1, 0, 1.0)
            ]
        );
        assert_eq!(res.occupancy_snapshots, vec![vec![2]; 7]);
    }

    #[test]
    fn chain_is_deterministic_under_seed() {
        let m = VariationalModel::new(3, vec![5], vec![0.3], 0.7).unwrap();
        let doc = doc_with(vec![vec![vec![0, 1]], vec![vec![4]], vec![vec![2, 2]]]);
        let ctx = ChainContext::new(&m);
        let a = run_local_chain(&ctx, &doc, 0, 2, 10, &mut child_rng(5, 1, "d")).unwrap();
        let b = run_local_chain(&ctx, &doc, 0, 2, 10, &mut child_rng(5, 1, "d")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_direct_formula() {
        let m = VariationalModel::new(1, vec![1], vec![0.1], 1.0).unwrap();
        let empty = MinibatchCounts::default();
        assert_eq!(natural_gradient(&m, &empty, 5, 5).value(0, 0, 0), 0.0);
        let counts = MinibatchCounts::from_entries(vec![(0, 0, 0, 3.0)]);
        assert!((natural_gradient(&m, &counts, 5, 5).value(0, 0, 0) - 3.0).abs() < 1e-15);

        let m = VariationalModel::from_materialized(1, vec![1], vec![0.5], 1.0, 0, |_, _| {
            vec![(0u32, 4.5)].into_iter()
        })
        .unwrap();
        let counts = MinibatchCounts::from_entries(vec![(0, 0, 0, 2.0)]);
        assert!((natural_gradient(&m, &counts, 100, 10).value(0, 0, 0) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn elbo_proxy_vanishes_for_single_value_vocabulary() {
        let m = VariationalModel::from_materialized(1, vec![1], vec![0.3], 1.0, 0, |_, _| {
            vec![(0u32, 2.7)].into_iter()
        })
        .unwrap();
        let ctx = ChainContext::new(&m);
        let counts = MinibatchCounts::from_entries(vec![(0, 0, 0, 5.0)]);
        assert!(elbo_proxy(&ctx, &counts, 10, 2).abs() < 1e-12);
    }
}
