//! Per-document relation assignments and the fixed-likelihood sentence chain
//! shared by the SSVI local step and the evaluation samplers.
//!
//! With the global parameters held fixed, a sentence's likelihood under each
//! relation does not change between sweeps, so it is computed once per chain
//! and each Gibbs step only multiplies it by `O_{dr} + α`.

use crate::error::NumericalError;
use crate::numerics::{sample_with_total, Rng};

const UNASSIGNED: usize = usize::MAX;

/// Relation assignments `z` for one document plus the occupancy counts `O_{dr}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocAssignment {
    z: Vec<usize>,
    occupancy: Vec<u32>,
    total: u32,
}

impl DocAssignment {
    /// All `sentences` start unassigned.
    pub fn new(sentences: usize, relations: usize) -> Self {
        DocAssignment {
            z: vec![UNASSIGNED; sentences],
            occupancy: vec![0; relations],
            total: 0,
        }
    }

    pub fn num_sentences(&self) -> usize {
        self.z.len()
    }

    pub fn relation(&self, sentence: usize) -> Option<usize> {
        match self.z[sentence] {
            UNASSIGNED => None,
            r => Some(r),
        }
    }

    /// `O_{dr}` for every r.
    pub fn occupancy(&self) -> &[u32] {
        &self.occupancy
    }

    /// `O_d`, the number of currently assigned sentences.
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn assign(&mut self, sentence: usize, relation: usize) {
        debug_assert_eq!(self.z[sentence], UNASSIGNED);
        self.z[sentence] = relation;
        self.occupancy[relation] += 1;
        self.total += 1;
    }

    /// Removes the sentence from the occupancy counts and returns its old relation.
    pub fn unassign(&mut self, sentence: usize) -> Option<usize> {
        let r = self.relation(sentence)?;
        self.z[sentence] = UNASSIGNED;
        self.occupancy[r] -= 1;
        self.total -= 1;
        Some(r)
    }

    pub fn assignments(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        (0..self.z.len()).map(|i| self.relation(i))
    }
}

/// Per-sentence likelihood rows over relations, each rescaled so its largest
/// entry is 1.
#[derive(Clone, Debug)]
pub(crate) struct SentenceLikelihoods {
    relations: usize,
    rows: Vec<f64>,
}

impl SentenceLikelihoods {
    /// Builds the rows from log-likelihoods laid out sentence-major (`N × R`).
    ///
    /// `-inf` entries are allowed (zero likelihood) as long as some relation in
    /// the row is finite. `doc` only labels errors.
    pub(crate) fn from_log(
        relations: usize,
        mut log_rows: Vec<f64>,
        doc: usize,
    ) -> Result<Self, NumericalError> {
        for (i, row) in log_rows.chunks_mut(relations).enumerate() {
            let bad = row.iter().position(|&x| x.is_nan() || x == f64::INFINITY);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if bad.is_some() || max == f64::NEG_INFINITY {
                return Err(NumericalError::NonFiniteWeight {
                    doc,
                    sentence: i,
                    relation: bad.unwrap_or(0),
                });
            }
            for x in row.iter_mut() {
                *x = (*x - max).exp();
            }
        }
        Ok(SentenceLikelihoods {
            relations,
            rows: log_rows,
        })
    }

    fn row(&self, sentence: usize) -> &[f64] {
        &self.rows[sentence * self.relations..(sentence + 1) * self.relations]
    }

    pub(crate) fn num_sentences(&self) -> usize {
        self.rows.len() / self.relations
    }
}

/// Runs the collapsed-θ sentence chain.
///
/// Sentences are initialized in order, each drawn from its conditional given
/// the earlier ones. Then `burnin` sweeps run, followed by `sweeps` sweeps
/// after each of which `on_sweep` sees the state.
pub(crate) fn run_chain(
    lik: &SentenceLikelihoods,
    alpha: f64,
    burnin: usize,
    sweeps: usize,
    rng: &mut Rng,
    mut on_sweep: impl FnMut(&DocAssignment),
) -> DocAssignment {
    let relations = lik.relations;
    let n = lik.num_sentences();
    let mut state = DocAssignment::new(n, relations);
    let mut weights = vec![0.0; relations];

    let mut draw = |state: &mut DocAssignment, i: usize, rng: &mut Rng| {
        let row = lik.row(i);
        let mut total = 0.0;
        for r in 0..relations {
            let w = (state.occupancy[r] as f64 + alpha) * row[r];
            weights[r] = w;
            total += w;
        }
        let r = sample_with_total(rng, &weights, total);
        state.assign(i, r);
    };

    for i in 0..n {
        draw(&mut state, i, rng);
    }
    for sweep in 0..burnin + sweeps {
        for i in 0..n {
            state.unassign(i);
            draw(&mut state, i, rng);
        }
        debug_assert_eq!(state.total as usize, n);
        if sweep >= burnin {
            on_sweep(&state);
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::root_rng;

    #[test]
    fn assign_and_unassign_keep_counts() {
        let mut a = DocAssignment::new(3, 2);
        a.assign(0, 1);
        a.assign(1, 1);
        a.assign(2, 0);
        assert_eq!(a.occupancy(), &[1, 2]);
        assert_eq!(a.unassign(1), Some(1));
        assert_eq!(a.occupancy(), &[1, 1]);
        assert_eq!(a.total(), 2);
        assert_eq!(a.unassign(1), None);
    }

    #[test]
    fn chain_conserves_occupancy_every_sweep() {
        let log_rows = vec![
            0.0, -1.0, -2.0, 0.5, 0.0, 0.0, -3.0, 1.0, 2.0, 0.0, 0.0, 0.0,
        ];
        let lik = SentenceLikelihoods::from_log(3, log_rows, 0).unwrap();
        let mut rng = root_rng(11);
        let mut seen = 0;
        let end = run_chain(&lik, 0.3, 2, 20, &mut rng, |s| {
            seen += 1;
            assert_eq!(s.occupancy().iter().sum::<u32>(), 4);
        });
        assert_eq!(seen, 20);
        assert_eq!(end.total(), 4);
    }

    #[test]
    fn non_finite_log_likelihood_names_location() {
        let err = SentenceLikelihoods::from_log(2, vec![0.0, 0.0, f64::NAN, 1.0], 7).unwrap_err();
        assert_eq!(
            err,
            NumericalError::NonFiniteWeight {
                doc: 7,
                sentence: 1,
                relation: 0
            }
        );
    }
}
