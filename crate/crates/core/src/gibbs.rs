//! Fully collapsed Gibbs sampler over sentence relations, with both the
//! relation/feature distributions and the document mixtures integrated out.

use log::info;
use serde::{Deserialize, Serialize};

use crate::assignment::DocAssignment;
use crate::corpus::{Corpus, Sentence};
use crate::error::{ConfigError, Error, NumericalError};
use crate::evaluation::{perplexity, PointEstimate};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::numerics::{root_rng, sample_with_total, Rng};
use crate::ssvi::{EvalSchedule, VariationalModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub relations: usize,
    /// `η_f`, shared by every feature type and held fixed.
    pub eta: f64,
    pub alpha: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            relations: 10,
            eta: 0.1,
            alpha: 0.1,
            sweeps: 100,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.relations == 0 {
            return Err(ConfigError::ZeroRelations);
        }
        for (name, value) in [("eta", self.eta), ("alpha", self.alpha)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// Relation assignments for the whole corpus plus the collapsed counts.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    relations: usize,
    vocab_sizes: Vec<usize>,
    eta: Vec<f64>,
    alpha: f64,
    /// `M_{rfv}` per type, `[v · R + r]`.
    counts: Vec<Vec<u32>>,
    /// `M_{rf}`, `[r · F + f]`.
    totals: Vec<u64>,
    assignments: Vec<DocAssignment>,
}

impl GibbsState {
    /// Empty counts with every sentence unassigned.
    pub fn new(corpus: &Corpus, relations: usize, eta: f64, alpha: f64) -> Self {
        let vocab_sizes = corpus.vocab.sizes();
        GibbsState {
            relations,
            eta: vec![eta; vocab_sizes.len()],
            alpha,
            counts: vocab_sizes
                .iter()
                .map(|&w| vec![0; w * relations])
                .collect(),
            totals: vec![0; relations * vocab_sizes.len()],
            assignments: corpus
                .documents
                .iter()
                .map(|d| DocAssignment::new(d.sentences.len(), relations))
                .collect(),
            vocab_sizes,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.relations
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `M_{rfv}`.
    pub fn count(&self, r: usize, f: usize, v: usize) -> u32 {
        self.counts[f][v * self.relations + r]
    }

    /// `M_{rf}`.
    pub fn total(&self, r: usize, f: usize) -> u64 {
        self.totals[r * self.vocab_sizes.len() + f]
    }

    pub fn assignment(&self, d: usize) -> &DocAssignment {
        &self.assignments[d]
    }

    /// Current relation of every sentence, `out[d][i]`; unassigned sentences are `None`.
    pub fn labels(&self) -> Vec<Vec<Option<usize>>> {
        self.assignments
            .iter()
            .map(|a| a.assignments().collect())
            .collect()
    }

    fn add(&mut self, sentence: &Sentence, r: usize) {
        let f_count = self.vocab_sizes.len();
        for (f, v, n) in sentence.entries() {
            self.counts[f][v as usize * self.relations + r] += n;
            self.totals[r * f_count + f] += n as u64;
        }
    }

    fn remove(&mut self, sentence: &Sentence, r: usize) -> Result<(), NumericalError> {
        let f_count = self.vocab_sizes.len();
        for (f, v, n) in sentence.entries() {
            let c = &mut self.counts[f][v as usize * self.relations + r];
            let t = &mut self.totals[r * f_count + f];
            if *c < n || *t < n as u64 {
                return Err(NumericalError::CountInvariant(format!(
                    "removing {n} of value {v} (type {f}) from relation {r} holding {c}"
                )));
            }
            *c -= n;
            *t -= n as u64;
        }
        Ok(())
    }

    /// Recounts `M` from the assignments and compares with the incremental counts.
    pub fn verify_counts(&self, corpus: &Corpus) -> Result<(), NumericalError> {
        let mut fresh = GibbsState::new(corpus, self.relations, 1.0, 1.0);
        for (d, doc) in corpus.documents.iter().enumerate() {
            for (i, s) in doc.sentences.iter().enumerate() {
                if let Some(r) = self.assignments[d].relation(i) {
                    fresh.add(s, r);
                }
            }
        }
        if fresh.counts != self.counts || fresh.totals != self.totals {
            return Err(NumericalError::CountInvariant(
                "incremental counts differ from a recount".to_string(),
            ));
        }
        Ok(())
    }

    /// `β̄_{rfv} = (M_{rfv} + η_f) / (M_{rf} + W_f η_f)`.
    pub fn point_estimate(&self) -> PointEstimate {
        PointEstimate::from_weights(
            self.relations,
            self.vocab_sizes.clone(),
            self.alpha,
            |r, f, v| self.count(r, f, v) as f64 + self.eta[f],
        )
    }

    /// The state as a variational model with `λ_{rfv} = M_{rfv} + η_f`, so it
    /// shares the model file format.
    pub fn to_variational(&self, iteration: usize) -> VariationalModel {
        VariationalModel::from_materialized(
            self.relations,
            self.vocab_sizes.clone(),
            self.eta.clone(),
            self.alpha,
            iteration,
            |r, f| {
                let eta = self.eta[f];
                (0..self.vocab_sizes[f]).filter_map(move |v| {
                    let m = self.count(r, f, v);
                    (m > 0).then_some((v as u32, m as f64 + eta))
                })
            },
        )
        .expect("state holds valid hyperparameters")
    }
}

/// Unnormalized `p(z_{do} = r | z^{−do}, w)` for every r.
///
/// Sentence `o` of document `d` must already be removed from all counts.
/// A value repeated `n` times in the sentence contributes the rising product
/// `Π_{j<n} (M_{rfv} + η_f + j)`, and the type's `N` tokens divide by
/// `Π_{j<N} (M_{rf} + W_f η_f + j)`. Weights are scaled so the largest is 1.
pub fn gibbs_full_conditional(
    state: &GibbsState,
    corpus: &Corpus,
    d: usize,
    o: usize,
) -> Result<Vec<f64>, NumericalError> {
    let sentence = &corpus.documents[d].sentences[o];
    let occupancy = state.assignments[d].occupancy();
    let mut log_w = vec![0.0; state.relations];
    log_weights(state, sentence, occupancy, &mut log_w);
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(state.relations);
    for (r, x) in log_w.into_iter().enumerate() {
        let w = (x - max).exp();
        if !w.is_finite() {
            return Err(NumericalError::NonFiniteWeight {
                doc: d,
                sentence: o,
                relation: r,
            });
        }
        out.push(w);
    }
    Ok(out)
}

fn log_weights(state: &GibbsState, sentence: &Sentence, occupancy: &[u32], out: &mut [f64]) {
    let f_count = state.vocab_sizes.len();
    for (r, o) in out.iter_mut().enumerate() {
        let mut x = (occupancy[r] as f64 + state.alpha).ln();
        for f in 0..f_count {
            let entries = sentence.features(f);
            if entries.is_empty() {
                continue;
            }
            let eta = state.eta[f];
            let row = &state.counts[f];
            for &(v, n) in entries {
                let base = row[v as usize * state.relations + r] as f64 + eta;
                for j in 0..n {
                    x += (base + j as f64).ln();
                }
            }
            let base = state.totals[r * f_count + f] as f64 + state.vocab_sizes[f] as f64 * eta;
            for j in 0..sentence.type_tokens(f) {
                x -= (base + j as f64).ln();
            }
        }
        *o = x;
    }
}

/// Sequential initialization followed by systematic sweeps in document order.
pub struct GibbsSampler<'c> {
    corpus: &'c Corpus,
    state: GibbsState,
    rng: Rng,
    sweeps_done: usize,
    log_w: Vec<f64>,
}

impl<'c> GibbsSampler<'c> {
    /// Initializes every sentence in corpus order from its conditional given
    /// the sentences placed before it.
    pub fn new(corpus: &'c Corpus, config: &GibbsConfig) -> Result<Self, Error> {
        config.validate()?;
        if let Some(f) = corpus.vocab.sizes().iter().position(|&w| w == 0) {
            return Err(
                ConfigError::Other(format!("feature type {f} has an empty vocabulary")).into(),
            );
        }
        let mut sampler = GibbsSampler {
            corpus,
            state: GibbsState::new(corpus, config.relations, config.eta, config.alpha),
            rng: root_rng(config.seed),
            sweeps_done: 0,
            log_w: vec![0.0; config.relations],
        };
        for d in 0..corpus.num_documents() {
            for o in 0..corpus.documents[d].sentences.len() {
                sampler.resample(d, o)?;
            }
        }
        Ok(sampler)
    }

    fn resample(&mut self, d: usize, o: usize) -> Result<(), NumericalError> {
        let sentence = &self.corpus.documents[d].sentences[o];
        if let Some(r) = self.state.assignments[d].unassign(o) {
            self.state.remove(sentence, r)?;
        }
        log_weights(
            &self.state,
            sentence,
            self.state.assignments[d].occupancy(),
            &mut self.log_w,
        );
        let max = self.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (r, x) in self.log_w.iter_mut().enumerate() {
            *x = (*x - max).exp();
            if !x.is_finite() {
                return Err(NumericalError::NonFiniteWeight {
                    doc: d,
                    sentence: o,
                    relation: r,
                });
            }
            total += *x;
        }
        let r = sample_with_total(&mut self.rng, &self.log_w, total);
        self.state.assignments[d].assign(o, r);
        self.state.add(sentence, r);
        Ok(())
    }

    /// One pass over every sentence of every document.
    pub fn sweep(&mut self) -> Result<(), NumericalError> {
        for d in 0..self.corpus.num_documents() {
            for o in 0..self.corpus.documents[d].sentences.len() {
                self.resample(d, o)?;
            }
        }
        self.sweeps_done += 1;
        Ok(())
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    pub fn state(&self) -> &GibbsState {
        &self.state
    }

    pub fn into_state(self) -> GibbsState {
        self.state
    }
}

#[derive(Clone, Debug)]
pub struct GibbsOutput {
    pub state: GibbsState,
    pub metrics: MetricsLog,
}

/// Runs `config.sweeps` sweeps, logging `D` document sweeps per sweep and
/// eval perplexity on the schedule in `eval`.
pub fn run_gibbs(
    corpus: &Corpus,
    config: &GibbsConfig,
    eval: Option<EvalSchedule<'_>>,
) -> Result<GibbsOutput, Error> {
    if let Some(e) = &eval {
        e.protocol.validate()?;
    }
    let mut sampler = GibbsSampler::new(corpus, config)?;
    let mut metrics = MetricsLog::new(corpus.vocab.features().names());
    let evaluate = |state: &GibbsState, sweep: usize| -> Result<Option<f64>, Error> {
        let Some(e) = &eval else { return Ok(None) };
        let due =
            sweep == 0 || sweep == config.sweeps || (e.every > 0 && sweep.is_multiple_of(e.every));
        if !due {
            return Ok(None);
        }
        let p = perplexity(&state.point_estimate(), e.corpus, &e.protocol)?;
        if !p.perplexity.is_finite() {
            return Err(NumericalError::NonFiniteMetric {
                metric: "eval perplexity",
                iteration: sweep,
            }
            .into());
        }
        Ok(Some(p.perplexity))
    };
    let row = |sweep: usize, perplexity: Option<f64>| MetricsRow {
        iteration: sweep,
        rho: None,
        elbo_proxy: None,
        document_sweeps_cumulative: (sweep * corpus.num_documents()) as u64,
        burnin_sweeps_cumulative: 0,
        eval_perplexity: perplexity,
        alpha: config.alpha,
        alpha_grad: None,
        eta: vec![config.eta; corpus.num_types()],
        eta_grad: vec![None; corpus.num_types()],
    };
    metrics.rows.push(row(0, evaluate(sampler.state(), 0)?));
    for sweep in 1..=config.sweeps {
        sampler.sweep()?;
        let p = evaluate(sampler.state(), sweep)?;
        if sweep % 10 == 0 || sweep == config.sweeps {
            info!(
                "sweep {sweep}/{}: perplexity {}",
                config.sweeps,
                p.map_or("-".to_string(), |x| format!("{x:.4}"))
            );
        }
        metrics.rows.push(row(sweep, p));
    }
    Ok(GibbsOutput {
        state: sampler.into_state(),
        metrics,
    })
}
