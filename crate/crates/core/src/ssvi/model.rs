use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::ConfigError;
use crate::numerics::{self, digamma_unchecked};

/// Below this the scaled pseudocounts are folded back into `π = 1`.
const RENORMALIZE_BELOW: f64 = 1e-100;
/// Entries whose materialized pseudocount falls below `PRUNE_FRACTION · η_f` are dropped.
const PRUNE_FRACTION: f64 = 1e-12;

/// Variational Dirichlet parameters `λ_{rfv}` in scaled-pseudocount form.
///
/// `λ_{rfv} = π · scaled(r, f, v) + η_f`. A stochastic step
/// `λ ← (1 − ρ)λ + ρ(N̂ + η)` only has to shrink `π` and add `ρ N̂ / π` to
/// the entries the minibatch touched; every untouched entry decays implicitly.
///
/// Pseudocounts are kept per feature type in a relation-minor array
/// (`[v · R + r]`); a zero entry means nothing is stored for it.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalModel {
    relations: usize,
    vocab_sizes: Vec<usize>,
    eta: Vec<f64>,
    alpha: f64,
    scaled: Vec<Vec<f64>>,
    /// `Σ_v scaled(r, f, v)`, laid out `[r · F + f]`.
    scaled_totals: Vec<f64>,
    pi: f64,
    t: usize,
}

/// How the pseudocounts are seeded before the first step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelInit {
    /// `λ = η` everywhere.
    Prior,
    /// `λ = η + g` with `g ~ Gamma(shape, 1/shape)` scaled by the type's
    /// token count over `R · W_f`.
    Gamma { shape: f64 },
}

impl Default for ModelInit {
    fn default() -> Self {
        ModelInit::Gamma { shape: 100.0 }
    }
}

impl VariationalModel {
    /// A model sitting at the prior: no pseudocounts, `π = 1`, `t = 0`.
    pub fn new(
        relations: usize,
        vocab_sizes: Vec<usize>,
        eta: Vec<f64>,
        alpha: f64,
    ) -> Result<Self, ConfigError> {
        if relations == 0 {
            return Err(ConfigError::ZeroRelations);
        }
        if eta.len() != vocab_sizes.len() {
            return Err(ConfigError::Other(format!(
                "{} eta values for {} feature types",
                eta.len(),
                vocab_sizes.len()
            )));
        }
        if let Some(f) = vocab_sizes.iter().position(|&w| w == 0) {
            return Err(ConfigError::Other(format!(
                "feature type {f} has an empty vocabulary"
            )));
        }
        for &e in &eta {
            if !(e > 0.0 && e.is_finite()) {
                return Err(ConfigError::NonPositive {
                    name: "eta",
                    value: e,
                });
            }
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ConfigError::NonPositive {
                name: "alpha",
                value: alpha,
            });
        }
        let scaled = vocab_sizes
            .iter()
            .map(|&w| vec![0.0; w * relations])
            .collect();
        let scaled_totals = vec![0.0; relations * vocab_sizes.len()];
        Ok(VariationalModel {
            relations,
            vocab_sizes,
            eta,
            alpha,
            scaled,
            scaled_totals,
            pi: 1.0,
            t: 0,
        })
    }

    /// A model over `corpus`'s vocabulary, seeded per `init` from the stream for `seed`.
    pub fn initialize(
        corpus: &Corpus,
        relations: usize,
        eta: Vec<f64>,
        alpha: f64,
        init: ModelInit,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let mut model = VariationalModel::new(relations, corpus.vocab.sizes(), eta, alpha)?;
        if let ModelInit::Gamma { shape } = init {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(ConfigError::NonPositive {
                    name: "init shape",
                    value: shape,
                });
            }
            let gamma = Gamma::new(shape, 1.0 / shape).expect("validated shape");
            let mut rng = numerics::child_rng(seed, u64::MAX, "init");
            let f_count = model.num_types();
            let mut tokens = vec![0u64; f_count];
            for doc in &corpus.documents {
                for s in &doc.sentences {
                    for (f, t) in tokens.iter_mut().enumerate() {
                        *t += s.type_tokens(f);
                    }
                }
            }
            for (f, &n) in tokens.iter().enumerate() {
                let w = model.vocab_sizes[f];
                if w == 0 {
                    continue;
                }
                let scale = n as f64 / (relations * w) as f64;
                for v in 0..w {
                    for r in 0..relations {
                        let g = gamma.sample(&mut rng) * scale;
                        model.scaled[f][v * relations + r] = g;
                        model.scaled_totals[r * f_count + f] += g;
                    }
                }
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from materialized `λ` with `π = 1`.
    ///
    /// `lambda(r, f)` yields `(v, λ_{rfv})` for the stored entries; all others are `η_f`.
    pub fn from_materialized<'a, I>(
        relations: usize,
        vocab_sizes: Vec<usize>,
        eta: Vec<f64>,
        alpha: f64,
        t: usize,
        mut lambda: impl FnMut(usize, usize) -> I,
    ) -> Result<Self, ConfigError>
    where
        I: Iterator<Item = (u32, f64)> + 'a,
    {
        let mut model = VariationalModel::new(relations, vocab_sizes, eta, alpha)?;
        let f_count = model.num_types();
        for r in 0..relations {
            for f in 0..f_count {
                for (v, value) in lambda(r, f) {
                    if v as usize >= model.vocab_sizes[f] {
                        return Err(ConfigError::Other(format!(
                            "value id {v} out of range for type {f}"
                        )));
                    }
                    let pseudo = (value - model.eta[f]).max(0.0);
                    model.scaled[f][v as usize * relations + r] = pseudo;
                    model.scaled_totals[r * f_count + f] += pseudo;
                }
            }
        }
        model.t = t;
        Ok(model)
    }

    pub fn num_relations(&self) -> usize {
        self.relations
    }

    pub fn num_types(&self) -> usize {
        self.vocab_sizes.len()
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

    pub fn set_eta(&mut self, f: usize, value: f64) {
        assert!(value > 0.0 && value.is_finite(), "eta must stay positive");
        self.eta[f] = value;
    }

    pub fn set_alpha(&mut self, value: f64) {
        assert!(value > 0.0 && value.is_finite(), "alpha must stay positive");
        self.alpha = value;
    }

    /// The running product `π_t = Π (1 − ρ_τ)` since the last renormalization.
    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Number of steps taken.
    pub fn iteration(&self) -> usize {
        self.t
    }

    /// Materialized `λ_{rfv}`.
    #[inline]
    pub fn lambda(&self, r: usize, f: usize, v: usize) -> f64 {
        self.pi * self.scaled[f][v * self.relations + r] + self.eta[f]
    }

    /// Materialized pseudocount part `λ_{rfv} − η_f`.
    #[inline]
    pub fn pseudocount(&self, r: usize, f: usize, v: usize) -> f64 {
        self.pi * self.scaled[f][v * self.relations + r]
    }

    /// `Λ_{rf} = Σ_v λ_{rfv}` from the incrementally maintained totals.
    #[inline]
    pub fn row_total(&self, r: usize, f: usize) -> f64 {
        self.pi * self.scaled_totals[r * self.num_types() + f]
            + self.vocab_sizes[f] as f64 * self.eta[f]
    }

    /// `(v, λ_{rfv})` for every entry carrying a pseudocount, in id order.
    pub fn stored_entries(&self, r: usize, f: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let row = &self.scaled[f];
        (0..self.vocab_sizes[f]).filter_map(move |v| {
            let s = row[v * self.relations + r];
            (s > 0.0).then(|| (v as u32, self.pi * s + self.eta[f]))
        })
    }

    /// Largest relative gap between the maintained `Λ_{rf}` and a fresh sum.
    pub fn row_total_drift(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.relations {
            for f in 0..self.num_types() {
                let fresh: f64 = (0..self.vocab_sizes[f]).map(|v| self.lambda(r, f, v)).sum();
                let kept = self.row_total(r, f);
                worst = worst.max((fresh - kept).abs() / fresh.abs().max(f64::MIN_POSITIVE));
            }
        }
        worst
    }

    /// `ψ(Λ_{rf})` for all (r, f), laid out `[r · F + f]`.
    pub(crate) fn digamma_row_totals(&self) -> Vec<f64> {
        let f_count = self.num_types();
        let mut out = vec![0.0; self.relations * f_count];
        for r in 0..self.relations {
            for f in 0..f_count {
                out[r * f_count + f] = digamma_unchecked(self.row_total(r, f));
            }
        }
        out
    }

    /// Applies one stochastic natural-gradient step.
    ///
    /// `counts` yields `(f, v, r, n)` where `n` is the corpus-scaled expected
    /// count `(D/S)·N̂_{rfv}`; entries must not repeat.
    pub(crate) fn apply_step(
        &mut self,
        rho: f64,
        counts: impl IntoIterator<Item = (usize, u32, usize, f64)>,
    ) {
        debug_assert!(rho > 0.0 && rho < 1.0);
        self.pi *= 1.0 - rho;
        let f_count = self.num_types();
        let step = rho / self.pi;
        for (f, v, r, n) in counts {
            let add = step * n;
            self.scaled[f][v as usize * self.relations + r] += add;
            self.scaled_totals[r * f_count + f] += add;
        }
        self.t += 1;
        if self.pi < RENORMALIZE_BELOW {
            self.renormalize();
        }
    }

    /// Folds `π` into the stored pseudocounts, pruning negligible entries and
    /// recomputing the row totals exactly.
    pub fn renormalize(&mut self) {
        let f_count = self.num_types();
        self.scaled_totals.iter_mut().for_each(|x| *x = 0.0);
        for f in 0..f_count {
            let floor = PRUNE_FRACTION * self.eta[f];
            let row = &mut self.scaled[f];
            for (i, s) in row.iter_mut().enumerate() {
                let mut value = *s * self.pi;
                if value < floor {
                    value = 0.0;
                }
                *s = value;
                self.scaled_totals[(i % self.relations) * f_count + f] += value;
            }
        }
        self.pi = 1.0;
    }

    /// Posterior-mean `β̄_{rfv} = λ_{rfv} / Λ_{rf}` in log form, per type `[v · R + r]`.
    pub fn log_mean_beta(&self) -> Vec<Vec<f64>> {
        let r_count = self.relations;
        (0..self.num_types())
            .map(|f| {
                let totals: Vec<f64> = (0..r_count).map(|r| self.row_total(r, f).ln()).collect();
                let mut out = vec![0.0; self.vocab_sizes[f] * r_count];
                for v in 0..self.vocab_sizes[f] {
                    for r in 0..r_count {
                        out[v * r_count + r] = self.lambda(r, f, v).ln() - totals[r];
                    }
                }
                out
            })
            .collect()
    }
}
