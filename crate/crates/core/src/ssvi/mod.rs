//! Sparse stochastic variational inference.
//!
//! Each iteration samples a minibatch of documents, runs a short Gibbs chain
//! over sentence relations in every sampled document under the current
//! `q(β)`, and takes a natural-gradient step on `λ` that touches only the
//! entries the minibatch observed.

mod local;
mod model;
mod schedule;

pub use local::{
    conditional_with_context, elbo_proxy, gibbs_conditional, natural_gradient, run_local_chain,
    ssvi_step, ChainContext, ChainResult, MinibatchCounts, NaturalGradient,
};
pub use model::{ModelInit, VariationalModel};
pub use schedule::{learning_rate, LearningSchedule, MAX_RATE};

use log::{error, info};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{ConfigError, Error, NumericalError};
use crate::evaluation::{perplexity, PerplexityConfig, PointEstimate};
use crate::hyperopt::{update_hyperparameters, HyperOptConfig};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::numerics::{child_rng, root_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsviConfig {
    pub relations: usize,
    /// Documents per minibatch, `S`.
    pub minibatch_size: usize,
    /// Recorded sweeps per local chain, `S′`.
    pub sweeps: usize,
    /// Discarded sweeps per local chain, `B`.
    pub burnin: usize,
    /// Iterations to run, `T`.
    pub iterations: usize,
    pub schedule: LearningSchedule,
    pub seed: u64,
    pub hyper: HyperOptConfig,
    /// Initial `η_f`, shared by every feature type.
    pub eta: f64,
    pub alpha: f64,
    pub init: ModelInit,
    /// ELBO proxy is logged every this many iterations and on the last one; 0 disables it.
    pub elbo_every: usize,
    /// Chain worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SsviConfig {
    fn default() -> Self {
        SsviConfig {
            relations: 10,
            minibatch_size: 256,
            sweeps: 25,
            burnin: 5,
            iterations: 100,
            schedule: LearningSchedule::new(0.01, 10.0, 0.51).expect("valid default schedule"),
            seed: 0,
            hyper: HyperOptConfig::default(),
            eta: 0.1,
            alpha: 0.1,
            init: ModelInit::default(),
            elbo_every: 1,
            workers: None,
        }
    }
}

impl SsviConfig {
    /// Checks every parameter, and `S ≤ D` against a corpus of `corpus_size` documents.
    pub fn validate(&self, corpus_size: usize) -> Result<(), ConfigError> {
        if self.relations == 0 {
            return Err(ConfigError::ZeroRelations);
        }
        if self.minibatch_size == 0 {
            return Err(ConfigError::ZeroMinibatch);
        }
        if self.sweeps == 0 {
            return Err(ConfigError::ZeroSweeps);
        }
        if self.iterations == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        if self.minibatch_size > corpus_size {
            return Err(ConfigError::MinibatchTooLarge {
                s: self.minibatch_size,
                d: corpus_size,
            });
        }
        for (name, value) in [("eta", self.eta), ("alpha", self.alpha)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Other("workers must be ≥ 1".to_string()));
        }
        // re-run the constructor checks in case the schedule was deserialized
        LearningSchedule::new(self.schedule.a(), self.schedule.b(), self.schedule.c())?;
        self.hyper.validate()
    }
}

/// Held-out perplexity checkpoints during training.
#[derive(Clone, Copy, Debug)]
pub struct EvalSchedule<'a> {
    pub corpus: &'a Corpus,
    pub protocol: PerplexityConfig,
    /// Evaluate every this many iterations, on the initial model, and on the last iteration.
    pub every: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: VariationalModel,
    pub metrics: MetricsLog,
}

/// Initializes a model per `config` and trains it.
pub fn train(
    corpus: &Corpus,
    config: &SsviConfig,
    eval: Option<EvalSchedule<'_>>,
) -> Result<TrainOutput, Error> {
    config.validate(corpus.num_documents())?;
    let model = VariationalModel::initialize(
        corpus,
        config.relations,
        vec![config.eta; corpus.num_types()],
        config.alpha,
        config.init,
        config.seed,
    )?;
    train_from(model, corpus, config, eval)
}

/// Runs `config.iterations` SSVI iterations starting from `model`.
pub fn train_from(
    mut model: VariationalModel,
    corpus: &Corpus,
    config: &SsviConfig,
    eval: Option<EvalSchedule<'_>>,
) -> Result<TrainOutput, Error> {
    config.validate(corpus.num_documents())?;
    if model.vocab_sizes() != corpus.vocab.sizes().as_slice() {
        return Err(ConfigError::Other(
            "model vocabulary does not match the training corpus".to_string(),
        )
        .into());
    }
    if let Some(e) = &eval {
        e.protocol.validate()?;
    }
    let pool = match config.workers {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ConfigError::Other(format!("cannot start worker pool: {e}")))?,
        ),
        None => None,
    };

    let d = corpus.num_documents();
    let s = config.minibatch_size;
    let names = corpus.vocab.features().names();
    let mut metrics = MetricsLog::new(names);
    let mut rng = root_rng(config.seed);
    let mut document_sweeps = 0u64;
    let mut burnin_sweeps = 0u64;

    let evaluate = |model: &VariationalModel, iteration: usize| -> Result<Option<f64>, Error> {
        let Some(e) = &eval else { return Ok(None) };
        let due = iteration == 0
            || iteration == config.iterations
            || (e.every > 0 && iteration.is_multiple_of(e.every));
        if !due {
            return Ok(None);
        }
        let p = perplexity(
            &PointEstimate::from_variational(model),
            e.corpus,
            &e.protocol,
        )?;
        if !p.perplexity.is_finite() {
            return Err(abort(model, "eval perplexity", iteration));
        }
        Ok(Some(p.perplexity))
    };

    metrics.rows.push(MetricsRow {
        iteration: 0,
        rho: None,
        elbo_proxy: None,
        document_sweeps_cumulative: 0,
        burnin_sweeps_cumulative: 0,
        eval_perplexity: evaluate(&model, 0)?,
        alpha: model.alpha(),
        alpha_grad: None,
        eta: model.eta().to_vec(),
        eta_grad: vec![None; model.num_types()],
    });

    for iteration in 1..=config.iterations {
        let t = model.iteration();
        let mut batch = index::sample(&mut rng, d, s).into_vec();
        batch.sort_unstable();

        let ctx = ChainContext::new(&model);
        let run = || -> Result<Vec<ChainResult>, NumericalError> {
            batch
                .par_iter()
                .map(|&i| {
                    let doc = &corpus.documents[i];
                    let mut chain_rng = child_rng(config.seed, t as u64, &doc.id);
                    run_local_chain(&ctx, doc, i, config.burnin, config.sweeps, &mut chain_rng)
                })
                .collect()
        };
        let results = match &pool {
            Some(p) => p.install(run)?,
            None => run()?,
        };
        let counts = MinibatchCounts::accumulate(
            results.iter().map(|r| (r, &corpus.documents[r.doc_index])),
        );

        let want_elbo = config.elbo_every > 0
            && (iteration % config.elbo_every == 0 || iteration == config.iterations);
        let elbo = want_elbo.then(|| elbo_proxy(&ctx, &counts, d, s));
        if elbo.is_some_and(|x| !x.is_finite()) {
            return Err(abort(&model, "ELBO proxy", iteration));
        }

        let rho = config.schedule.rate(t);
        let snapshots: Vec<&[Vec<u32>]> = results
            .iter()
            .map(|r| r.occupancy_snapshots.as_slice())
            .collect();
        ssvi_step(&mut model, &counts, d, s, rho);
        if !(model.pi() > 0.0 && model.pi().is_finite()) {
            return Err(abort(&model, "scaling product", iteration));
        }
        let diag = update_hyperparameters(&mut model, &config.hyper, &snapshots, d, rho)?;

        document_sweeps += (s * config.sweeps) as u64;
        burnin_sweeps += (s * config.burnin) as u64;
        let eval_perplexity = evaluate(&model, iteration)?;
        if iteration % 10 == 0 || iteration == config.iterations {
            info!(
                "iteration {iteration}/{}: rho {rho:.3e}, elbo {}, perplexity {}",
                config.iterations,
                elbo.map_or("-".to_string(), |x| format!("{x:.6e}")),
                eval_perplexity.map_or("-".to_string(), |x| format!("{x:.4}")),
            );
        }
        metrics.rows.push(MetricsRow {
            iteration,
            rho: Some(rho),
            elbo_proxy: elbo,
            document_sweeps_cumulative: document_sweeps,
            burnin_sweeps_cumulative: burnin_sweeps,
            eval_perplexity,
            alpha: model.alpha(),
            alpha_grad: diag.alpha_gradient,
            eta: model.eta().to_vec(),
            eta_grad: diag.eta_gradients,
        });
    }
    Ok(TrainOutput { model, metrics })
}

fn abort(model: &VariationalModel, metric: &'static str, iteration: usize) -> Error {
    error!(
        "non-finite {metric} at iteration {iteration}: t = {}, pi = {:e}, alpha = {}, eta = {:?}, row total drift = {:e}",
        model.iteration(),
        model.pi(),
        model.alpha(),
        model.eta(),
        model.row_total_drift(),
    );
    NumericalError::NonFiniteMetric { metric, iteration }.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, FeatureSet};

    fn corpus() -> Corpus {
        let mut text = String::new();
        for d in 0..6 {
            let a = if d % 2 == 0 { "x" } else { "y" };
            text.push_str(&format!(
                "{{\"id\":\"d{d}\",\"sentences\":[{{\"features\":{{\"vb\":[\"{a}\",\"{a}\"],\"pp\":[\"p{d}\"]}}}},{{\"features\":{{\"vb\":[\"z\"]}}}}]}}\n"
            ));
        }
        parse_corpus(text.as_bytes(), &FeatureSet::parse("vb,pp").unwrap()).unwrap()
    }

    fn config() -> SsviConfig {
        SsviConfig {
            relations: 3,
            minibatch_size: 2,
            sweeps: 3,
            burnin: 1,
            iterations: 5,
            schedule: LearningSchedule::new(0.5, 1.0, 0.7).unwrap(),
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let c = corpus();
        let mut cfg = config();
        cfg.minibatch_size = 7;
        assert!(matches!(
            train(&c, &cfg, None),
            Err(Error::Config(ConfigError::MinibatchTooLarge { s: 7, d: 6 }))
        ));
        cfg = config();
        cfg.iterations = 0;
        assert!(matches!(
            train(&c, &cfg, None),
            Err(Error::Config(ConfigError::ZeroIterations))
        ));
        cfg = config();
        cfg.relations = 0;
        assert_eq!(cfg.validate(6).unwrap_err().to_string(), "R must be ≥ 1");
    }

    #[test]
    fn metrics_track_accounting() {
        let c = corpus();
        let out = train(&c, &config(), None).unwrap();
        assert_eq!(out.model.iteration(), 5);
        assert_eq!(out.metrics.rows.len(), 6);
        for (i, row) in out.metrics.rows.iter().enumerate() {
            assert_eq!(row.iteration, i);
            assert_eq!(row.document_sweeps_cumulative, (i * 2 * 3) as u64);
            assert_eq!(row.burnin_sweeps_cumulative, (i * 2) as u64);
        }
        assert!(out.metrics.rows[1..]
            .iter()
            .all(|r| r.elbo_proxy.is_some_and(f64::is_finite)));
    }

    #[test]
    fn independent_of_worker_count() {
        let c = corpus();
        let mut one = config();
        one.workers = Some(1);
        let mut four = config();
        four.workers = Some(4);
        let a = train(&c, &one, None).unwrap();
        let b = train(&c, &four, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn eval_checkpoints_follow_cadence() {
        let c = corpus();
        let eval = EvalSchedule {
            corpus: &c,
            protocol: PerplexityConfig {
                sweeps: 6,
                burnin: 2,
                seed: 0,
            },
            every: 2,
        };
        let out = train(&c, &config(), Some(eval)).unwrap();
        let with: Vec<usize> = out
            .metrics
            .rows
            .iter()
            .filter(|r| r.eval_perplexity.is_some())
            .map(|r| r.iteration)
            .collect();
        assert_eq!(with, vec![0, 2, 4, 5]);
    }

    #[test]
    fn full_batch_single_iteration_is_one_gradient_step() {
        let c = corpus();
        let cfg = SsviConfig {
            relations: 1,
            minibatch_size: 6,
            iterations: 1,
            init: ModelInit::Prior,
            hyper: HyperOptConfig::disabled(),
            ..config()
        };
        let out = train(&c, &cfg, None).unwrap();
        let rho = cfg.schedule.rate(0);
        // with R = 1 the expected counts are the raw corpus counts
        let f = c
            .vocab
            .features()
            .index_of(crate::corpus::FeatureKind::Vb)
            .unwrap();
        let z = c.vocab.id(f, "z").unwrap() as usize;
        let expected = (1.0 - rho) * cfg.eta + rho * (6.0 + cfg.eta);
        assert!((out.model.lambda(0, f, z) - expected).abs() < 1e-12);
    }
}
