//! Training parameters shared by `train` and `grid`, mergeable from a TOML
//! file and command-line flags (flags win).

use std::fs;
use std::path::Path;

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize};

use rellda::error::ConfigError;
use rellda::evaluation::PerplexityConfig;
use rellda::gibbs::GibbsConfig;
use rellda::hyperopt::HyperOptConfig;
use rellda::ssvi::{LearningSchedule, ModelInit, SsviConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Ssvi,
    Gibbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Prior,
    Gamma,
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[arg(long, value_enum)]
    pub trainer: Option<TrainerKind>,
    /// Number of relations (a comma-separated list for `grid`).
    #[arg(short = 'R', long = "relations", value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub relations: Vec<usize>,
    /// Learning-rate scale a in ρ = a/(b+t)^c.
    #[arg(short = 'a', long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub a: Vec<f64>,
    /// Learning-rate delay b.
    #[arg(short = 'b', long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub b: Vec<f64>,
    /// Learning-rate exponent c, in (1/2, 1].
    #[arg(short = 'c', long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub c: Vec<f64>,
    /// Documents per minibatch.
    #[arg(short = 'S', long)]
    pub minibatch_size: Option<usize>,
    /// Recorded sweeps per local chain.
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Discarded sweeps per local chain.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// SSVI iterations, or full-corpus sweeps for the Gibbs trainer.
    #[arg(short = 'T', long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial η, shared by every feature type.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub optimize_eta: Option<bool>,
    #[arg(long)]
    pub optimize_alpha: Option<bool>,
    #[arg(long)]
    pub hyper_floor: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    #[arg(long)]
    pub init_shape: Option<f64>,
    /// Active feature types: all, full, no_entities, or a comma-separated list.
    #[arg(long)]
    pub features: Option<String>,
    /// Held-out perplexity every this many iterations (0: first and last only).
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub perplexity_sweeps: Option<usize>,
    #[arg(long)]
    pub perplexity_burnin: Option<usize>,
    /// ELBO proxy every this many iterations (0 disables it).
    #[arg(long)]
    pub elbo_every: Option<usize>,
    /// Worker threads for the per-document chains.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn one_or_many<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

macro_rules! overlay {
    ($flags:ident, $file:ident; opt: $($o:ident),*; list: $($l:ident),*) => {
        TrainParams {
            $($o: $flags.$o.or($file.$o),)*
            $($l: if $flags.$l.is_empty() { $file.$l } else { $flags.$l },)*
        }
    };
}

impl TrainParams {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Values set on `self` take precedence over `file`.
    pub fn over(self, file: TrainParams) -> TrainParams {
        let flags = self;
        overlay!(flags, file;
            opt: trainer, minibatch_size, sweeps, burnin, iterations, seed, eta, alpha, optimize_eta,
                 optimize_alpha, hyper_floor, init, init_shape, features, eval_every, perplexity_sweeps,
                 perplexity_burnin, elbo_every, workers;
            list: relations, a, b, c)
    }

    /// Every (R, a, b, c) combination, in lexicographic order of the lists.
    pub fn cells(&self) -> Vec<Cell> {
        let d = SsviConfig::default();
        let or = |v: &[f64], x: f64| if v.is_empty() { vec![x] } else { v.to_vec() };
        let rs = if self.relations.is_empty() {
            vec![d.relations]
        } else {
            self.relations.clone()
        };
        let (a_s, b_s, c_s) = (
            or(&self.a, d.schedule.a()),
            or(&self.b, d.schedule.b()),
            or(&self.c, d.schedule.c()),
        );
        let mut out = Vec::new();
        for &relations in &rs {
            for &a in &a_s {
                for &b in &b_s {
                    for &c in &c_s {
                        out.push(Cell { relations, a, b, c });
                    }
                }
            }
        }
        out
    }

    /// The single cell of a `train` run.
    pub fn single_cell(&self) -> Result<Cell, ConfigError> {
        for (name, n) in [
            ("R", self.relations.len()),
            ("a", self.a.len()),
            ("b", self.b.len()),
            ("c", self.c.len()),
        ] {
            if n > 1 {
                return Err(ConfigError::Other(format!(
                    "{name} takes one value for train; use grid for lists"
                )));
            }
        }
        Ok(self.cells().remove(0))
    }

    pub fn resolve(&self, cell: Cell) -> Result<RunConfig, ConfigError> {
        let d = SsviConfig::default();
        let g = GibbsConfig::default();
        let p = PerplexityConfig::default();
        let trainer = self.trainer.unwrap_or(TrainerKind::Ssvi);
        let seed = self.seed.unwrap_or(0);
        let eta = self.eta.unwrap_or(d.eta);
        let alpha = self.alpha.unwrap_or(d.alpha);
        let perplexity = PerplexityConfig {
            sweeps: self.perplexity_sweeps.unwrap_or(p.sweeps),
            burnin: self.perplexity_burnin.unwrap_or(p.burnin),
            seed,
        };
        perplexity.validate()?;
        let (ssvi, gibbs) = match trainer {
            TrainerKind::Ssvi => {
                let init = match self.init.unwrap_or(InitKind::Gamma) {
                    InitKind::Prior => ModelInit::Prior,
                    InitKind::Gamma => match (self.init_shape, d.init) {
                        (Some(shape), _) => ModelInit::Gamma { shape },
                        (None, default) => default,
                    },
                };
                let cfg = SsviConfig {
                    relations: cell.relations,
                    minibatch_size: self.minibatch_size.unwrap_or(d.minibatch_size),
                    sweeps: self.sweeps.unwrap_or(d.sweeps),
                    burnin: self.burnin.unwrap_or(d.burnin),
                    iterations: self.iterations.unwrap_or(d.iterations),
                    schedule: LearningSchedule::new(cell.a, cell.b, cell.c)?,
                    seed,
                    hyper: HyperOptConfig {
                        optimize_eta: self.optimize_eta.unwrap_or(true),
                        optimize_alpha: self.optimize_alpha.unwrap_or(true),
                        floor: self.hyper_floor.unwrap_or(d.hyper.floor),
                    },
                    eta,
                    alpha,
                    init,
                    elbo_every: self.elbo_every.unwrap_or(d.elbo_every),
                    workers: self.workers,
                };
                (Some(cfg), None)
            }
            TrainerKind::Gibbs => {
                let cfg = GibbsConfig {
                    relations: cell.relations,
                    eta,
                    alpha,
                    sweeps: self.iterations.unwrap_or(g.sweeps),
                    seed,
                };
                cfg.validate()?;
                (None, Some(cfg))
            }
        };
        Ok(RunConfig {
            trainer,
            features: self.features.clone().unwrap_or_else(|| "all".to_string()),
            eval_every: self.eval_every.unwrap_or(10),
            perplexity,
            ssvi,
            gibbs,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    #[serde(rename = "R")]
    pub relations: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Fully resolved configuration of one training run, echoed into the model file.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub trainer: TrainerKind,
    pub features: String,
    pub eval_every: usize,
    pub perplexity: PerplexityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssvi: Option<SsviConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs: Option<GibbsConfig>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: TrainParams =
            toml::from_str("relations = [4, 8]\na = 0.5\nseed = 3\nsweeps = 7\n").unwrap();
        let flags = TrainParams {
            relations: vec![2],
            seed: Some(9),
            ..Default::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.relations, vec![2]);
        assert_eq!(merged.a, vec![0.5]);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.sweeps, Some(7));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainParams>("relatoins = 3\n").is_err());
    }

    #[test]
    fn grid_cells_are_the_cross_product() {
        let p = TrainParams {
            relations: vec![250, 500, 1000],
            a: vec![0.1, 0.01, 0.001],
            b: vec![1.0, 10.0],
            ..Default::default()
        };
        let cells = p.cells();
        assert_eq!(cells.len(), 18);
        assert_eq!(
            cells[0],
            Cell {
                relations: 250,
                a: 0.1,
                b: 1.0,
                c: 0.51
            }
        );
        assert!(p.single_cell().is_err());
    }

    #[test]
    fn zero_relations_is_a_config_error() {
        let p = TrainParams {
            relations: vec![0],
            trainer: Some(TrainerKind::Gibbs),
            ..Default::default()
        };
        let cell = p.single_cell().unwrap();
        assert_eq!(p.resolve(cell).unwrap_err(), ConfigError::ZeroRelations);
    }
}
