//! Natural-gradient updates for the Dirichlet hyperparameters `η_f` and `α`.
//!
//! Both priors are symmetric Dirichlets, whose log-normalizer `a(·)` gives the
//! Fisher information directly as `a″`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, NumericalError};
use crate::numerics::{digamma_unchecked, trigamma_unchecked};
use crate::ssvi::VariationalModel;

pub const DEFAULT_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperOptConfig {
    pub optimize_eta: bool,
    pub optimize_alpha: bool,
    /// Lower clamp applied to every updated value.
    pub floor: f64,
}

impl Default for HyperOptConfig {
    fn default() -> Self {
        HyperOptConfig {
            optimize_eta: true,
            optimize_alpha: true,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl HyperOptConfig {
    pub fn disabled() -> Self {
        HyperOptConfig {
            optimize_eta: false,
            optimize_alpha: false,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.floor > 0.0 && self.floor.is_finite() {
            Ok(())
        } else {
            Err(ConfigError::NonPositive {
                name: "hyperparameter floor",
                value: self.floor,
            })
        }
    }
}

/// `∂L/∂η_f = Σ_r [Σ_v (ψ(λ_{rfv}) − ψ(η_f)) − W_f (ψ(Λ_{rf}) − ψ(W_f η_f))]`.
pub fn eta_gradient(model: &VariationalModel, f: usize) -> f64 {
    let eta = model.eta()[f];
    let w = model.vocab_sizes()[f] as f64;
    let psi_eta = digamma_unchecked(eta);
    let psi_w_eta = digamma_unchecked(w * eta);
    let mut total = 0.0;
    for r in 0..model.num_relations() {
        // entries without a pseudocount have λ = η and contribute nothing
        let values: f64 = model
            .stored_entries(r, f)
            .map(|(_, lambda)| digamma_unchecked(lambda) - psi_eta)
            .sum();
        total += values - w * (digamma_unchecked(model.row_total(r, f)) - psi_w_eta);
    }
    total
}

/// `G_{η,f} = R W_f [ψ₁(η_f) − W_f ψ₁(W_f η_f)]`.
pub fn eta_fisher(relations: usize, vocab_size: usize, eta: f64) -> f64 {
    let w = vocab_size as f64;
    relations as f64 * w * (trigamma_unchecked(eta) - w * trigamma_unchecked(w * eta))
}

/// `ĝ_α(z_d) = Σ_r [ψ(O_{dr} + α) − ψ(α)] + R [ψ(Rα) − ψ(O_d + Rα)]`.
pub fn alpha_sample_gradient(occupancy: &[u32], alpha: f64) -> f64 {
    let r_count = occupancy.len() as f64;
    let psi_alpha = digamma_unchecked(alpha);
    let total: u32 = occupancy.iter().sum();
    let per_relation: f64 = occupancy
        .iter()
        .map(|&o| {
            if o == 0 {
                0.0
            } else {
                digamma_unchecked(o as f64 + alpha) - psi_alpha
            }
        })
        .sum();
    let normalizer = if total == 0 {
        0.0
    } else {
        digamma_unchecked(r_count * alpha) - digamma_unchecked(total as f64 + r_count * alpha)
    };
    per_relation + r_count * normalizer
}

/// `ĝ_α = (D/S) Σ_{d∈M} (1/S′) Σ_{s′} ĝ_α(z_d^{(s′)})`.
///
/// `snapshots[d]` holds the occupancy vectors recorded after each estimation
/// sweep of document d's chain.
pub fn alpha_gradient<S: AsRef<[Vec<u32>]>>(
    snapshots: &[S],
    alpha: f64,
    corpus_size: usize,
    minibatch_size: usize,
) -> f64 {
    let sum: f64 = snapshots
        .iter()
        .map(|doc| {
            let doc = doc.as_ref();
            if doc.is_empty() {
                return 0.0;
            }
            doc.iter()
                .map(|o| alpha_sample_gradient(o, alpha))
                .sum::<f64>()
                / doc.len() as f64
        })
        .sum();
    corpus_size as f64 / minibatch_size as f64 * sum
}

/// `G_α = D R [ψ₁(α) − R ψ₁(Rα)]`.
pub fn alpha_fisher(alpha: f64, relations: usize, corpus_size: usize) -> f64 {
    let r = relations as f64;
    corpus_size as f64 * r * (trigamma_unchecked(alpha) - r * trigamma_unchecked(r * alpha))
}

/// Result of one preconditioned step on a scalar hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HyperUpdate {
    Applied(f64),
    /// Fisher information was zero (a single-value vocabulary or `R = 1`).
    Degenerate,
    /// The step came out non-finite and was dropped.
    NonFinite,
}

/// `value + ρ · gradient / fisher`, clamped to `floor`.
pub fn hyper_step(value: f64, gradient: f64, fisher: f64, rho: f64, floor: f64) -> HyperUpdate {
    if fisher == 0.0 {
        return HyperUpdate::Degenerate;
    }
    let next = value + rho * gradient / fisher;
    if !next.is_finite() {
        return HyperUpdate::NonFinite;
    }
    HyperUpdate::Applied(next.max(floor))
}

/// Gradients observed during one round of hyperparameter updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HyperDiagnostics {
    pub eta_gradients: Vec<Option<f64>>,
    pub alpha_gradient: Option<f64>,
}

/// Updates `η_f` (from the current λ) and then `α` (from `snapshots`) in place.
pub fn update_hyperparameters<S: AsRef<[Vec<u32>]>>(
    model: &mut VariationalModel,
    config: &HyperOptConfig,
    snapshots: &[S],
    corpus_size: usize,
    rho: f64,
) -> Result<HyperDiagnostics, NumericalError> {
    let mut diag = HyperDiagnostics {
        eta_gradients: vec![None; model.num_types()],
        alpha_gradient: None,
    };
    if config.optimize_eta {
        for f in 0..model.num_types() {
            let w = model.vocab_sizes()[f];
            if w < 2 {
                continue;
            }
            let eta = model.eta()[f];
            let fisher = eta_fisher(model.num_relations(), w, eta);
            if fisher <= 0.0 || !fisher.is_finite() {
                return Err(NumericalError::NonPositiveFisher {
                    param: format!("eta[{f}]"),
                    value: fisher,
                });
            }
            let grad = eta_gradient(model, f);
            diag.eta_gradients[f] = Some(grad);
            match hyper_step(eta, grad, fisher, rho, config.floor) {
                HyperUpdate::Applied(v) => model.set_eta(f, v),
                other => warn!("skipping eta[{f}] update: {other:?} (gradient {grad})"),
            }
        }
    }
    let r_count = model.num_relations();
    if config.optimize_alpha && r_count >= 2 && !snapshots.is_empty() {
        let alpha = model.alpha();
        let fisher = alpha_fisher(alpha, r_count, corpus_size);
        if fisher <= 0.0 || !fisher.is_finite() {
            return Err(NumericalError::NonPositiveFisher {
                param: "alpha".to_string(),
                value: fisher,
            });
        }
        let grad = alpha_gradient(snapshots, alpha, corpus_size, snapshots.len());
        diag.alpha_gradient = Some(grad);
        match hyper_step(alpha, grad, fisher, rho, config.floor) {
            HyperUpdate::Applied(v) => model.set_alpha(v),
            other => warn!("skipping alpha update: {other:?} (gradient {grad})"),
        }
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(
        relations: usize,
        w: usize,
        eta: f64,
        entries: Vec<Vec<(u32, f64)>>,
    ) -> VariationalModel {
        VariationalModel::from_materialized(relations, vec![w], vec![eta], 1.0, 0, |r, _| {
            entries[r].clone().into_iter()
        })
        .unwrap()
    }

    #[test]
    fn prior_is_a_fixed_point() {
        let m = model_with(3, 4, 0.7, vec![vec![]; 3]);
        assert!(eta_gradient(&m, 0).abs() < 1e-12);
    }

    #[test]
    fn single_value_vocabulary_has_zero_gradient() {
        let m = model_with(2, 1, 0.4, vec![vec![(0, 3.0)], vec![(0, 9.0)]]);
        assert!(eta_gradient(&m, 0).abs() < 1e-12);
        assert_eq!(eta_fisher(2, 1, 0.4), 0.0);
    }

    #[test]
    fn hand_evaluated_eta_gradient() {
        // λ = (2, 1), η = 1: [ψ(2) − ψ(1)] + 0 − 2[ψ(3) − ψ(2)] = 1 − 1 = 0
        let m = model_with(1, 2, 1.0, vec![vec![(0, 2.0)]]);
        assert!(eta_gradient(&m, 0).abs() < 1e-12);
    }

    #[test]
    fn fisher_spot_values() {
        assert!((eta_fisher(2, 3, 1.0) - 2.760_791_198_4).abs() < 1e-9);
        assert!((eta_fisher(4, 3, 1.0) - 2.0 * eta_fisher(2, 3, 1.0)).abs() < 1e-12);
        assert!((alpha_fisher(1.0, 2, 10) - 7.101_318_664).abs() < 1e-8);
        assert_eq!(alpha_fisher(1.0, 1, 10), 0.0);
        assert!((alpha_fisher(1.0, 2, 30) - 3.0 * alpha_fisher(1.0, 2, 10)).abs() < 1e-10);
    }

    #[test]
    fn alpha_sample_gradient_degenerate_cases() {
        assert_eq!(alpha_sample_gradient(&[0, 0, 0], 0.5), 0.0);
        assert!(alpha_sample_gradient(&[4], 0.5).abs() < 1e-12);
    }

    #[test]
    fn alpha_gradient_hand_value() {
        // O = (2, 0), α = 1, R = 2: [ψ(3) − ψ(1)] + 0 + 2[ψ(2) − ψ(4)] = 3/2 − 5/3 = −1/6
        let g = alpha_sample_gradient(&[2, 0], 1.0);
        assert!((g + 1.0 / 6.0).abs() < 1e-12);
        let snaps = vec![vec![vec![2u32, 0]]];
        assert!((alpha_gradient(&snaps, 1.0, 10, 1) + 10.0 / 6.0).abs() < 1e-11);
    }

    #[test]
    fn hyper_step_rules() {
        assert_eq!(
            hyper_step(0.3, 0.0, 2.0, 0.5, 1e-5),
            HyperUpdate::Applied(0.3)
        );
        assert_eq!(
            hyper_step(0.3, -1.0, 1.0, 0.5, 1e-5),
            HyperUpdate::Applied(1e-5)
        );
        assert_eq!(
            hyper_step(0.3, 1.0, 0.0, 0.5, 1e-5),
            HyperUpdate::Degenerate
        );
        assert_eq!(
            hyper_step(0.3, f64::INFINITY, 1.0, 0.5, 1e-5),
            HyperUpdate::NonFinite
        );
        let g = 0.8;
        let fisher = eta_fisher(2, 3, 1.0);
        match hyper_step(1.0, g, fisher, 0.1, 1e-5) {
            HyperUpdate::Applied(v) => assert!((v - 1.0 - 0.1 * g / 2.760_791_198_4).abs() < 1e-10),
            other => panic!("{other:?}"),
        }
    }
}
