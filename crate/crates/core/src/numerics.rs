//! Special functions and seeded randomness shared by the trainers.
//!
//! `digamma` and `trigamma` shift the argument upward with the standard
//! recurrences until it exceeds [`ASYMPTOTIC_THRESHOLD`], then apply the
//! asymptotic (Bernoulli) series. `log_gamma` does the same with the Stirling
//! series.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::NumericsError;

/// Seeded deterministic pseudorandom stream used throughout the crate.
pub type Rng = ChaCha8Rng;

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// ½·ln(2π)
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_domain(func: &'static str, x: f64) -> Result<(), NumericsError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::Domain { func, x })
    }
}

/// ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64, NumericsError> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// ψ(x) without the domain check. Callers guarantee `x > 0`.
#[inline]
pub fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // B_{2k} / (2k) for k = 1..=7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// ψ₁(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64, NumericsError> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

#[inline]
pub fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + Σ B_{2k} / x^{2k+1}
    let series = inv2
        * inv
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2
                        * (1.0 / 42.0
                            - inv2
                                * (1.0 / 30.0
                                    - inv2
                                        * (5.0 / 66.0
                                            - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + series
}

/// ln Γ(x) for x > 0.
pub fn log_gamma(x: f64) -> Result<f64, NumericsError> {
    check_domain("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

#[inline]
pub fn log_gamma_unchecked(x: f64) -> f64 {
    // Small integers are exact; this keeps ln Γ(1) = ln Γ(2) = 0 bit-exact.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut shift = 1.0;
    let mut y = x;
    while y < ASYMPTOTIC_THRESHOLD {
        shift *= y;
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2 * (1.0 / 1188.0 - inv2 * 691.0 / 360360.0)))));
    (y - 0.5) * y.ln() - y + HALF_LN_2PI + series - shift.ln()
}

/// Draws an index with probability proportional to `weights[i]`.
pub fn categorical_sample(rng: &mut Rng, weights: &[f64]) -> Result<usize, NumericsError> {
    let mut total = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(NumericsError::InvalidWeights);
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(NumericsError::InvalidWeights);
    }
    Ok(sample_with_total(rng, weights, total))
}

/// Inner loop of [`categorical_sample`] for weights already known to be valid.
#[inline]
pub(crate) fn sample_with_total(rng: &mut Rng, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cumulative += w;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    // rounding can leave u a hair above the final cumulative sum
    last_positive
}

/// Root stream for a run.
pub fn root_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Child stream keyed by `(seed, iteration, key)`.
///
/// Per-document chains use the document id as the key, so their draws do not
/// depend on which worker runs them or in which order.
pub fn child_rng(seed: u64, iteration: u64, key: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(iteration.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    Rng::from_seed(digest)
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn tabulated_constants() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-12);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0).unwrap() - pi2_6).abs() < 1e-12);
        assert!((trigamma(2.0).unwrap() - (pi2_6 - 1.0)).abs() < 1e-12);
        assert!((trigamma(3.0).unwrap() - (pi2_6 - 1.25)).abs() < 1e-12);
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-12);
        assert!((log_gamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
    }

    #[test]
    fn poles_and_negative_arguments_are_domain_errors() {
        assert!(matches!(digamma(0.0), Err(NumericsError::Domain { .. })));
        assert!(trigamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn degenerate_weights_always_pick_the_only_support() {
        let mut rng = root_rng(3);
        for _ in 0..1000 {
            assert_eq!(categorical_sample(&mut rng, &[0.0, 3.0, 0.0]).unwrap(), 1);
        }
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let mut rng = root_rng(3);
        assert!(categorical_sample(&mut rng, &[f64::NAN, 1.0]).is_err());
        assert!(categorical_sample(&mut rng, &[0.0, 0.0]).is_err());
        assert!(categorical_sample(&mut rng, &[]).is_err());
        assert!(categorical_sample(&mut rng, &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn child_streams_are_keyed() {
        let a: u64 = child_rng(1, 2, "doc-a").random();
        let b: u64 = child_rng(1, 2, "doc-a").random();
        let c: u64 = child_rng(1, 2, "doc-b").random();
        let d: u64 = child_rng(1, 3, "doc-a").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let v = [0.1, -2.0, 1.5];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&v), direct, max_relative = 1e-14);
        assert_relative_eq!(
            log_sum_exp(&[-1000.0, -1000.0]),
            -1000.0 + 2f64.ln(),
            max_relative = 1e-14
        );
    }
}
