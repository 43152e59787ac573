use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Largest step ever taken; a step of exactly 1 would zero the scaling product.
pub const MAX_RATE: f64 = 1.0 - 1e-6;

/// Robbins–Monro step sizes `ρ(t) = a / (b + t)^c`, clamped to [`MAX_RATE`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    a: f64,
    b: f64,
    c: f64,
}

impl LearningSchedule {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, ConfigError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(ConfigError::NonPositiveRate {
                name: "a",
                value: a,
            });
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(ConfigError::NonPositiveRate {
                name: "b",
                value: b,
            });
        }
        if !(c > 0.5 && c <= 1.0) {
            return Err(ConfigError::InvalidExponent(c));
        }
        Ok(LearningSchedule { a, b, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rate(&self, t: usize) -> f64 {
        (self.a / (self.b + t as f64).powf(self.c)).min(MAX_RATE)
    }
}

/// `ρ(t)` for `schedule`.
pub fn learning_rate(schedule: &LearningSchedule, t: usize) -> f64 {
    schedule.rate(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_formula() {
        let s = LearningSchedule::new(0.1, 1.0, 1.0).unwrap();
        assert!((learning_rate(&s, 0) - 0.1).abs() < 1e-15);
        assert!((learning_rate(&s, 4) - 0.02).abs() < 1e-15);
        let s = LearningSchedule::new(0.01, 10.0, 0.51).unwrap();
        let expected = 0.01 / 10f64.powf(0.51);
        assert!((learning_rate(&s, 0) - expected).abs() < 1e-15);
        assert!((learning_rate(&s, 0) - 0.003090).abs() < 5e-7);
    }

    #[test]
    fn large_rates_are_clamped_below_one() {
        let s = LearningSchedule::new(5.0, 1.0, 1.0).unwrap();
        assert_eq!(learning_rate(&s, 0), MAX_RATE);
        assert!(learning_rate(&s, 0) < 1.0);
    }

    #[test]
    fn construction_validates() {
        assert!(LearningSchedule::new(0.1, 1.0, 0.5).is_err());
        assert!(LearningSchedule::new(0.1, 1.0, 1.01).is_err());
        assert!(LearningSchedule::new(0.0, 1.0, 1.0).is_err());
        assert!(LearningSchedule::new(0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn rates_stay_in_unit_interval_and_decrease() {
        let s = LearningSchedule::new(3.0, 0.5, 0.6).unwrap();
        let mut prev = f64::INFINITY;
        for t in 0..1000 {
            let r = s.rate(t);
            assert!(r > 0.0 && r < 1.0);
            assert!(r <= prev);
            prev = r;
        }
    }
}
