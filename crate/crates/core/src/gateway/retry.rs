use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Exponential backoff for transient endpoint failures.
///
/// A call is attempted at most `1 + max_retries` times; the wait before retry
/// `i` is `initial · multiplier^i`, capped at `max_backoff`, so waits never
/// decrease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    pub multiplier: f64,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests and mock endpoints.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
            max_backoff: Duration::ZERO,
        }
    }

    pub fn max_attempts(&self) -> u32 {
        1 + self.max_retries
    }

    /// Wait before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(retry as i32);
        let secs = self.initial_backoff.as_secs_f64() * factor;
        Duration::from_secs_f64(secs.min(self.max_backoff.as_secs_f64()))
    }

    pub fn schedule(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|i| self.backoff(i)).collect()
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schedule() {
        let p = RetryPolicy::default();
        let ms: Vec<u128> = p.schedule().iter().map(Duration::as_millis).collect();
        assert_eq!(ms, [500, 1000, 2000, 4000]);
        assert_eq!(p.max_attempts(), 5);
    }

    proptest! {
        #[test]
        fn backoff_non_decreasing(init in 0u64..5000, mult in 0.5f64..4.0, cap in 0u64..60_000, retries in 0u32..12) {
            let p = RetryPolicy {
                max_retries: retries,
                initial_backoff: Duration::from_millis(init),
                multiplier: mult,
                max_backoff: Duration::from_millis(cap),
            };
            let s = p.schedule();
            prop_assert_eq!(s.len() as u32, retries);
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(s.iter().all(|d| *d <= p.max_backoff));
        }
    }
}
