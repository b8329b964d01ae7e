use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket shared by all callers of one gateway.
///
/// Holds up to one second's worth of requests (at least one) and refills at
/// `requests_per_minute / 60` tokens per second.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests_per_minute: u32) -> Self {
        let per_sec = f64::from(requests_per_minute.max(1)) / 60.0;
        let capacity = per_sec.max(1.0);
        RateLimiter {
            capacity,
            per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Take one token, returning how long the caller must wait first.
    pub fn reserve(&self) -> Duration {
        let mut state = self.state.lock().expect("rate limiter poisoned");
        let now = Instant::now();
        let (tokens, last) = *state;
        let refilled =
            (tokens + now.duration_since(last).as_secs_f64() * self.per_sec).min(self.capacity);
        let after = refilled - 1.0;
        *state = (after, now);
        if after >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-after / self.per_sec)
        }
    }

    pub fn acquire(&self) {
        let wait = self.reserve();
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_wait() {
        let limiter = RateLimiter::per_minute(120);
        assert_eq!(limiter.reserve(), Duration::ZERO);
        assert_eq!(limiter.reserve(), Duration::ZERO);
        let w = limiter.reserve();
        assert!(
            w > Duration::from_millis(400) && w <= Duration::from_millis(500),
            "{w:?}"
        );
        let w2 = limiter.reserve();
        assert!(w2 > w);
    }
}
