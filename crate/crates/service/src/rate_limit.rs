use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock {
    origin: Instant,
    offset: Mutex<Duration>,
}

impl Default for ManualClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
            offset: Mutex::new(Duration::ZERO),
        }
    }
}

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        *self.offset.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Instant {
        self.origin + *self.offset.lock()
    }
}

/// Global rolling-window admission counter.
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    admitted: Mutex<VecDeque<Instant>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(limit: usize, window: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            limit,
            window,
            admitted: Mutex::new(VecDeque::new()),
            clock,
        }
    }

    pub fn per_minute(limit: usize) -> Self {
        Self::new(limit, Duration::from_secs(60), Arc::new(SystemClock))
    }

    /// Admits and records one request, or returns how long to wait.
    pub fn try_admit(&self) -> Result<(), Duration> {
        let now = self.clock.now();
        let mut admitted = self.admitted.lock();
        while admitted
            .front()
            .is_some_and(|t| now.saturating_duration_since(*t) >= self.window)
        {
            admitted.pop_front();
        }
        if self.limit == 0 {
            return Err(self.window);
        }
        if admitted.len() >= self.limit {
            let oldest = *admitted.front().expect("window is full");
            return Err(self
                .window
                .saturating_sub(now.saturating_duration_since(oldest)));
        }
        admitted.push_back(now);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limiter(limit: usize) -> (RateLimiter, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::default());
        (
            RateLimiter::new(limit, Duration::from_secs(60), clock.clone()),
            clock,
        )
    }

    #[test]
    fn twenty_first_is_denied() {
        let (rl, clock) = limiter(20);
        for _ in 0..20 {
            rl.try_admit().unwrap();
            clock.advance(Duration::from_millis(50));
        }
        let wait = rl.try_admit().unwrap_err();
        assert!(wait > Duration::from_secs(58) && wait <= Duration::from_secs(60));
    }

    #[test]
    fn window_slides() {
        let (rl, clock) = limiter(20);
        for _ in 0..20 {
            rl.try_admit().unwrap();
        }
        assert!(rl.try_admit().is_err());
        clock.advance(Duration::from_secs(61));
        assert!(rl.try_admit().is_ok());
    }

    #[test]
    fn zero_limit_denies_everything() {
        let (rl, _) = limiter(0);
        assert!(rl.try_admit().is_err());
    }
}
