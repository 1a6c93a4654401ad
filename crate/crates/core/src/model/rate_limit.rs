//! Requests-per-minute limiting with an injectable clock.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

const WINDOW: Duration = Duration::from_secs(60);

pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Manual clock: `sleep` advances time instantly and is recorded.
#[derive(Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
    sleeps: Mutex<Vec<Duration>>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock().unwrap() += by;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
        self.advance(duration);
    }
}

/// Token bucket of `rpm` tokens where each spent token comes back exactly
/// 60 s after it was taken. That keeps every half-open 60 s window at or
/// below `rpm` admissions; callers over the limit wait, they are never
/// refused. Clones share one bucket, so workers talking to the same
/// provider draw from a common budget.
#[derive(Clone)]
pub struct RateLimiter {
    rpm: u32,
    clock: Arc<dyn Clock>,
    spent: Arc<Mutex<VecDeque<Duration>>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        Self { rpm: requests_per_minute.max(1), clock, spent: Arc::default() }
    }

    pub fn requests_per_minute(&self) -> u32 {
        self.rpm
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    /// Blocks until a token is available and takes it. Returns the
    /// admission time.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut spent = self.spent.lock().unwrap_or_else(|e| e.into_inner());
                let now = self.clock.now();
                while spent.front().is_some_and(|&t| t + WINDOW <= now) {
                    spent.pop_front();
                }
                if spent.len() < self.rpm as usize {
                    spent.push_back(now);
                    return now;
                }
                *spent.front().expect("bucket is full") + WINDOW - now
            };
            self.clock.sleep(wait);
        }
    }
}
