//! Sliding-window rate limiting shared by concurrent callers.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    /// Maximum requests granted within any window of `interval`.
    pub max_requests: u32,
    pub interval: Duration,
}

impl RateLimit {
    pub fn per_minute(max_requests: u32) -> Self {
        RateLimit {
            max_requests,
            interval: Duration::from_secs(60),
        }
    }
}

/// Grants request slots so that any sliding window of the configured
/// interval contains at most `max_requests` grants, regardless of how many
/// threads call `acquire` concurrently.
#[derive(Debug)]
pub struct RateLimiter {
    limit: RateLimit,
    grants: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(limit: RateLimit) -> Self {
        assert!(
            limit.max_requests > 0,
            "rate limit must allow at least one request"
        );
        RateLimiter {
            limit,
            grants: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a slot is available, then records the grant.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut grants = self.grants.lock().unwrap();
                let now = Instant::now();
                while let Some(front) = grants.front() {
                    if now.duration_since(*front) >= self.limit.interval {
                        grants.pop_front();
                    } else {
                        break;
                    }
                }
                if (grants.len() as u32) < self.limit.max_requests {
                    grants.push_back(now);
                    return;
                }
                // Oldest grant leaves the window at front + interval.
                self.limit.interval - now.duration_since(*grants.front().unwrap())
            };
            std::thread::sleep(wait);
        }
    }
}
