use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};

/// Failure reported by a provider for a single attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderFailure {
    pub message: String,
    /// Whether trying again can succeed (timeouts, 429, 5xx).
    pub transient: bool,
}

impl ProviderFailure {
    pub fn transient(message: impl Into<String>) -> Self {
        ProviderFailure {
            message: message.into(),
            transient: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        ProviderFailure {
            message: message.into(),
            transient: false,
        }
    }
}

/// Retry with exponential backoff: `retries` extra attempts after the first,
/// sleeping `base_delay * 2^n` before retry `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        RetryPolicy {
            retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay_before(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails fatally, or retries are exhausted.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> std::result::Result<T, ProviderFailure>,
    ) -> Result<T> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(f) if f.transient && attempt < self.retries => {
                    let delay = self.delay_before(attempt);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
                Err(f) => {
                    return Err(Error::ProviderUnavailable(format!(
                        "{} (after {} attempt{})",
                        f.message,
                        attempt + 1,
                        if attempt == 0 { "" } else { "s" }
                    )))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        let delays: Vec<_> = (0..4).map(|n| p.delay_before(n).as_millis()).collect();
        assert_eq!(delays, [100, 200, 350, 350]);
    }

    #[test]
    fn fatal_failures_are_not_retried() {
        let mut calls = 0;
        let r: Result<()> = RetryPolicy::immediate(3).run(|| {
            calls += 1;
            Err(ProviderFailure::fatal("401"))
        });
        assert!(matches!(r, Err(Error::ProviderUnavailable(_))));
        assert_eq!(calls, 1);
    }
}
