//! Blocking JSON-over-HTTP with retry, backoff, and per-instance throttling.
//!
//! Shared by the remote chat and embedding providers.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_secs: 60,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based), ignoring server hints.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.min(32)).unwrap_or(u64::MAX);
        let ms = self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThrottleConfig {
    pub max_in_flight: usize,
    /// Sustained request rate; `None` disables the token bucket.
    pub requests_per_second: Option<f64>,
    pub burst: u32,
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        Self { max_in_flight: 8, requests_per_second: None, burst: 8 }
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("authentication rejected (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("building HTTP client: {0}")]
    Client(String),
}

/// Result of a successful call together with what it took to get there.
#[derive(Debug, Clone)]
pub struct HttpOutcome {
    pub body: Value,
    pub retries: u32,
    pub backoff_delays: Vec<Duration>,
    pub latency: Duration,
}

/// In-flight cap plus optional token bucket.
#[derive(Debug)]
pub struct Throttle {
    config: ThrottleConfig,
    in_flight: Mutex<usize>,
    released: Condvar,
    bucket: Mutex<(f64, Instant)>,
}

pub struct ThrottlePermit<'a> {
    throttle: &'a Throttle,
}

impl Drop for ThrottlePermit<'_> {
    fn drop(&mut self) {
        let mut n = self.throttle.in_flight.lock().unwrap();
        *n -= 1;
        self.throttle.released.notify_one();
    }
}

impl Throttle {
    pub fn new(config: ThrottleConfig) -> Self {
        let burst = f64::from(config.burst.max(1));
        Self {
            config,
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            bucket: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn acquire(&self) -> ThrottlePermit<'_> {
        if let Some(rate) = self.config.requests_per_second.filter(|r| *r > 0.0) {
            let burst = f64::from(self.config.burst.max(1));
            loop {
                let wait = {
                    let mut bucket = self.bucket.lock().unwrap();
                    let now = Instant::now();
                    let refill = now.duration_since(bucket.1).as_secs_f64() * rate;
                    bucket.0 = (bucket.0 + refill).min(burst);
                    bucket.1 = now;
                    if bucket.0 >= 1.0 {
                        bucket.0 -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - bucket.0) / rate))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        let cap = self.config.max_in_flight.max(1);
        let mut n = self.in_flight.lock().unwrap();
        while *n >= cap {
            n = self.released.wait(n).unwrap();
        }
        *n += 1;
        ThrottlePermit { throttle: self }
    }
}

/// A JSON POST endpoint with bearer auth.
#[derive(Debug)]
pub struct JsonEndpoint {
    client: Client,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    throttle: Throttle,
}

impl JsonEndpoint {
    pub fn new(
        url: String,
        api_key: Option<String>,
        retry: RetryPolicy,
        throttle: ThrottleConfig,
    ) -> Result<Self, HttpError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(retry.timeout_secs.max(1)))
            .build()
            .map_err(|e| HttpError::Client(e.to_string()))?;
        Ok(Self { client, url, api_key, retry, throttle: Throttle::new(throttle) })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POST `payload`, retrying 429, 5xx, and transport failures with
    /// exponential backoff. Delays never decrease within one call.
    pub fn post(&self, payload: &Value) -> Result<HttpOutcome, HttpError> {
        let _permit = self.throttle.acquire();
        let started = Instant::now();
        let mut delays = Vec::new();
        let mut attempt = 0u32;
        loop {
            let mut req = self.client.post(&self.url).json(payload);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let (last, hint) = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let hint = retry_after(&resp);
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        let body = serde_json::from_str(&text)
                            .map_err(|e| HttpError::Malformed(format!("{e}: {text}")))?;
                        return Ok(HttpOutcome {
                            body,
                            retries: attempt,
                            backoff_delays: delays,
                            latency: started.elapsed(),
                        });
                    }
                    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
                        return Err(HttpError::Auth { status: status.as_u16(), body: text });
                    }
                    if status != StatusCode::TOO_MANY_REQUESTS && !status.is_server_error() {
                        return Err(HttpError::Rejected { status: status.as_u16(), body: text });
                    }
                    (format!("HTTP {}: {}", status.as_u16(), text), hint)
                }
                Err(e) => (e.to_string(), None),
            };
            if attempt >= self.retry.max_retries {
                return Err(HttpError::Exhausted { attempts: attempt + 1, last });
            }
            let mut delay = self.retry.backoff(attempt);
            if let Some(h) = hint {
                delay = delay.max(h.min(Duration::from_millis(self.retry.max_backoff_ms)));
            }
            if let Some(prev) = delays.last() {
                delay = delay.max(*prev);
            }
            log::warn!("{}: {last}; retrying in {delay:?}", self.url);
            std::thread::sleep(delay);
            delays.push(delay);
            attempt += 1;
        }
    }
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    let secs: f64 = resp
        .headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse()
        .ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

/// Join a base URL and a path without doubling slashes.
pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_caps() {
        let p = RetryPolicy { initial_backoff_ms: 100, max_backoff_ms: 350, ..Default::default() };
        let d: Vec<_> = (0..5).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(d, [100, 200, 350, 350, 350]);
        assert_eq!(p.backoff(200).as_millis(), 350);
    }

    #[test]
    fn throttle_caps_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let t = Throttle::new(ThrottleConfig { max_in_flight: 2, ..Default::default() });
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = t.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn url_join() {
        assert_eq!(join_url("http://x/v1/", "/chat/completions"), "http://x/v1/chat/completions");
    }
}
