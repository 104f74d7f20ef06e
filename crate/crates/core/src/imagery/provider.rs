use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{decode_ppm, ImageRequest, ImageryError, RgbImage};
use crate::labeler::StreetContext;

/// Environment variable holding the live provider's API key.
pub const API_KEY_ENV: &str = "STREETCTX_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://maps.googleapis.com/maps/api/streetview";
pub const DEFAULT_RATE_PER_SEC: f64 = 10.0;

/// A source of raw image payloads.
///
/// The label is a hint for providers that render rather than photograph;
/// live providers ignore it.
pub trait ImageProvider: Send + Sync {
    fn name(&self) -> &str;
    fn fetch(&self, req: &ImageRequest, label: StreetContext) -> Result<Vec<u8>, ImageryError>;
}

/// Turns provider payloads into rasters.
pub trait ImageDecoder: Send + Sync {
    fn decode(&self, bytes: &[u8]) -> Result<RgbImage, ImageryError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PpmDecoder;

impl ImageDecoder for PpmDecoder {
    fn decode(&self, bytes: &[u8]) -> Result<RgbImage, ImageryError> {
        decode_ppm(bytes).map_err(|source| ImageryError::Decode { len: bytes.len(), source })
    }
}

#[derive(Debug)]
struct BucketState {
    tokens: f64,
    last: Instant,
}

/// Token bucket limiter: `rate` tokens per second, holding at most `burst`.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<BucketState>,
}

impl TokenBucket {
    pub fn new(rate_per_sec: f64, burst: f64) -> Self {
        assert!(rate_per_sec > 0.0 && burst >= 1.0, "rate must be positive and burst at least 1");
        Self { rate: rate_per_sec, burst, state: Mutex::new(BucketState { tokens: burst, last: Instant::now() }) }
    }

    /// Takes a token if one is available at `now`; otherwise returns how
    /// long until one will be.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut s = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let elapsed = now.saturating_duration_since(s.last).as_secs_f64();
        s.tokens = (s.tokens + elapsed * self.rate).min(self.burst);
        s.last = s.last.max(now);
        if s.tokens >= 1.0 {
            s.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - s.tokens) / self.rate))
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            match self.try_acquire_at(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait),
            }
        }
    }
}

/// Street View Static API style HTTP provider.
///
/// The request URL is `{endpoint}?{canonical request}&key={secret}`. The
/// key never appears in `Debug` output or in error messages.
pub struct StreetViewProvider {
    endpoint: String,
    api_key: String,
    limiter: TokenBucket,
    agent: ureq::Agent,
}

impl fmt::Debug for StreetViewProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StreetViewProvider")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .field("limiter", &self.limiter)
            .finish()
    }
}

impl StreetViewProvider {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, rate_per_sec: f64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            limiter: TokenBucket::new(rate_per_sec, rate_per_sec.max(1.0)),
            agent,
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, rate_per_sec: f64) -> Result<Self, ImageryError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).ok_or(ImageryError::MissingApiKey(API_KEY_ENV))?;
        Ok(Self::new(endpoint, key, rate_per_sec))
    }

    pub fn request_url(&self, req: &ImageRequest) -> String {
        format!("{}?{}&key={}", self.endpoint, req.canonical(), self.api_key)
    }
}

impl ImageProvider for StreetViewProvider {
    fn name(&self) -> &str {
        "streetview"
    }

    fn fetch(&self, req: &ImageRequest, _label: StreetContext) -> Result<Vec<u8>, ImageryError> {
        req.validate()?;
        self.limiter.acquire();
        let request = req.canonical();
        let transport = |e: ureq::Error| ImageryError::Transport { request: request.clone(), message: e.to_string() };
        let mut resp = self.agent.get(&self.request_url(req)).call().map_err(transport)?;
        let status = resp.status().as_u16();
        match status {
            200 => resp.body_mut().read_to_vec().map_err(transport),
            401 | 403 => Err(ImageryError::Auth { status, request }),
            404 => Err(ImageryError::NoCoverage { request }),
            429 => Err(ImageryError::RateLimited { request }),
            _ => Err(ImageryError::Http { status, request }),
        }
    }
}
