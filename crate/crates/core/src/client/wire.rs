//! Wire client for OpenAI-compatible chat completions with image
//! attachments.
//!
//! Requests carry images as inline base64 data URLs, respect a shared
//! sliding-window rate ceiling, and retry transient failures with capped
//! exponential backoff. Auth failures and malformed bodies are terminal and
//! surface as distinct error classes.

use std::collections::VecDeque;
use std::fs;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::client::prompt::{ImageSource, Prompt, PromptSegment};
use crate::error::{Error, ErrorClass, Result};

/// Sampling settings sent with every request and folded into cache keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    64
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: default_max_tokens(),
        }
    }
}

/// A chat-completions endpoint and its client-side policy knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub decoding: DecodingParams,
    /// Maximum requests started in any sliding one-second window.
    #[serde(default = "default_rate")]
    pub rate_per_sec: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap_ms")]
    pub backoff_cap_ms: u64,
}

fn default_rate() -> u32 {
    4
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    250
}
fn default_backoff_cap_ms() -> u64 {
    2_000
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config("endpoint base_url is empty".into()));
        }
        if self.model.is_empty() {
            return Err(Error::Config("endpoint model is empty".into()));
        }
        if self.rate_per_sec == 0 {
            return Err(Error::Config("rate_per_sec must be > 0".into()));
        }
        if !self.decoding.temperature.is_finite() || self.decoding.temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Identifier folded into cache keys.
    pub fn model_id(&self) -> String {
        format!("{}@{}", self.model, self.base_url)
    }
}

/// Sliding one-second-window rate limiter, shared per endpoint.
pub struct RateLimiter {
    ceiling: usize,
    window: Duration,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(ceiling: u32) -> Self {
        RateLimiter {
            ceiling: ceiling.max(1) as usize,
            window: Duration::from_secs(1),
            starts: Mutex::new(VecDeque::new()),
        }
    }

    /// Block until starting a request keeps the window under the ceiling.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().unwrap();
                let now = Instant::now();
                while let Some(front) = starts.front() {
                    if now.duration_since(*front) >= self.window {
                        starts.pop_front();
                    } else {
                        break;
                    }
                }
                if starts.len() < self.ceiling {
                    starts.push_back(now);
                    return;
                }
                self.window - now.duration_since(*starts.front().unwrap())
            };
            std::thread::sleep(wait.min(Duration::from_millis(20)));
        }
    }
}

/// Successful wire call: the first assistant message plus attempt count.
#[derive(Debug, Clone, PartialEq)]
pub struct WireResponse {
    pub text: String,
    pub attempts: u32,
}

/// Terminal wire failure carrying its class and the attempts spent.
#[derive(Debug)]
pub struct WireFailure {
    pub class: ErrorClass,
    pub message: String,
    pub attempts: u32,
}

/// Blocking chat client; safe to share across worker threads.
pub struct ChatClient {
    endpoint: ModelEndpoint,
    http: reqwest::blocking::Client,
    auth_token: Option<String>,
    limiter: RateLimiter,
}

impl ChatClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let auth_token = match &endpoint.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| Error::Endpoint {
                class: ErrorClass::Auth,
                message: format!("auth environment variable {var} is not set"),
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let limiter = RateLimiter::new(endpoint.rate_per_sec);
        Ok(ChatClient {
            endpoint,
            http,
            auth_token,
            limiter,
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Render the OpenAI-compatible request body, loading attachment bytes.
    pub fn request_body(&self, prompt: &Prompt) -> std::result::Result<serde_json::Value, WireFailure> {
        let content = prompt_content_parts(prompt).map_err(|message| WireFailure {
            class: ErrorClass::Attachment,
            message,
            attempts: 0,
        })?;
        Ok(json!({
            "model": self.endpoint.model,
            "temperature": self.endpoint.decoding.temperature,
            "max_tokens": self.endpoint.decoding.max_tokens,
            "messages": [{ "role": "user", "content": content }],
        }))
    }

    /// Send the prompt, retrying transient failures, and return the first
    /// assistant message text.
    pub fn query(&self, prompt: &Prompt) -> std::result::Result<WireResponse, WireFailure> {
        let body = self.request_body(prompt)?;
        let url = format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let max_attempts = self.endpoint.max_retries + 1;
        let mut last: Option<WireFailure> = None;

        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let exp = self
                    .endpoint
                    .backoff_base_ms
                    .saturating_mul(1u64 << (attempt - 2).min(16));
                std::thread::sleep(Duration::from_millis(exp.min(self.endpoint.backoff_cap_ms)));
            }
            self.limiter.acquire();

            let mut req = self.http.post(&url).json(&body);
            if let Some(token) = &self.auth_token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Err(e) => {
                    let class = if e.is_timeout() {
                        ErrorClass::Timeout
                    } else {
                        ErrorClass::Connect
                    };
                    last = Some(WireFailure {
                        class,
                        message: e.to_string(),
                        attempts: attempt,
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    if status == 401 || status == 403 {
                        return Err(WireFailure {
                            class: ErrorClass::Auth,
                            message: format!("endpoint returned {status}"),
                            attempts: attempt,
                        });
                    }
                    if status == 429 || status.is_server_error() {
                        last = Some(WireFailure {
                            class: ErrorClass::RateLimited,
                            message: format!("endpoint returned {status}"),
                            attempts: attempt,
                        });
                        continue;
                    }
                    if !status.is_success() {
                        return Err(WireFailure {
                            class: ErrorClass::WireFormat,
                            message: format!("endpoint returned {status}"),
                            attempts: attempt,
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    return match extract_message(&text) {
                        Some(message) => Ok(WireResponse {
                            text: message,
                            attempts: attempt,
                        }),
                        None => Err(WireFailure {
                            class: ErrorClass::WireFormat,
                            message: format!("malformed response body: {}", truncate(&text, 120)),
                            attempts: attempt,
                        }),
                    };
                }
            }
        }
        Err(last.expect("at least one attempt ran"))
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.len() <= n {
        return s.to_string();
    }
    let mut end = n;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

/// Pull the first assistant message out of a chat-completions body.
fn extract_message(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    let content = value.get("choices")?.get(0)?.get("message")?.get("content")?;
    content.as_str().map(str::to_owned)
}

fn prompt_content_parts(prompt: &Prompt) -> std::result::Result<Vec<serde_json::Value>, String> {
    use base64_encode as b64;
    let mut parts = Vec::with_capacity(prompt.segments.len());
    for seg in &prompt.segments {
        match seg {
            PromptSegment::Text(t) => parts.push(json!({ "type": "text", "text": t })),
            PromptSegment::Image {
                media_type, source, ..
            } => {
                let bytes = match source {
                    ImageSource::Inline(b) => b.clone(),
                    ImageSource::Path(p) => fs::read(p)
                        .map_err(|e| format!("cannot read attachment {}: {e}", p.display()))?,
                };
                let url = format!("data:{media_type};base64,{}", b64(&bytes));
                parts.push(json!({ "type": "image_url", "image_url": { "url": url } }));
            }
        }
    }
    Ok(parts)
}

/// Parse a wire request body back into a [`Prompt`] with inline attachments.
///
/// Together with [`ChatClient::request_body`] this gives a lossless round
/// trip through the documented wire schema.
pub fn prompt_from_wire(body: &serde_json::Value) -> Result<Prompt> {
    let content = body
        .get("messages")
        .and_then(|m| m.get(0))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_array())
        .ok_or_else(|| Error::Endpoint {
            class: ErrorClass::WireFormat,
            message: "missing messages[0].content".into(),
        })?;
    let mut segments = Vec::new();
    for part in content {
        match part.get("type").and_then(|t| t.as_str()) {
            Some("text") => {
                let text = part
                    .get("text")
                    .and_then(|t| t.as_str())
                    .ok_or_else(|| wire_err("text part without text"))?;
                segments.push(PromptSegment::Text(text.to_string()));
            }
            Some("image_url") => {
                let url = part
                    .get("image_url")
                    .and_then(|u| u.get("url"))
                    .and_then(|u| u.as_str())
                    .ok_or_else(|| wire_err("image part without url"))?;
                let (media_type, bytes) = parse_data_url(url)
                    .ok_or_else(|| wire_err("image url is not a base64 data url"))?;
                segments.push(PromptSegment::Image {
                    hash: crate::hash::ContentHash::of_bytes(&bytes),
                    media_type,
                    source: ImageSource::Inline(bytes),
                });
            }
            _ => return Err(wire_err("unknown content part type")),
        }
    }
    Ok(Prompt {
        template_id: "wire".to_string(),
        segments,
    })
}

fn wire_err(message: &str) -> Error {
    Error::Endpoint {
        class: ErrorClass::WireFormat,
        message: message.to_string(),
    }
}

fn parse_data_url(url: &str) -> Option<(String, Vec<u8>)> {
    let rest = url.strip_prefix("data:")?;
    let (media_type, payload) = rest.split_once(";base64,")?;
    Some((media_type.to_string(), base64_decode(payload)?))
}

const B64_ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

fn base64_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = (u32::from(b[0]) << 16) | (u32::from(b[1]) << 8) | u32::from(b[2]);
        let chars = [
            B64_ALPHABET[(n >> 18) as usize & 63],
            B64_ALPHABET[(n >> 12) as usize & 63],
            B64_ALPHABET[(n >> 6) as usize & 63],
            B64_ALPHABET[n as usize & 63],
        ];
        let keep = chunk.len() + 1;
        for (i, c) in chars.iter().enumerate() {
            out.push(if i < keep { *c as char } else { '=' });
        }
    }
    out
}

fn base64_decode(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len() / 4 * 3);
    let mut acc = 0u32;
    let mut bits = 0u32;
    for c in s.bytes() {
        if c == b'=' {
            break;
        }
        let v = B64_ALPHABET.iter().position(|&a| a == c)? as u32;
        acc = (acc << 6) | v;
        bits += 6;
        if bits >= 8 {
            bits -= 8;
            out.push((acc >> bits) as u8);
        }
    }
    Some(out)
}
