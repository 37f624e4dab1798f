//! Chat-completion client for the model-backed instruction variants.
//!
//! This is the only code that talks to the network. Requests run on at most
//! `max_in_flight` threads; HTTP 429, 5xx and transport failures are retried
//! with exponential backoff, anything else is recorded against the request
//! and the batch continues.

use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use base64::Engine;
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::prompts::{ModelResponse, PromptRequest};
use crate::corpus::BoundingBox;

pub const ENV_URL: &str = "GROUNDKIT_LLM_URL";
pub const ENV_KEY: &str = "GROUNDKIT_LLM_KEY";

const MAX_BACKOFF_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    /// Chat-completion URL; falls back to `GROUNDKIT_LLM_URL`.
    pub endpoint: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "qwen2.5-vl-72b-instruct".into(),
            max_in_flight: 4,
            max_retries: 3,
            initial_backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl ClientConfig {
    pub fn resolved_endpoint(&self) -> Option<String> {
        self.endpoint
            .clone()
            .or_else(|| std::env::var(ENV_URL).ok())
            .filter(|s| !s.trim().is_empty())
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(MAX_BACKOFF_MS))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("transport failure: {0}")]
    Io(String),
    #[error("unusable reply: {0}")]
    Invalid(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportError::Io(_) => true,
            TransportError::Invalid(_) => false,
        }
    }
}

/// Sends one rendered prompt and returns the model's raw text.
pub trait ChatTransport: Sync {
    fn complete(&self, request: &PromptRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub request_id: String,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<ModelResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SubmitResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn submit_one(request: &PromptRequest, cfg: &ClientConfig, transport: &dyn ChatTransport) -> SubmitResult {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match transport.complete(request) {
            Ok(raw) => {
                let response = ModelResponse::from_raw(raw, request.prompt_kind);
                let error = response.parsed.is_none().then(|| "malformed response".to_string());
                return SubmitResult {
                    request_id: request.id.clone(),
                    attempts,
                    response: Some(response),
                    error,
                };
            }
            Err(e) if e.is_retryable() && attempts <= cfg.max_retries => {
                log::debug!("request {} attempt {attempts} failed: {e}; retrying", request.id);
                thread::sleep(cfg.backoff(attempts));
            }
            Err(e) => {
                log::warn!("request {} failed after {attempts} attempt(s): {e}", request.id);
                return SubmitResult {
                    request_id: request.id.clone(),
                    attempts,
                    response: None,
                    error: Some(e.to_string()),
                };
            }
        }
    }
}

/// Submit every request; results come back in request order.
pub fn submit_prompts(
    requests: &[PromptRequest],
    cfg: &ClientConfig,
    transport: &dyn ChatTransport,
) -> Vec<SubmitResult> {
    let workers = cfg.max_in_flight.max(1).min(requests.len());
    let next = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, SubmitResult)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(req) = requests.get(i) else { break };
                        done.push((i, submit_one(req, cfg, transport)));
                    }
                    done
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("submit worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

/// OpenAI-style chat-completion transport. Sends the screenshot with the
/// target outlined in red and an enlarged crop around it, both as PNG data
/// URLs, followed by the rendered prompt.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: String,
}

impl HttpTransport {
    /// Fails when no endpoint is configured in `cfg` or the environment.
    pub fn new(cfg: &ClientConfig) -> Result<Self, TransportError> {
        let endpoint = cfg
            .resolved_endpoint()
            .ok_or_else(|| TransportError::Invalid(format!("no model endpoint configured (set {ENV_URL})")))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            api_key: std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty()),
            model: cfg.model.clone(),
        })
    }

    fn body(&self, request: &PromptRequest) -> Result<serde_json::Value, TransportError> {
        let img = image::open(&request.full_image_ref)
            .map_err(|e| TransportError::Invalid(format!("{}: {e}", request.full_image_ref)))?
            .to_rgb8();
        let (full, crop) = annotated_views(img, &request.target_box);
        let image_part = |img: &RgbImage| -> Result<serde_json::Value, TransportError> {
            Ok(serde_json::json!({"type": "image_url", "image_url": {"url": png_data_url(img)?}}))
        };
        Ok(serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [image_part(&full)?, image_part(&crop)?, {"type": "text", "text": request.rendered_prompt}],
            }],
        }))
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &PromptRequest) -> Result<String, TransportError> {
        let body = self.body(request)?;
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportError::Io(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| TransportError::Invalid(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Invalid("reply has no choices[0].message.content".into()))
    }
}

const OUTLINE_PX: i64 = 3;
const CROP_MARGIN_MIN_PX: f64 = 32.0;

/// The screenshot with a red outline around `b`, and a crop around it with a
/// margin of half the larger box side (at least 32 px).
pub fn annotated_views(mut img: RgbImage, b: &BoundingBox) -> (RgbImage, RgbImage) {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let (x1, y1) = (b.x1.floor() as i64, b.y1.floor() as i64);
    let (x2, y2) = (b.x2.ceil() as i64, b.y2.ceil() as i64);
    let red = Rgb([255, 0, 0]);
    for y in (y1 - OUTLINE_PX).max(0)..(y2 + OUTLINE_PX).min(h) {
        for x in (x1 - OUTLINE_PX).max(0)..(x2 + OUTLINE_PX).min(w) {
            let inside = x >= x1 && x < x2 && y >= y1 && y < y2;
            if !inside {
                img.put_pixel(x as u32, y as u32, red);
            }
        }
    }
    let margin = (b.width().max(b.height()) / 2.0).max(CROP_MARGIN_MIN_PX) as i64 + OUTLINE_PX;
    let cx0 = (x1 - margin).clamp(0, w - 1);
    let cy0 = (y1 - margin).clamp(0, h - 1);
    let cx1 = (x2 + margin).clamp(cx0 + 1, w);
    let cy1 = (y2 + margin).clamp(cy0 + 1, h);
    let crop =
        image::imageops::crop_imm(&img, cx0 as u32, cy0 as u32, (cx1 - cx0) as u32, (cy1 - cy0) as u32).to_image();
    (img, crop)
}

fn png_data_url(img: &RgbImage) -> Result<String, TransportError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| TransportError::Invalid(e.to_string()))?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    ))
}
