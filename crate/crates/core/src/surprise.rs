//! LLM surprise ratings.
//!
//! A [`VisionProvider`] receives the zero-shot chain-of-thought prompt plus
//! the image and returns free text ending in a `Rating:` line, which
//! [`parse_response`] turns into a 0..100 integer with its reasoning. The
//! [`StubProvider`] answers deterministically from the image bytes and never
//! touches the network. [`SurpriseScorer::score_corpus`] appends one JSON
//! line per image so an interrupted run resumes where it stopped.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imgio::RgbImage;

pub const SURPRISE_PROMPT: &str = "Q: Step by step, explain why this image is surprising or not. \
Consider factors like rare events, or unexpected content. Be precise in your reasoning. \
Then, on a precise scale from 0 to 100, rate the surprisal of this image.\n\
Provide your reasoning and numeric rating as follows:\n\
Reasoning: [your explanation]\n\
Rating: <<number>>";

#[derive(Debug, Error)]
pub enum SurpriseError {
    #[error("no rating found in response")]
    NoRating,
    #[error("rating {0} outside 0..100")]
    OutOfRange(f64),
    #[error("provider authentication failed: {0}")]
    Auth(String),
    #[error("provider request failed after {attempts} attempts: {last}")]
    Network { attempts: usize, last: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("response unparseable after {attempts} attempts: {last}")]
    Unparseable { attempts: usize, last: String },
    #[error("cannot read image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
}

/// Prompt text sent with every image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurprisePrompt {
    pub text: String,
}

impl Default for SurprisePrompt {
    fn default() -> Self {
        build_prompt()
    }
}

impl SurprisePrompt {
    /// Loads an alternative prompt, e.g. for complexity-rating experiments.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SurpriseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SurpriseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self { text })
    }
}

pub fn build_prompt() -> SurprisePrompt {
    SurprisePrompt {
        text: SURPRISE_PROMPT.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedResponse {
    pub rating: u8,
    pub reasoning: String,
}

const MARKUP: &[char] = &['*', '_', '`', '#', '~', '<', '>', '"', '\''];

fn strip_markup(s: &str) -> String {
    s.chars().filter(|c| !MARKUP.contains(c)).collect()
}

fn rating_marker(line: &str) -> Option<usize> {
    let cleaned = strip_markup(line);
    let lower = cleaned.to_ascii_lowercase();
    lower.find("rating:").map(|pos| pos + "rating:".len())
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim_start();
    let end = s
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || c == '.' || (i == 0 && (c == '-' || c == '+'))))
        .map_or(s.len(), |(i, _)| i);
    let token = s[..end].trim_end_matches('.');
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Extracts the last `Rating:` line and the reasoning preceding it.
///
/// Markup such as `**72**` is stripped, decimals are rounded half away from
/// zero, and ratings outside 0..100 are rejected.
pub fn parse_response(text: &str) -> Result<ParsedResponse, SurpriseError> {
    let lines: Vec<&str> = text.lines().collect();
    let (line_idx, after) = lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| rating_marker(l).map(|pos| (i, strip_markup(l)[pos..].to_string())))
        .ok_or(SurpriseError::NoRating)?;
    let value = parse_number(&after).ok_or(SurpriseError::NoRating)?;
    let rounded = value.round();
    if !(0.0..=100.0).contains(&rounded) {
        return Err(SurpriseError::OutOfRange(value));
    }

    let before = lines[..line_idx].join("\n");
    let reasoning = match find_reasoning_marker(&before) {
        Some(pos) => before[pos..]
            .trim_start_matches(|c: char| "*_`#~".contains(c))
            .to_string(),
        None => before,
    };
    Ok(ParsedResponse {
        rating: rounded as u8,
        reasoning: reasoning.trim().to_string(),
    })
}

fn find_reasoning_marker(text: &str) -> Option<usize> {
    let lower = text.to_ascii_lowercase();
    let pos = lower.find("reasoning:")?;
    Some(pos + "reasoning:".len())
}

/// Renders a response in the format the prompt requests.
pub fn format_response(rating: u8, reasoning: &str) -> String {
    format!("Reasoning: {reasoning}\nRating: {rating}")
}

/// A secret that never prints or serializes.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretString(String);

impl SecretString {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    /// Replaces any occurrence of the secret in `text`.
    pub fn redact(&self, text: &str) -> String {
        if self.0.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.0, "[redacted]")
        }
    }
}

impl std::fmt::Debug for SecretString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretString([redacted])")
    }
}

pub const DEFAULT_API_KEY_ENV: &str = "VISCOMP_API_KEY";

pub const OPENAI_STYLE_TEMPLATE: &str = r#"{"model":"{{model}}","messages":[{"role":"user","content":[{"type":"text","text":"{{prompt}}"},{"type":"image_url","image_url":{"url":"data:{{mime}};base64,{{image_base64}}"}}]}]}"#;

#[derive(Clone, Debug)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub api_key: Option<SecretString>,
    pub timeout: Duration,
    pub max_retries: usize,
    /// Request body with `{{model}}`, `{{prompt}}`, `{{mime}}` and
    /// `{{image_base64}}` placeholders, substituted JSON-escaped.
    pub request_template: String,
    /// JSON pointer to the response text.
    pub response_pointer: String,
    pub auth_header: String,
    pub auth_prefix: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_name: String::new(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            request_template: OPENAI_STYLE_TEMPLATE.to_string(),
            response_pointer: "/choices/0/message/content".to_string(),
            auth_header: "Authorization".to_string(),
            auth_prefix: "Bearer ".to_string(),
        }
    }
}

impl ProviderConfig {
    /// Reads the API key from environment variable `var`, if set.
    pub fn with_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty()).map(SecretString::new);
        self
    }
}

/// Encoded image bytes sent to a provider.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePayload {
    pub bytes: Vec<u8>,
    pub mime: &'static str,
}

impl ImagePayload {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SurpriseError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| SurpriseError::Image {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mime = match image::guess_format(&bytes) {
            Ok(image::ImageFormat::Png) => "image/png",
            Ok(image::ImageFormat::Jpeg) => "image/jpeg",
            _ => {
                return Err(SurpriseError::Image {
                    path: path.display().to_string(),
                    reason: "not a PNG or JPEG file".into(),
                })
            }
        };
        Ok(Self { bytes, mime })
    }

    pub fn from_image(img: &RgbImage) -> Self {
        Self {
            bytes: img.encode_png(),
            mime: "image/png",
        }
    }

    pub fn sha256_hex(&self) -> String {
        Sha256::digest(&self.bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// First eight bytes of the SHA-256 digest, big-endian.
    pub fn content_hash64(&self) -> u64 {
        let digest = Sha256::digest(&self.bytes);
        u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Worth retrying: timeouts, throttling, server errors.
    #[error("transient: {0}")]
    Transient(String),
    #[error("authentication: {0}")]
    Auth(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait VisionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, image: &ImagePayload) -> Result<String, ProviderError>;
}

/// Offline provider: rating is the content hash modulo 101.
#[derive(Clone, Debug, Default)]
pub struct StubProvider;

impl StubProvider {
    pub fn rating_for(image: &ImagePayload) -> u8 {
        (image.content_hash64() % 101) as u8
    }
}

impl VisionProvider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn complete(&self, _prompt: &str, image: &ImagePayload) -> Result<String, ProviderError> {
        let rating = Self::rating_for(image);
        Ok(format_response(
            rating,
            &format!("Deterministic offline rating derived from image content hash {:016x}.", image.content_hash64()),
        ))
    }
}

/// Generic JSON-over-HTTPS vision model client.
pub struct HttpProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    name: String,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, SurpriseError> {
        if cfg.endpoint.is_empty() {
            return Err(SurpriseError::Config("provider endpoint is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let name = format!("http:{}", cfg.model_name);
        Ok(Self { cfg, agent, name })
    }

    fn json_escape(s: &str) -> String {
        let quoted = serde_json::to_string(s).expect("string serializes");
        quoted[1..quoted.len() - 1].to_string()
    }

    pub fn render_request(&self, prompt: &str, image: &ImagePayload) -> String {
        let b64 = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
        self.cfg
            .request_template
            .replace("{{model}}", &Self::json_escape(&self.cfg.model_name))
            .replace("{{prompt}}", &Self::json_escape(prompt))
            .replace("{{mime}}", image.mime)
            .replace("{{image_base64}}", &b64)
    }

    fn redact(&self, s: String) -> String {
        match &self.cfg.api_key {
            Some(k) => k.redact(&s),
            None => s,
        }
    }
}

impl VisionProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, image: &ImagePayload) -> Result<String, ProviderError> {
        let body = self.render_request(prompt, image);
        let mut req = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header(
                self.cfg.auth_header.as_str(),
                format!("{}{}", self.cfg.auth_prefix, key.expose()),
            );
        }
        let mut resp = req
            .send(body)
            .map_err(|e| ProviderError::Transient(self.redact(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(self.redact(e.to_string())))?;
        let snippet: String = text.chars().take(200).collect();
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(self.redact(format!("status {status}: {snippet}")))),
            408 | 429 | 500..=599 => {
                return Err(ProviderError::Transient(self.redact(format!("status {status}: {snippet}"))))
            }
            _ => return Err(ProviderError::Fatal(self.redact(format!("status {status}: {snippet}")))),
        }
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fatal(format!("response is not JSON: {e}")))?;
        json.pointer(&self.cfg.response_pointer)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal(format!("no text at {}", self.cfg.response_pointer)))
    }
}

/// Time source for backoff and rate limiting.
pub trait Clock: Send + Sync {
    /// Monotonic time since the clock was created.
    fn elapsed(&self) -> Duration;
    fn sleep(&self, d: Duration);
    fn utc(&self) -> DateTime<Utc>;
}

pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }

    fn utc(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Virtual clock whose `sleep` advances time instantly.
pub struct ManualClock {
    base: DateTime<Utc>,
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn new(base: DateTime<Utc>) -> Self {
        Self {
            base,
            now: Mutex::new(Duration::ZERO),
        }
    }
}

impl Clock for ManualClock {
    fn elapsed(&self) -> Duration {
        *self.now.lock().expect("clock lock")
    }

    fn sleep(&self, d: Duration) {
        *self.now.lock().expect("clock lock") += d;
    }

    fn utc(&self) -> DateTime<Utc> {
        self.base + chrono::Duration::from_std(self.elapsed()).expect("duration in range")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurpriseResult {
    pub image_id: String,
    pub rating: u8,
    pub reasoning: String,
    pub provider: String,
    pub raw: String,
    pub sha256: String,
    pub timestamp: DateTime<Utc>,
}

/// One line of the corpus results log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurpriseRecord {
    pub image_id: String,
    pub rating: Option<u8>,
    pub reasoning: Option<String>,
    pub provider: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&SurpriseResult> for SurpriseRecord {
    fn from(r: &SurpriseResult) -> Self {
        Self {
            image_id: r.image_id.clone(),
            rating: Some(r.rating),
            reasoning: Some(r.reasoning.clone()),
            provider: r.provider.clone(),
            timestamp: r.timestamp,
            sha256: Some(r.sha256.clone()),
            raw: Some(r.raw.clone()),
            error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CorpusOutcome {
    Scored(SurpriseResult),
    /// Already present in the results log from an earlier run.
    Resumed(SurpriseRecord),
    Failed { image_id: String, error: String },
}

impl CorpusOutcome {
    pub fn image_id(&self) -> &str {
        match self {
            CorpusOutcome::Scored(r) => &r.image_id,
            CorpusOutcome::Resumed(r) => &r.image_id,
            CorpusOutcome::Failed { image_id, .. } => image_id,
        }
    }

    pub fn rating(&self) -> Option<u8> {
        match self {
            CorpusOutcome::Scored(r) => Some(r.rating),
            CorpusOutcome::Resumed(r) => r.rating,
            CorpusOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: usize) -> Duration {
        let factor = 1u32 << attempt.min(16);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusOptions {
    /// Ceiling on request starts per minute; `None` disables limiting.
    pub requests_per_minute: Option<u32>,
    pub max_in_flight: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            requests_per_minute: None,
            max_in_flight: 1,
        }
    }
}

struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Duration>,
}

impl RateLimiter {
    fn new(rpm: Option<u32>) -> Self {
        Self {
            interval: rpm.filter(|r| *r > 0).map(|r| Duration::from_secs_f64(60.0 / f64::from(r))),
            next: Mutex::new(Duration::ZERO),
        }
    }

    fn acquire(&self, clock: &dyn Clock) {
        let Some(interval) = self.interval else { return };
        let wait = {
            let mut next = self.next.lock().expect("limiter lock");
            let now = clock.elapsed();
            let slot = (*next).max(now);
            *next = slot + interval;
            slot - now
        };
        if !wait.is_zero() {
            clock.sleep(wait);
        }
    }
}

pub struct SurpriseScorer {
    provider: Box<dyn VisionProvider>,
    prompt: SurprisePrompt,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
}

impl SurpriseScorer {
    pub fn new(provider: Box<dyn VisionProvider>, clock: Arc<dyn Clock>) -> Self {
        Self {
            provider,
            prompt: build_prompt(),
            retry: RetryPolicy::default(),
            clock,
        }
    }

    pub fn with_prompt(mut self, prompt: SurprisePrompt) -> Self {
        self.prompt = prompt;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Sends the prompt and image, retrying transient failures and
    /// unparseable answers with exponential backoff.
    pub fn score_image(&self, image_id: &str, image: &ImagePayload) -> Result<SurpriseResult, SurpriseError> {
        let attempts = self.retry.max_retries + 1;
        let mut last_parse: Option<String> = None;
        let mut last_net: Option<String> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                self.clock.sleep(self.retry.delay(attempt - 1));
            }
            match self.provider.complete(&self.prompt.text, image) {
                Ok(raw) => match parse_response(&raw) {
                    Ok(parsed) => {
                        return Ok(SurpriseResult {
                            image_id: image_id.to_string(),
                            rating: parsed.rating,
                            reasoning: parsed.reasoning,
                            provider: self.provider.name().to_string(),
                            raw,
                            sha256: image.sha256_hex(),
                            timestamp: self.clock.utc(),
                        })
                    }
                    Err(e) => last_parse = Some(e.to_string()),
                },
                Err(ProviderError::Transient(msg)) => last_net = Some(msg),
                Err(ProviderError::Auth(msg)) => return Err(SurpriseError::Auth(msg)),
                Err(ProviderError::Fatal(msg)) => return Err(SurpriseError::Provider(msg)),
            }
        }
        match (last_parse, last_net) {
            (Some(last), _) => Err(SurpriseError::Unparseable { attempts, last }),
            (None, Some(last)) => Err(SurpriseError::Network { attempts, last }),
            (None, None) => unreachable!("at least one attempt is made"),
        }
    }

    /// Scores every entry, appending each outcome to `out` as it completes.
    /// Entries already rated in `out` are skipped. Results follow the order
    /// of `entries`.
    pub fn score_corpus(
        &self,
        entries: &[CorpusEntry],
        out: &Path,
        opts: CorpusOptions,
    ) -> Result<Vec<CorpusOutcome>, SurpriseError> {
        let io_err = |source| SurpriseError::Io {
            path: out.display().to_string(),
            source,
        };
        let done = read_results_log(out)?;
        let mut results: Vec<Option<CorpusOutcome>> = entries
            .iter()
            .map(|e| done.get(&e.image_id).cloned().map(CorpusOutcome::Resumed))
            .collect();
        let todo: Vec<usize> = (0..entries.len()).filter(|&i| results[i].is_none()).collect();

        let mut file = OpenOptions::new().create(true).append(true).open(out).map_err(io_err)?;
        let limiter = RateLimiter::new(opts.requests_per_minute);
        let cursor = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, CorpusOutcome)>();
        let workers = opts.max_in_flight.max(1).min(todo.len().max(1));

        std::thread::scope(|scope| -> Result<(), SurpriseError> {
            for _ in 0..workers {
                let tx = tx.clone();
                let (todo, cursor, limiter) = (&todo, &cursor, &limiter);
                scope.spawn(move || loop {
                    let k = cursor.fetch_add(1, Ordering::SeqCst);
                    let Some(&idx) = todo.get(k) else { break };
                    let entry = &entries[idx];
                    limiter.acquire(self.clock.as_ref());
                    let outcome = ImagePayload::from_path(&entry.path)
                        .and_then(|img| self.score_image(&entry.image_id, &img))
                        .map_or_else(
                            |e| CorpusOutcome::Failed {
                                image_id: entry.image_id.clone(),
                                error: e.to_string(),
                            },
                            CorpusOutcome::Scored,
                        );
                    if tx.send((idx, outcome)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // Single writer: only this thread touches the log.
            for (idx, outcome) in rx {
                let record = match &outcome {
                    CorpusOutcome::Scored(r) => SurpriseRecord::from(r),
                    CorpusOutcome::Failed { image_id, error } => SurpriseRecord {
                        image_id: image_id.clone(),
                        rating: None,
                        reasoning: None,
                        provider: self.provider.name().to_string(),
                        timestamp: self.clock.utc(),
                        sha256: None,
                        raw: None,
                        error: Some(error.clone()),
                    },
                    CorpusOutcome::Resumed(_) => unreachable!("resumed entries are not scheduled"),
                };
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(file, "{line}").and_then(|_| file.flush()).map_err(io_err)?;
                results[idx] = Some(outcome);
            }
            Ok(())
        })?;

        Ok(results.into_iter().map(|r| r.expect("every entry resolved")).collect())
    }
}

/// Successfully rated records in a results log, keyed by image id. A
/// missing file is empty; a torn final line is ignored.
pub fn read_results_log(path: &Path) -> Result<HashMap<String, SurpriseRecord>, SurpriseError> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(source) => {
            return Err(SurpriseError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let mut out = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| SurpriseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if let Ok(rec) = serde_json::from_str::<SurpriseRecord>(&line) {
            if rec.rating.is_some() {
                out.insert(rec.image_id.clone(), rec);
            }
        }
    }
    Ok(out)
}
