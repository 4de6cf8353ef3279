//! Client for chat-completions endpoints, reply parsing and belief
//! elicitation.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bayes::FactorizedBelief;
use crate::render::{preference_prefix, wording, RenderMode};
use crate::reward::FeatureKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Training weight; only meaningful in exported corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<u8>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            weight: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("could not parse reply: {raw:?}")]
    Parse { raw: String },
    #[error("endpoint does not supply usable logprobs")]
    Unsupported,
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("empty message content at position {0}")]
    EmptyMessage(usize),
    #[error("recording failed: {0}")]
    Record(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_ms: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Request/response pairs are appended here as JSON lines.
    #[serde(default)]
    pub record_path: Option<PathBuf>,
}

fn default_in_flight() -> usize {
    4
}
fn default_top_logprobs() -> u32 {
    20
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout() -> u64 {
    60_000
}

impl GatewayConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env_var: None,
            temperature: 0.0,
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
            top_logprobs: default_top_logprobs(),
            max_tokens: default_max_tokens(),
            timeout_ms: default_timeout(),
            record_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config(
                "max_attempts must be at least 1".into(),
            ));
        }
        if self.top_logprobs < 20 {
            return Err(GatewayError::Config(
                "top_logprobs must be at least 20".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Alternatives offered at one generated position.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenLogprobs {
    pub token: String,
    pub logprob: f64,
    pub top: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub logprobs: Option<Vec<TokenLogprobs>>,
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A configured endpoint. Shareable across threads; at most
/// `max_in_flight` requests are outstanding at once.
pub struct Gateway {
    cfg: GatewayConfig,
    client: reqwest::blocking::Client,
    slots: Slots,
    recorder: Option<Mutex<File>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

/// Wire request body. Identical inputs give identical bodies.
pub fn request_body(cfg: &GatewayConfig, messages: &[ChatMessage], logprobs: bool) -> Value {
    let msgs: Vec<Value> = messages
        .iter()
        .map(|m| json!({ "role": m.role, "content": m.content }))
        .collect();
    let mut body = json!({
        "model": cfg.model_name,
        "messages": msgs,
        "temperature": cfg.temperature,
        "max_tokens": if logprobs { 1 } else { cfg.max_tokens },
    });
    if logprobs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(cfg.top_logprobs);
    }
    body
}

fn parse_response(body: &Value) -> Result<Completion, GatewayError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Malformed("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Malformed("missing message content".into()))?
        .to_string();
    let logprobs = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .map(|it| {
                    let token = it
                        .get("token")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string();
                    let logprob = it
                        .get("logprob")
                        .and_then(Value::as_f64)
                        .unwrap_or(f64::NEG_INFINITY);
                    let top = it
                        .get("top_logprobs")
                        .and_then(Value::as_array)
                        .map(|alts| {
                            alts.iter()
                                .filter_map(|a| {
                                    Some((
                                        a.get("token")?.as_str()?.to_string(),
                                        a.get("logprob")?.as_f64()?,
                                    ))
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    TokenLogprobs {
                        token,
                        logprob,
                        top,
                    }
                })
                .collect()
        });
    Ok(Completion { text, logprobs })
}

fn transient(status: u16) -> bool {
    status == 429 || status >= 500
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let recorder = match &cfg.record_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        Ok(Self {
            slots: Slots {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            },
            cfg,
            client,
            recorder,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn record(&self, request: &Value, status: u16, response: &Value) -> Result<(), GatewayError> {
        if let Some(rec) = &self.recorder {
            let line = json!({ "request": request, "status": status, "response": response });
            let mut f = rec.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    /// Sends one chat completion, retrying 429, 5xx and transport errors
    /// with exponential backoff.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        logprobs: bool,
    ) -> Result<Completion, GatewayError> {
        if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
            return Err(GatewayError::EmptyMessage(i));
        }
        let body = request_body(&self.cfg, messages, logprobs);
        let url = self.cfg.endpoint();
        let key = self
            .cfg
            .api_key_env_var
            .as_ref()
            .and_then(|v| std::env::var(v).ok());
        let mut last = String::new();
        for attempt in 1..=self.cfg.retry.max_attempts {
            if attempt > 1 {
                let wait = self
                    .cfg
                    .retry
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 2).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let sent = {
                let _slot = self.slots.acquire();
                let mut req = self.client.post(&url).json(&body);
                if let Some(k) = &key {
                    req = req.bearer_auth(k);
                }
                req.send().and_then(|r| {
                    let status = r.status().as_u16();
                    r.text().map(|t| (status, t))
                })
            };
            let (status, text) = match sent {
                Ok(x) => x,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let parsed: Value = serde_json::from_str(&text).unwrap_or(Value::String(text.clone()));
            self.record(&body, status, &parsed)?;
            if transient(status) {
                last = format!("status {status}");
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(GatewayError::Status { status, body: text });
            }
            if !parsed.is_object() {
                return Err(GatewayError::Malformed(
                    "response is not a JSON object".into(),
                ));
            }
            return parse_response(&parsed);
        }
        Err(GatewayError::Network {
            attempts: self.cfg.retry.max_attempts,
            message: last,
        })
    }

    /// Per-level probabilities from the next-token distribution after the
    /// preference prefix.
    pub fn elicit_scoring(
        &self,
        context: &[ChatMessage],
        kind: FeatureKind,
        mode: RenderMode,
    ) -> Result<[f64; 5], GatewayError> {
        let msgs = elicitation_messages(context, kind, mode, false);
        let completion = self.complete(&msgs, true)?;
        let first = completion
            .logprobs
            .as_ref()
            .and_then(|l| l.first())
            .ok_or(GatewayError::Unsupported)?;
        scoring_distribution(&first.top)
    }

    /// Per-level probabilities stated in a generated reply.
    pub fn elicit_generation(
        &self,
        context: &[ChatMessage],
        kind: FeatureKind,
        mode: RenderMode,
    ) -> Result<[f64; 5], GatewayError> {
        let msgs = elicitation_messages(context, kind, mode, true);
        let completion = self.complete(&msgs, false)?;
        parse_generation(&completion.text)
    }

    /// Scoring first, falling back to generation when logprobs are missing.
    pub fn elicit_belief(
        &self,
        context: &[ChatMessage],
        kinds: &[FeatureKind],
        mode: RenderMode,
    ) -> Result<FactorizedBelief, GatewayError> {
        let mut rows = Vec::with_capacity(kinds.len());
        for &k in kinds {
            let row = match self.elicit_scoring(context, k, mode) {
                Err(GatewayError::Unsupported) => self.elicit_generation(context, k, mode)?,
                other => other?,
            };
            rows.push(row);
        }
        FactorizedBelief::new(rows).map_err(|e| GatewayError::Malformed(e.to_string()))
    }
}

/// Conversation with the belief query appended. Scoring mode ends with an
/// assistant turn holding the answer prefix, to be continued by one token.
pub fn elicitation_messages(
    context: &[ChatMessage],
    kind: FeatureKind,
    mode: RenderMode,
    generation: bool,
) -> Vec<ChatMessage> {
    let mut msgs = context.to_vec();
    let w = wording(kind, mode);
    msgs.push(ChatMessage::user(crate::render::render_belief_query(
        kind.label(),
        &w,
        generation,
    )));
    if !generation {
        msgs.push(ChatMessage::assistant(preference_prefix(kind)));
    }
    msgs
}

/// Exponentiates and renormalises the mass on tokens "1".."5". Several
/// surface forms of one digit (e.g. with a leading space) are pooled.
pub fn scoring_distribution(top: &[(String, f64)]) -> Result<[f64; 5], GatewayError> {
    let mut logs: [Vec<f64>; 5] = Default::default();
    for (tok, lp) in top {
        let t = tok.trim();
        if t.len() == 1 {
            if let Some(d) = t.chars().next().and_then(|c| c.to_digit(10)) {
                if (1..=5).contains(&d) && lp.is_finite() {
                    logs[d as usize - 1].push(*lp);
                }
            }
        }
    }
    if logs.iter().all(Vec::is_empty) {
        return Err(GatewayError::Unsupported);
    }
    let max = logs
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; 5];
    for (o, l) in out.iter_mut().zip(&logs) {
        *o = l.iter().map(|x| (x - max).exp()).sum();
    }
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

/// Reads "- k: NN%" lines for k = 1..5.
pub fn parse_generation(text: &str) -> Result<[f64; 5], GatewayError> {
    static LINE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re =
        LINE.get_or_init(|| Regex::new(r"(?m)^\s*-\s*([1-5])\s*:\s*(\d+(?:\.\d+)?)\s*%").unwrap());
    let mut vals: [Option<f64>; 5] = [None; 5];
    for cap in re.captures_iter(text) {
        let k: usize = cap[1].parse().unwrap();
        if vals[k - 1].is_none() {
            vals[k - 1] = cap[2].parse::<f64>().ok();
        }
    }
    let parse_err = || GatewayError::Parse {
        raw: text.to_string(),
    };
    let mut out = [0.0; 5];
    for (o, v) in out.iter_mut().zip(vals) {
        *o = v.ok_or_else(parse_err)? / 100.0;
    }
    let sum: f64 = out.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(parse_err());
    }
    if (sum - 1.0).abs() > 1e-9 {
        for o in &mut out {
            *o /= sum;
        }
    }
    Ok(out)
}

fn choice_regex(noun: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b{}\s+(\d+)\b", regex::escape(noun))).expect("escaped noun")
}

fn first_valid(re: &Regex, text: &str, k: usize) -> Option<usize> {
    re.captures_iter(text)
        .filter_map(|c| c[1].parse::<usize>().ok())
        .find(|i| (1..=k).contains(i))
}

/// The option index a reply commits to. The answer is the first in-range
/// "{noun} {i}" after the last "best option" that is followed by one;
/// otherwise the first in-range "{noun} {i}" anywhere.
pub fn parse_choice(text: &str, k: usize, noun: &str) -> Result<usize, GatewayError> {
    static PHRASE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let phrase = PHRASE.get_or_init(|| Regex::new(r"(?i)best\s+option").unwrap());
    let re = choice_regex(noun);
    let anchors: Vec<usize> = phrase.find_iter(text).map(|m| m.end()).collect();
    for &pos in anchors.iter().rev() {
        if let Some(i) = first_valid(&re, &text[pos..], k) {
            return Ok(i);
        }
    }
    first_valid(&re, text, k).ok_or_else(|| GatewayError::Parse {
        raw: text.to_string(),
    })
}
