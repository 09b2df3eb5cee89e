//! Chat-completions client and "guess what" answer extraction.
//!
//! One completion is requested per object. The system message carries the
//! game framing; the user message carries the rendered contextual prompt. The
//! model is asked to finish with a line `Category: <name>`.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "GW_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "GW_LLM_ENDPOINT";

pub const GAME_FRAMING: &str = "We are playing a game of \"guess what\". You will receive clues \
about one object in an image: the scene, its position and size, short phrases matched to the \
object itself, and phrases matched to zoomed-in details and to its zoomed-out surroundings. \
Some clues are noisy or unrelated. Reason step by step about which clues fit together, then \
name the object. Finish with a final line of the form `Category: <name>`.";

/// API secret. Never printed, serialized or embedded in errors.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .map(ApiKey)
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub retries: u32,
    /// Delay before the first retry; doubles per attempt.
    pub backoff_ms: u64,
    #[serde(skip)]
    pub api_key: Option<ApiKey>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "qwen-plus".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 60.0,
            retries: 3,
            backoff_ms: 500,
            api_key: None,
        }
    }
}

pub const MAX_RETRIES: u32 = 10;

impl ChatConfig {
    /// Applies `GW_LLM_ENDPOINT` and `GW_LLM_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(ep) = std::env::var(ENDPOINT_ENV) {
            if !ep.trim().is_empty() {
                self.endpoint = ep;
            }
        }
        if let Some(key) = ApiKey::from_env() {
            self.api_key = Some(key);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.1).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "chat temperature {} outside [0.0, 0.1]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("chat max_tokens must be positive".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config("chat timeout must be positive".into()));
        }
        if self.retries > MAX_RETRIES {
            return Err(Error::Config(format!(
                "chat retries {} exceeds the limit of {MAX_RETRIES}",
                self.retries
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    Http,
    Mock,
}

pub trait ChatClient: Send + Sync {
    fn kind(&self) -> ChatKind;

    /// Identity string for run manifests.
    fn identity(&self) -> String;

    /// One request/response exchange, including any retries.
    fn complete(&self, messages: &[ChatMessage], cfg: &ChatConfig) -> Result<String>;
}

pub fn chat(client: &dyn ChatClient, messages: &[ChatMessage], cfg: &ChatConfig) -> Result<String> {
    client.complete(messages, cfg)
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for any endpoint speaking the chat-completions wire format.
pub struct HttpChatClient {
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(cfg: &ChatConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpChatClient { http })
    }

    fn attempt(&self, url: &str, body: &CompletionRequest<'_>, cfg: &ChatConfig) -> Attempt {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &cfg.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(RetryCause::Transport(describe(&e))),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Attempt::Retry(RetryCause::Status(status));
        }
        if status >= 400 {
            return Attempt::Fatal(Error::HttpStatus {
                status,
                attempts: 0,
            });
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(RetryCause::Transport(describe(&e))),
        };
        match serde_json::from_str::<CompletionResponse>(&text) {
            Ok(parsed) => match parsed.choices.into_iter().next() {
                Some(choice) => Attempt::Done(choice.message.content.unwrap_or_default()),
                None => Attempt::Fatal(Error::Decode("response has no choices".into())),
            },
            Err(e) => Attempt::Fatal(Error::Decode(e.to_string())),
        }
    }
}

/// reqwest errors carry the URL but never request headers.
fn describe(e: &reqwest::Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    msg
}

enum RetryCause {
    Transport(String),
    Status(u16),
}

enum Attempt {
    Done(String),
    Retry(RetryCause),
    Fatal(Error),
}

pub(crate) fn backoff_delay(base_ms: u64, retry_index: u32) -> Duration {
    let ms = base_ms.saturating_mul(1u64 << retry_index.min(16));
    Duration::from_millis(ms.min(30_000))
}

impl ChatClient for HttpChatClient {
    fn kind(&self) -> ChatKind {
        ChatKind::Http
    }

    fn identity(&self) -> String {
        "http".into()
    }

    fn complete(&self, messages: &[ChatMessage], cfg: &ChatConfig) -> Result<String> {
        let url = format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/'));
        let body = CompletionRequest {
            model: &cfg.model,
            messages,
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        };
        let total = cfg.retries + 1;
        let mut last = RetryCause::Transport("no attempt made".into());
        for attempt in 1..=total {
            match self.attempt(&url, &body, cfg) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(Error::HttpStatus { status, .. }) => {
                    return Err(Error::HttpStatus {
                        status,
                        attempts: attempt,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(cause) => {
                    log::debug!("chat attempt {attempt}/{total} failed");
                    last = cause;
                    if attempt < total {
                        std::thread::sleep(backoff_delay(cfg.backoff_ms, attempt - 1));
                    }
                }
            }
        }
        Err(match last {
            RetryCause::Transport(message) => Error::Transport {
                attempts: total,
                message,
            },
            RetryCause::Status(status) => Error::HttpStatus {
                status,
                attempts: total,
            },
        })
    }
}

type Responder = dyn Fn(&[ChatMessage]) -> Result<String> + Send + Sync;

/// Deterministic in-process stand-in for a chat endpoint.
#[derive(Clone)]
pub struct MockChatClient {
    name: String,
    responder: Arc<Responder>,
    calls: Arc<AtomicUsize>,
}

impl fmt::Debug for MockChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockChatClient")
            .field("name", &self.name)
            .finish()
    }
}

impl MockChatClient {
    pub fn from_fn<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[ChatMessage]) -> Result<String> + Send + Sync + 'static,
    {
        MockChatClient {
            name: name.into(),
            responder: Arc::new(f),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Replies with the last user message.
    pub fn echo() -> Self {
        Self::from_fn("mock:echo", |msgs| {
            Ok(msgs
                .iter()
                .rev()
                .find(|m| m.role == "user")
                .map(|m| m.content.clone())
                .unwrap_or_default())
        })
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::from_fn("mock:fixed", move |_| Ok(reply.clone()))
    }

    /// Answers with the first snippet on the prompt's main-object evidence
    /// line, the way a model that trusts the strongest match would.
    pub fn top_snippet() -> Self {
        Self::from_fn("mock:top_snippet", |msgs| {
            let prompt = msgs
                .iter()
                .rev()
                .find(|m| m.role == "user")
                .map(|m| m.content.as_str())
                .unwrap_or_default();
            Ok(match crate::prompt::first_main_snippet(prompt) {
                Some(s) => format!(
                    "The strongest main-object clue is \"{s}\", and the context does not contradict it.\nCategory: {s}"
                ),
                None => "No main-object evidence was given.".into(),
            })
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockChatClient {
    fn kind(&self) -> ChatKind {
        ChatKind::Mock
    }

    fn identity(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, messages: &[ChatMessage], _cfg: &ChatConfig) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(messages)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuessResult {
    pub reasoning: String,
    pub category_raw: String,
    pub raw_response: String,
    pub latency_ms: u64,
}

pub fn guess_category(client: &dyn ChatClient, prompt: &str, cfg: &ChatConfig) -> Result<GuessResult> {
    if prompt.trim().is_empty() {
        return Err(Error::Template("refusing to send an empty prompt".into()));
    }
    let messages = [ChatMessage::system(GAME_FRAMING), ChatMessage::user(prompt)];
    let start = Instant::now();
    let raw = chat(client, &messages, cfg)?;
    let latency_ms = start.elapsed().as_millis() as u64;
    if raw.trim().is_empty() {
        return Err(Error::EmptyCompletion);
    }
    let (reasoning, category_raw) = parse_answer(&raw)?;
    Ok(GuessResult {
        reasoning,
        category_raw,
        raw_response: raw,
        latency_ms,
    })
}

/// The answer line the prompt asks the model to finish with.
pub fn format_answer(reasoning: &str, category: &str) -> String {
    if reasoning.is_empty() {
        format!("Category: {category}")
    } else {
        format!("{reasoning}\nCategory: {category}")
    }
}

fn category_line(line: &str) -> Option<String> {
    let s = line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '>' | '_' | '-'));
    let head = s.get(..8)?;
    if !head.eq_ignore_ascii_case("category") {
        return None;
    }
    let rest = s[8..].trim_start_matches(['*', '_']).trim_start();
    let rest = rest.strip_prefix(':')?;
    let name = rest
        .trim()
        .trim_matches(|c: char| matches!(c, '*' | '_' | '"' | '\'' | '`'))
        .trim_end_matches('.')
        .trim();
    (!name.is_empty()).then(|| name.to_string())
}

const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "it's", "its", "as"];
const ARTICLES: &[&str] = &["a", "an", "the"];
const HEDGES: &[&str] = &[
    "likely", "probably", "most", "possibly", "definitely", "clearly", "perhaps", "certainly",
    "very", "quite", "almost", "therefore", "thus",
];

/// Final noun phrase of the last sentence: the words after the last copula and
/// the last article, lowercased.
fn trailing_noun_phrase(raw: &str) -> Option<String> {
    let sentence = raw
        .split(['.', '!', '?', '\n'])
        .map(str::trim)
        .rfind(|s| s.chars().any(char::is_alphanumeric))?;
    let words: Vec<String> = sentence
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect();
    let mut tail: &[String] = &words;
    if let Some(i) = tail.iter().rposition(|w| COPULAS.contains(&w.as_str())) {
        tail = &tail[i + 1..];
    }
    if let Some(i) = tail.iter().rposition(|w| ARTICLES.contains(&w.as_str())) {
        tail = &tail[i + 1..];
    }
    while let Some(first) = tail.first() {
        if HEDGES.contains(&first.as_str()) {
            tail = &tail[1..];
        } else {
            break;
        }
    }
    if tail.is_empty() {
        tail = words.last().map(std::slice::from_ref).unwrap_or(&[]);
    }
    let phrase = tail.join(" ");
    let phrase = phrase.trim_matches(|c: char| !c.is_alphanumeric());
    (!phrase.is_empty()).then(|| phrase.to_string())
}

/// Splits a completion into (reasoning, category).
///
/// The last line shaped like `Category: <name>` wins and everything before it
/// is the reasoning. Without such a line the final noun phrase of the last
/// sentence is used and the whole text is the reasoning.
pub fn parse_answer(raw: &str) -> Result<(String, String)> {
    let lines: Vec<&str> = raw.lines().collect();
    if let Some((idx, name)) = lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| category_line(l).map(|n| (i, n)))
    {
        let reasoning = lines[..idx].join("\n").trim().to_string();
        return Ok((reasoning, name));
    }
    match trailing_noun_phrase(raw) {
        Some(cat) => Ok((raw.trim().to_string(), cat)),
        None => Err(Error::UnparseableAnswer {
            raw: raw.to_string(),
        }),
    }
}
