//! LLM gateway: the text-completion boundary used by tree construction and
//! by the prompt-driven selector.
//!
//! Three implementations ship here:
//! - [`RemoteGateway`], a chat-completions client with retries and an
//!   in-flight cap,
//! - [`ScriptedGateway`], rule-based canned responses loaded from JSON,
//! - [`FnGateway`], a closure wrapper for tests.
//!
//! [`MeteredGateway`] wraps any of them and appends one [`UsageRecord`] per
//! call to a shared [`UsageLedger`].

use std::fmt::Write as _;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    /// Ask for per-token log-probabilities (first-token alternatives).
    pub logprobs: bool,
    pub seed: Option<u64>,
    /// Free-form tag recorded in the usage ledger ("criteria", "partition", ...).
    #[serde(skip)]
    pub purpose: String,
}

impl ChatRequest {
    pub fn prompt(text: impl Into<String>, purpose: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            logprobs: false,
            seed: None,
            purpose: purpose.into(),
        }
    }

    pub fn with_logprobs(mut self) -> Self {
        self.logprobs = true;
        self
    }

    /// The concatenated message contents, as used for rule matching and token estimates.
    pub fn full_text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Alternatives at this position as (token, logprob), best first.
    #[serde(default)]
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    #[serde(default)]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

impl Completion {
    /// A completion whose usage is estimated with [`approx_token_count`].
    pub fn estimated(req: &ChatRequest, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            usage: Usage {
                input_tokens: approx_token_count(&req.full_text()) as u64,
                output_tokens: approx_token_count(&text) as u64,
            },
            text,
            logprobs: None,
        }
    }

    /// Probability mass that the first generated token is `word`
    /// (case-insensitive, surrounding whitespace ignored).
    pub fn first_token_probability(&self, word: &str) -> Option<f64> {
        let first = self.logprobs.as_ref()?.first()?;
        let mut alts = first.top.clone();
        if !alts.iter().any(|(t, _)| t == &first.token) {
            alts.push((first.token.clone(), first.logprob));
        }
        Some(
            alts.iter()
                .filter(|(t, _)| t.trim().eq_ignore_ascii_case(word))
                .map(|(_, lp)| lp.exp())
                .sum::<f64>()
                .min(1.0),
        )
    }
}

pub trait LlmGateway: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<Completion>;
}

impl<G: LlmGateway + ?Sized> LlmGateway for &G {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        (**self).complete(req)
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for Box<G> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        (**self).complete(req)
    }
}

/// Crude tokenizer stand-in: words and individual punctuation marks.
pub fn approx_token_count(text: &str) -> usize {
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    TOKEN
        .get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid regex"))
        .find_iter(text)
        .count()
}

/// The body of the first fenced code block, or the whole trimmed text.
pub fn extract_structured(text: &str) -> &str {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        // skip an info string such as "json"
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    text.trim()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub backend: String,
    pub purpose: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u128,
}

/// Append-only, thread-safe list of per-call token counts.
#[derive(Debug, Default)]
pub struct UsageLedger {
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, backend: &str, purpose: &str, usage: Usage) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        self.records.lock().expect("ledger lock").push(UsageRecord {
            backend: backend.to_string(),
            purpose: purpose.to_string(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            timestamp_ms,
        });
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger lock").clone()
    }

    pub fn calls(&self) -> usize {
        self.records.lock().expect("ledger lock").len()
    }

    pub fn totals(&self) -> Usage {
        let mut u = Usage::default();
        for r in self.records.lock().expect("ledger lock").iter() {
            u += Usage {
                input_tokens: r.input_tokens,
                output_tokens: r.output_tokens,
            };
        }
        u
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Token and cost table; prices are USD per million tokens.
    pub fn render_table(&self, price_in_per_m: Option<f64>, price_out_per_m: Option<f64>) -> String {
        render_usage_table(self.totals(), price_in_per_m, price_out_per_m)
    }
}

pub fn render_usage_table(u: Usage, price_in_per_m: Option<f64>, price_out_per_m: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>16} {:>16} {:>16}", "#Input Tokens", "#Output Tokens", "Total");
    let _ = writeln!(
        out,
        "{:>16} {:>16} {:>16}",
        group_thousands(u.input_tokens),
        group_thousands(u.output_tokens),
        group_thousands(u.total())
    );
    if let (Some(pi), Some(po)) = (price_in_per_m, price_out_per_m) {
        let ci = u.input_tokens as f64 * pi / 1e6;
        let co = u.output_tokens as f64 * po / 1e6;
        let _ = writeln!(out, "{:>16} {:>16} {:>16}", "Input Cost", "Output Cost", "Total");
        let _ = writeln!(
            out,
            "{:>16} {:>16} {:>16}",
            format!("${ci:.4}"),
            format!("${co:.4}"),
            format!("${:.4}", ci + co)
        );
    }
    out
}

pub(crate) fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Records every call of the wrapped gateway into a ledger.
pub struct MeteredGateway<'a, G: ?Sized> {
    inner: &'a G,
    ledger: &'a UsageLedger,
}

impl<'a, G: LlmGateway + ?Sized> MeteredGateway<'a, G> {
    pub fn new(inner: &'a G, ledger: &'a UsageLedger) -> Self {
        Self { inner, ledger }
    }
}

impl<G: LlmGateway + ?Sized> LlmGateway for MeteredGateway<'_, G> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        let c = self.inner.complete(req)?;
        self.ledger.record(self.inner.id(), &req.purpose, c.usage);
        Ok(c)
    }
}

/// Closure-backed gateway; usage is estimated from the texts.
pub struct FnGateway<F> {
    id: String,
    f: F,
}

impl<F> FnGateway<F>
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { id: "fn".into(), f }
    }
}

impl<F> LlmGateway for FnGateway<F>
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        let text = (self.f)(req)?;
        Ok(Completion::estimated(req, text))
    }
}

/// One canned response: used when every `contains` substring occurs in the prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: String,
    /// Probability reported for a first-token "Yes" (coherence scoring).
    #[serde(default)]
    pub yes_probability: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GatewayScript {
    pub rules: Vec<ScriptRule>,
    /// Used when no rule matches; absent means a backend error.
    #[serde(default)]
    pub default: Option<ScriptRule>,
}

/// Deterministic rule-matching gateway. First matching rule wins.
#[derive(Debug, Clone)]
pub struct ScriptedGateway {
    script: GatewayScript,
}

impl ScriptedGateway {
    pub fn new(script: GatewayScript) -> Self {
        Self { script }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let script: GatewayScript =
            serde_json::from_slice(bytes).map_err(|e| Error::validation(format!("gateway script: {e}")))?;
        Ok(Self::new(script))
    }
}

impl LlmGateway for ScriptedGateway {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        let text = req.full_text();
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|s| text.contains(s.as_str())))
            .or(self.script.default.as_ref())
            .ok_or_else(|| {
                let head: String = text.chars().take(120).collect();
                Error::backend(format!("no script rule matches prompt starting {head:?}"))
            })?;
        let mut c = Completion::estimated(req, rule.response.clone());
        if let Some(p) = rule.yes_probability {
            let p = p.clamp(0.0, 1.0);
            let no = 1.0 - p;
            c.logprobs = Some(vec![TokenLogprob {
                token: if p >= no { "Yes" } else { "No" }.into(),
                logprob: p.max(no).ln(),
                top: vec![("Yes".into(), p.ln()), ("No".into(), no.ln())],
            }]);
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    /// Backoff before the first retry; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Prompt token budget used by selectors when truncating contexts.
    #[serde(default)]
    pub max_prompt_tokens: Option<usize>,
}

fn default_token_env() -> String {
    "HIEREL_API_TOKEN".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> usize {
    3
}
fn default_in_flight() -> usize {
    8
}
fn default_backoff() -> u64 {
    500
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    used: Mutex<usize>,
    cap: usize,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        InFlightGuard { owner: self }
    }
}

struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.owner.used.lock().expect("in-flight lock") -= 1;
        self.owner.freed.notify_one();
    }
}

/// Chat-completions client (OpenAI-compatible wire format).
pub struct RemoteGateway {
    cfg: RemoteConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
    id: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f32,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireTop>,
}

#[derive(Deserialize)]
struct WireTop {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl RemoteGateway {
    /// Reads the bearer token from `cfg.token_env`; a missing variable means no auth header.
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        let token = std::env::var(&cfg.token_env).ok();
        Self::with_token(cfg, token)
    }

    pub fn with_token(cfg: RemoteConfig, token: Option<String>) -> Result<Self> {
        if cfg.in_flight == 0 {
            return Err(Error::validation("remote in_flight must be at least 1"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::backend(format!("http client: {e}")))?;
        Ok(Self {
            id: format!("remote:{}", cfg.model),
            in_flight: InFlight {
                used: Mutex::new(0),
                cap: cfg.in_flight,
                freed: Condvar::new(),
            },
            cfg,
            token,
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, body: &WireRequest<'_>) -> std::result::Result<Completion, (bool, String)> {
        let mut rb = self.client.post(self.url()).json(body);
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        let resp = rb.send().map_err(|e| (true, format!("request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let text = resp.text().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {text}")));
        }
        let wire: WireResponse = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| (false, "response has no choices".to_string()))?;
        let text = choice.message.content.unwrap_or_default();
        let usage = wire
            .usage
            .map(|u| Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        let logprobs = choice.logprobs.and_then(|l| l.content).map(|toks| {
            toks.into_iter()
                .map(|t| TokenLogprob {
                    token: t.token,
                    logprob: t.logprob,
                    top: t.top_logprobs.into_iter().map(|x| (x.token, x.logprob)).collect(),
                })
                .collect()
        });
        Ok(Completion { text, usage, logprobs })
    }
}

impl LlmGateway for RemoteGateway {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        let body = WireRequest {
            model: &self.cfg.model,
            messages: &req.messages,
            temperature: req.temperature,
            logprobs: req.logprobs,
            top_logprobs: req.logprobs.then_some(5),
            seed: req.seed,
        };
        let _slot = self.in_flight.acquire();
        let mut backoff = Duration::from_millis(self.cfg.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err((retryable, msg)) => {
                    log::warn!("{} attempt {} failed: {msg}", self.id, attempt + 1);
                    last = msg;
                    if !retryable {
                        break;
                    }
                    if attempt < self.cfg.max_retries {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(Error::backend(format!("{}: {last}", self.id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    #[test]
    fn token_estimate_counts_words_and_punctuation() {
        assert_eq!(approx_token_count("Hello, world!"), 4);
        assert_eq!(approx_token_count(""), 0);
    }

    #[test]
    fn fenced_block_extraction() {
        assert_eq!(extract_structured("blah\n```json\n{\"a\":1}\n```\nmore"), "{\"a\":1}");
        assert_eq!(extract_structured("  [1,2] "), "[1,2]");
        assert_eq!(extract_structured("```\n[\"x\"]\n```"), "[\"x\"]");
    }

    #[test]
    fn scripted_rules_and_ledger() {
        let gw = ScriptedGateway::from_json(
            br#"{"rules":[{"contains":["alpha"],"response":"A"},{"contains":["beta","gamma"],"response":"BG","yes_probability":0.25}],
                "default":{"response":"D"}}"#,
        )
        .unwrap();
        let ledger = UsageLedger::new();
        let m = MeteredGateway::new(&gw, &ledger);
        assert_eq!(m.complete(&ChatRequest::prompt("x alpha", "t")).unwrap().text, "A");
        let c = m.complete(&ChatRequest::prompt("beta gamma", "t")).unwrap();
        assert_eq!(c.text, "BG");
        assert!((c.first_token_probability("yes").unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(m.complete(&ChatRequest::prompt("beta", "t")).unwrap().text, "D");
        assert_eq!(ledger.calls(), 3);
        let sum: u64 = ledger.records().iter().map(|r| r.input_tokens + r.output_tokens).sum();
        assert_eq!(ledger.totals().total(), sum);
    }

    #[test]
    fn scripted_without_default_errors() {
        let gw = ScriptedGateway::new(GatewayScript::default());
        assert!(matches!(gw.complete(&ChatRequest::prompt("x", "t")), Err(Error::Backend(_))));
    }

    #[test]
    fn usage_table_layout() {
        let ledger = UsageLedger::new();
        ledger.record("b", "p", Usage { input_tokens: 334_793, output_tokens: 12_713 });
        let t = ledger.render_table(Some(2.5), Some(10.0));
        assert!(t.contains("334,793") && t.contains("12,713") && t.contains("347,506"), "{t}");
        assert!(t.contains("$0.8370") && t.contains("$0.1271") && t.contains("$0.9641"), "{t}");
    }

    /// Serves the given (status, body) replies in order, capturing request bodies.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut headers = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen2
                    .lock()
                    .unwrap()
                    .push(format!("{headers}\n{}", String::from_utf8(buf).unwrap()));
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (addr, seen)
    }

    fn cfg(endpoint: String) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            model: "test-model".into(),
            token_env: "UNUSED".into(),
            timeout_secs: 5,
            max_retries: 2,
            in_flight: 2,
            backoff_ms: 1,
            max_prompt_tokens: None,
        }
    }

    #[test]
    fn remote_retries_then_parses() {
        let ok = r#"{"choices":[{"message":{"content":"Yes"},"logprobs":{"content":[{"token":"Yes","logprob":-0.1,"top_logprobs":[{"token":"Yes","logprob":-0.1},{"token":"No","logprob":-2.4}]}]}}],"usage":{"prompt_tokens":12,"completion_tokens":1}}"#;
        let (addr, seen) = serve(vec![(503, "{}".into()), (200, ok.into())]);
        let gw = RemoteGateway::with_token(cfg(addr), Some("sekrit".into())).unwrap();
        let c = gw.complete(&ChatRequest::prompt("hi", "t").with_logprobs()).unwrap();
        assert_eq!(c.text, "Yes");
        assert_eq!(c.usage, Usage { input_tokens: 12, output_tokens: 1 });
        assert!((c.first_token_probability("Yes").unwrap() - (-0.1f64).exp()).abs() < 1e-12);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        let last = &seen[1];
        assert!(last.contains("/chat/completions") || last.to_ascii_lowercase().contains("authorization"));
        assert!(last.to_ascii_lowercase().contains("authorization: bearer sekrit"));
        let body: serde_json::Value = serde_json::from_str(last.split("\n\n").last().unwrap().trim()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["logprobs"], true);
    }

    #[test]
    fn remote_gives_up_on_client_error() {
        let (addr, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let gw = RemoteGateway::with_token(cfg(addr), None).unwrap();
        let err = gw.complete(&ChatRequest::prompt("hi", "t")).unwrap_err();
        assert!(matches!(err, Error::Backend(ref m) if m.contains("400")), "{err}");
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn remote_exhausts_retries() {
        let (addr, _) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let gw = RemoteGateway::with_token(cfg(addr), None).unwrap();
        assert!(gw.complete(&ChatRequest::prompt("hi", "t")).is_err());
    }
}
