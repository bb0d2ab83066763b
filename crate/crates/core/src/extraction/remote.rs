//! Remote text-completion backend.
//!
//! Wire format (one endpoint):
//!
//! ```text
//! POST {endpoint}
//! Authorization: Bearer {token}         (when configured)
//! {"model": "...", "prompt": "..."}
//! -> 200 {"text": "..."}
//! ```
//!
//! The completion text itself must contain a JSON envelope, `{"Output": ...}`
//! for extraction/selection/correction/fusion and `{"response": "correct"}`
//! or `{"response": "incorrect"}` for verification. Anything else counts as
//! malformed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BuiltinExtractor, ExtractionBackend};
use crate::error::{Error, Result};
use crate::model::{FieldSpec, ValueKind, NOT_PROVIDED};

pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Sustained request rate; 0 disables rate limiting.
    pub requests_per_sec: f64,
    pub ai_model_name: String,
    /// Directory with prompt templates; the bundled set is used when unset.
    pub template_dir: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000/v1/complete".into(),
            token: None,
            model: "default".into(),
            timeout_ms: 30_000,
            max_attempts: 3,
            backoff_ms: 250,
            max_in_flight: 4,
            requests_per_sec: 0.0,
            ai_model_name: "Ava".into(),
            template_dir: None,
        }
    }
}

impl RemoteConfig {
    /// Applies `AUTOREVIEW_REMOTE_*` environment overrides.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        self.apply_vars(|k| std::env::var(k).ok())?;
        Ok(self)
    }

    pub(crate) fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        if let Some(v) = get("AUTOREVIEW_REMOTE_ENDPOINT") {
            self.endpoint = v;
        }
        if let Some(v) = get("AUTOREVIEW_REMOTE_TOKEN") {
            self.token = Some(v);
        }
        if let Some(v) = get("AUTOREVIEW_REMOTE_MODEL") {
            self.model = v;
        }
        if let Some(v) = get("AUTOREVIEW_REMOTE_TIMEOUT_MS") {
            self.timeout_ms = num("AUTOREVIEW_REMOTE_TIMEOUT_MS", v)?;
        }
        if let Some(v) = get("AUTOREVIEW_REMOTE_MAX_ATTEMPTS") {
            self.max_attempts = num("AUTOREVIEW_REMOTE_MAX_ATTEMPTS", v)?;
        }
        if let Some(v) = get("AUTOREVIEW_REMOTE_MAX_IN_FLIGHT") {
            self.max_in_flight = num("AUTOREVIEW_REMOTE_MAX_IN_FLIGHT", v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Config("remote.max_attempts must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("remote.max_in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("remote.timeout_ms must be positive".into()));
        }
        if !(self.requests_per_sec >= 0.0) || !self.requests_per_sec.is_finite() {
            return Err(Error::Config("remote.requests_per_sec must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Blocking HTTP client. Must not be called from inside an async runtime
/// thread; wrap in `spawn_blocking` there.
pub struct HttpCompletionClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    model: String,
}

impl HttpCompletionClient {
    pub fn new(cfg: &RemoteConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Remote(format!("building http client: {e}")))?;
        Ok(HttpCompletionClient {
            http,
            endpoint: cfg.endpoint.clone(),
            token: cfg.token.clone(),
            model: cfg.model.clone(),
        })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self.http.post(&self.endpoint).json(&CompletionRequest {
            model: &self.model,
            prompt,
        });
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| Error::Remote(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Remote(format!("{}: HTTP {status}", self.endpoint)));
        }
        let body: CompletionResponse = resp
            .json()
            .map_err(|e| Error::Remote(format!("{}: bad response body: {e}", self.endpoint)))?;
        Ok(body.text)
    }
}

/// Versioned prompt templates with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub version: String,
    pub verify: String,
    pub select: String,
    pub correct: String,
    pub fuse: String,
    pub extract_code: String,
    pub extract_name: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PromptTemplates {
    pub fn bundled() -> Self {
        PromptTemplates {
            version: "v1".into(),
            verify: include_str!("../../templates/v1/verify.txt").into(),
            select: include_str!("../../templates/v1/select.txt").into(),
            correct: include_str!("../../templates/v1/correct.txt").into(),
            fuse: include_str!("../../templates/v1/fuse.txt").into(),
            extract_code: include_str!("../../templates/v1/extract_code.txt").into(),
            extract_name: include_str!("../../templates/v1/extract_name.txt").into(),
        }
    }

    /// Loads `<name>.txt` files from `dir`; the directory name is the version.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        Ok(PromptTemplates {
            version: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            verify: read("verify")?,
            select: read("select")?,
            correct: read("correct")?,
            fuse: read("fuse")?,
            extract_code: read("extract_code")?,
            extract_name: read("extract_name")?,
        })
    }

    pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
        let mut out = template.to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

/// Blocking token bucket: `rate` tokens per second, burst of `burst`.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64, burst: f64) -> Self {
        TokenBucket {
            rate,
            burst: burst.max(1.0),
            state: Mutex::new((burst.max(1.0), Instant::now())),
        }
    }

    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.cap {
            used = self.cv.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.cv.notify_one();
    }
}

/// Pulls the first JSON object out of a completion and returns `key` as a
/// string. Tolerates code fences and surrounding prose.
pub fn parse_envelope(text: &str, key: &str) -> Option<String> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let v: serde_json::Value = serde_json::from_str(&text[start..=end]).ok()?;
    match v.get(key)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Outcome of one templated request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Parsed(String),
    /// The endpoint answered but not with the documented envelope.
    Malformed(String),
}

/// Shared remote model: templates, limits and retry policy around a
/// completion client.
pub struct RemoteModel {
    client: Arc<dyn CompletionClient>,
    pub templates: PromptTemplates,
    pub config: RemoteConfig,
    bucket: TokenBucket,
    in_flight: InFlight,
}

impl RemoteModel {
    pub fn new(
        client: Arc<dyn CompletionClient>,
        templates: PromptTemplates,
        config: RemoteConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(RemoteModel {
            client,
            bucket: TokenBucket::new(config.requests_per_sec, config.max_in_flight as f64),
            in_flight: InFlight {
                cap: config.max_in_flight,
                used: Mutex::new(0),
                cv: Condvar::new(),
            },
            templates,
            config,
        })
    }

    /// HTTP client plus templates from `template_dir` (or the bundled set).
    pub fn from_config(config: RemoteConfig) -> Result<Self> {
        let client = Arc::new(HttpCompletionClient::new(&config)?);
        let templates = match &config.template_dir {
            Some(d) => PromptTemplates::load_dir(Path::new(d))?,
            None => PromptTemplates::bundled(),
        };
        Self::new(client, templates, config)
    }

    fn base_vars(&self) -> BTreeMap<&'static str, String> {
        let mut v = BTreeMap::new();
        v.insert("ai_name", self.config.ai_model_name.clone());
        v.insert("not_provided", NOT_PROVIDED.to_string());
        v.insert("examples", String::new());
        v
    }

    /// Sends `prompt`, retrying transport failures up to `max_attempts`.
    pub fn request(&self, prompt: &str, key: &str) -> Result<Reply> {
        let mut last_err = None;
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(
                    self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(6)),
                ));
            }
            self.bucket.acquire();
            let res = {
                let _g = self.in_flight.acquire();
                self.client.complete(prompt)
            };
            match res {
                Ok(text) => {
                    return Ok(match parse_envelope(&text, key) {
                        Some(v) => Reply::Parsed(v),
                        None => Reply::Malformed(text),
                    })
                }
                Err(e) => {
                    log::warn!("remote attempt {} failed: {e}", attempt + 1);
                    last_err = Some(e);
                }
            }
        }
        Err(Error::Remote(format!(
            "gave up after {} attempts: {}",
            self.config.max_attempts,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    pub fn render_extract(&self, utterances: &[&str], spec: &FieldSpec) -> String {
        let mut vars = self.base_vars();
        vars.insert("field", field_label(spec));
        vars.insert("input", utterances.join("\n"));
        let t = match spec.kind {
            ValueKind::Alphanumeric => &self.templates.extract_code,
            _ => &self.templates.extract_name,
        };
        PromptTemplates::render(t, &vars)
    }

    pub fn render_verify(&self, transcript: &str, spec: &FieldSpec, value: &str) -> String {
        let mut vars = self.base_vars();
        vars.insert("field", field_label(spec));
        vars.insert("transcript", transcript.to_string());
        vars.insert("value", value.to_string());
        PromptTemplates::render(&self.templates.verify, &vars)
    }

    pub fn render_select(&self, alternatives: &[String], gold: &str) -> String {
        let mut vars = self.base_vars();
        vars.insert("input", format!("{}, {}", alternatives.join(" # "), gold));
        PromptTemplates::render(&self.templates.select, &vars)
    }

    pub fn render_correct(&self, text: &str, gold: &str) -> String {
        let mut vars = self.base_vars();
        vars.insert("input", format!("{text}, {gold}"));
        PromptTemplates::render(&self.templates.correct, &vars)
    }

    pub fn render_fuse(&self, alternatives: &[String]) -> String {
        let mut vars = self.base_vars();
        vars.insert("input", alternatives.join(" # "));
        PromptTemplates::render(&self.templates.fuse, &vars)
    }

    /// Yes/no verification; `None` when the reply is malformed.
    pub fn verify(&self, transcript: &str, spec: &FieldSpec, value: &str) -> Result<Option<bool>> {
        let reply = self.request(&self.render_verify(transcript, spec, value), "response")?;
        Ok(match reply {
            Reply::Parsed(s) => match s.trim().to_ascii_lowercase().as_str() {
                "correct" => Some(true),
                "incorrect" => Some(false),
                _ => None,
            },
            Reply::Malformed(_) => None,
        })
    }
}

fn field_label(spec: &FieldSpec) -> String {
    match spec.kind {
        ValueKind::PersonName => "agent name".into(),
        ValueKind::NameAndDate => "reference number (a name followed by a date)".into(),
        ValueKind::Alphanumeric => format!("{} value", spec.field_id),
    }
}

/// Extraction through a remote model, falling back to the builtin parser on
/// malformed replies. Transport failures that exhaust the retries are
/// returned as [`Error::Remote`].
pub struct RemoteExtractor {
    pub model: Arc<RemoteModel>,
    pub fallback: BuiltinExtractor,
}

impl RemoteExtractor {
    pub fn new(model: Arc<RemoteModel>) -> Self {
        let fallback = BuiltinExtractor::new(vec![model.config.ai_model_name.to_lowercase()]);
        RemoteExtractor { model, fallback }
    }
}

impl ExtractionBackend for RemoteExtractor {
    fn extract(&self, utterances: &[&str], spec: &FieldSpec) -> Result<String> {
        let prompt = self.model.render_extract(utterances, spec);
        match self.model.request(&prompt, "Output")? {
            Reply::Parsed(v) => {
                let v = v.trim();
                if v == NOT_PROVIDED {
                    return Ok(NOT_PROVIDED.to_string());
                }
                Ok(super::canonicalize(v, spec))
            }
            Reply::Malformed(text) => {
                log::warn!("malformed remote reply, using builtin parser: {text:?}");
                self.fallback.extract(utterances, spec)
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
