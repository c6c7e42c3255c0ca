use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::select::{build_prompt, select_noise_rulebased, NoiseSelector, Selection, SelectionSource};
use crate::error::{Error, Result};
use crate::events::{ClassOntology, WeakLabel};

/// Environment variable naming the language-model endpoint.
pub const LLM_ENDPOINT_ENV: &str = "NOISE_LLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub id: String,
    pub classes: Vec<String>,
}

/// One request/response exchange. Errors are transport-level and retryable.
pub trait LlmTransport: Send {
    fn exchange(&mut self, request: &LlmRequest) -> std::result::Result<LlmResponse, String>;
}

/// Closure-backed transport, mostly for tests and offline stubs.
pub struct FnTransport<F>(pub F);

impl<F> LlmTransport for FnTransport<F>
where
    F: FnMut(&LlmRequest) -> std::result::Result<LlmResponse, String> + Send,
{
    fn exchange(&mut self, request: &LlmRequest) -> std::result::Result<LlmResponse, String> {
        (self.0)(request)
    }
}

/// Newline-delimited JSON over a long-lived child process. The process is
/// respawned after any I/O failure.
pub struct ChildProcessTransport {
    program: String,
    args: Vec<String>,
    live: Option<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl ChildProcessTransport {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self { program: program.into(), args, live: None }
    }

    fn connection(&mut self) -> std::result::Result<&mut (Child, ChildStdin, BufReader<ChildStdout>), String> {
        if self.live.is_none() {
            let mut child = Command::new(&self.program)
                .args(&self.args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| format!("spawn {}: {e}", self.program))?;
            let stdin = child.stdin.take().ok_or("child stdin unavailable")?;
            let stdout = BufReader::new(child.stdout.take().ok_or("child stdout unavailable")?);
            self.live = Some((child, stdin, stdout));
        }
        Ok(self.live.as_mut().expect("connection just established"))
    }

    fn drop_connection(&mut self) {
        if let Some((mut child, _, _)) = self.live.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for ChildProcessTransport {
    fn drop(&mut self) {
        self.drop_connection();
    }
}

impl LlmTransport for ChildProcessTransport {
    fn exchange(&mut self, request: &LlmRequest) -> std::result::Result<LlmResponse, String> {
        let line = serde_json::to_string(request).map_err(|e| e.to_string())?;
        let result = (|| {
            let (_, stdin, stdout) = self.connection()?;
            writeln!(stdin, "{line}").and_then(|_| stdin.flush()).map_err(|e| e.to_string())?;
            let mut reply = String::new();
            if stdout.read_line(&mut reply).map_err(|e| e.to_string())? == 0 {
                return Err("endpoint closed the stream".to_string());
            }
            serde_json::from_str::<LlmResponse>(&reply).map_err(|e| format!("malformed response: {e}"))
        })();
        if result.is_err() {
            self.drop_connection();
        }
        result
    }
}

/// JSON POST to an HTTP endpoint.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent }
    }
}

impl LlmTransport for HttpTransport {
    fn exchange(&mut self, request: &LlmRequest) -> std::result::Result<LlmResponse, String> {
        let body = serde_json::to_string(request).map_err(|e| e.to_string())?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| format!("malformed response: {e}"))
    }
}

/// `http(s)://...` gives an HTTP transport; anything else is a command line.
pub fn transport_from_endpoint(endpoint: &str, timeout: Duration) -> Result<Box<dyn LlmTransport>> {
    let endpoint = endpoint.trim();
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        return Ok(Box::new(HttpTransport::new(endpoint, timeout)));
    }
    let mut parts = endpoint.split_whitespace().map(str::to_string);
    let program = parts.next().ok_or_else(|| Error::Config(format!("{LLM_ENDPOINT_ENV} is empty")))?;
    Ok(Box::new(ChildProcessTransport::new(program, parts.collect())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    pub endpoint: Option<String>,
    pub attempts: u32,
    pub backoff_base_ms: u64,
    pub timeout_ms: u64,
    pub cache_path: Option<PathBuf>,
    /// Environment tag used by the rule-based fallback.
    pub fallback_env_tag: String,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            attempts: 3,
            backoff_base_ms: 200,
            timeout_ms: 30_000,
            cache_path: None,
            fallback_env_tag: "household".to_string(),
        }
    }
}

/// One line of the prompt cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub prompt_sha256: String,
    pub classes: Vec<String>,
    pub source: SelectionSource,
}

pub fn prompt_sha256(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Noise selection through a language model, with retries, rule fallback
/// and a prompt-keyed cache. One request is in flight at a time.
pub struct LlmClient {
    cfg: LlmClientConfig,
    transport: Mutex<Box<dyn LlmTransport>>,
    cache: Mutex<HashMap<String, CacheRecord>>,
    next_id: AtomicU64,
}

impl LlmClient {
    pub fn new(cfg: LlmClientConfig, transport: Box<dyn LlmTransport>) -> Result<Self> {
        if cfg.attempts == 0 {
            return Err(Error::Config("llm attempts must be at least 1".into()));
        }
        let mut cache = HashMap::new();
        if let Some(path) = cfg.cache_path.as_ref().filter(|p| p.exists()) {
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord =
                    serde_json::from_str(line).map_err(|e| Error::Row { line: i + 1, msg: format!("prompt cache: {e}") })?;
                cache.insert(rec.prompt_sha256.clone(), rec);
            }
        }
        Ok(Self { cfg, transport: Mutex::new(transport), cache: Mutex::new(cache), next_id: AtomicU64::new(0) })
    }

    /// Client for `cfg.endpoint`, or for `NOISE_LLM_ENDPOINT` when unset.
    pub fn from_config(mut cfg: LlmClientConfig) -> Result<Self> {
        if cfg.endpoint.is_none() {
            cfg.endpoint = std::env::var(LLM_ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty());
        }
        let endpoint = cfg.endpoint.clone().ok_or_else(|| Error::Config(format!("no llm endpoint; set {LLM_ENDPOINT_ENV}")))?;
        let transport = transport_from_endpoint(&endpoint, Duration::from_millis(cfg.timeout_ms))?;
        Self::new(cfg, transport)
    }

    pub fn cached(&self, prompt: &str) -> Option<CacheRecord> {
        self.cache.lock().expect("cache lock").get(&prompt_sha256(prompt)).cloned()
    }

    /// Classes for `prompt`. Out-of-vocabulary names are dropped; after all
    /// attempts fail, the rule-based selection is returned with source
    /// `Fallback`.
    pub fn select_noise_llm(&self, prompt: &str, present: &WeakLabel, ontology: &ClassOntology) -> Result<Selection> {
        if let Some(rec) = self.cached(prompt) {
            return Ok(Selection { classes: rec.classes, source: rec.source });
        }
        let mut transport = self.transport.lock().expect("transport lock");
        // another caller may have resolved the same prompt while we queued
        if let Some(rec) = self.cached(prompt) {
            return Ok(Selection { classes: rec.classes, source: rec.source });
        }
        let mut last_err = String::new();
        let mut answer = None;
        for attempt in 0..self.cfg.attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_base_ms << (attempt - 1)));
            }
            let req = LlmRequest { id: self.next_id.fetch_add(1, Ordering::Relaxed).to_string(), prompt: prompt.to_string() };
            match transport.exchange(&req) {
                Ok(resp) if resp.id == req.id => {
                    answer = Some(resp.classes);
                    break;
                }
                Ok(resp) => last_err = format!("response id {} does not match request id {}", resp.id, req.id),
                Err(e) => last_err = e,
            }
            log::warn!("llm attempt {} of {} failed: {last_err}", attempt + 1, self.cfg.attempts);
        }
        drop(transport);
        let selection = match answer {
            Some(raw) => Selection { classes: parse_classes(&raw, ontology), source: SelectionSource::Llm },
            None => {
                log::warn!("llm unavailable ({last_err}); falling back to rule-based selection for {}", present.clip_id);
                Selection {
                    classes: select_noise_rulebased(present, ontology, &self.cfg.fallback_env_tag)?,
                    source: SelectionSource::Fallback,
                }
            }
        };
        self.remember(prompt, &selection)?;
        Ok(selection)
    }

    fn remember(&self, prompt: &str, selection: &Selection) -> Result<()> {
        let rec = CacheRecord { prompt_sha256: prompt_sha256(prompt), classes: selection.classes.clone(), source: selection.source };
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some(path) = &self.cfg.cache_path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
        }
        cache.insert(rec.prompt_sha256.clone(), rec);
        Ok(())
    }
}

impl NoiseSelector for LlmClient {
    fn select(&self, present: &WeakLabel, ontology: &ClassOntology) -> Result<Selection> {
        self.select_noise_llm(&build_prompt(present, ontology), present, ontology)
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}

/// Splits entries on commas and newlines, keeps known noise classes once each
/// in response order.
pub fn parse_classes(raw: &[String], ontology: &ClassOntology) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for name in raw.iter().flat_map(|s| s.split([',', '\n'])).map(str::trim).filter(|s| !s.is_empty()) {
        if !ontology.is_noise(name) {
            log::warn!("dropping out-of-vocabulary class from llm response: {name:?}");
        } else if !out.iter().any(|o| o == name) {
            out.push(name.to_string());
        }
    }
    out
}
