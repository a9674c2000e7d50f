//! Stage-1 rewrite providers: live chat-completion client, fixture replay and
//! a recording wrapper that fills the fixture store from a live provider.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const REPHRASE_TEMPLATE: &str = "You are given a dialogue between a user and a recommender system. Here is the dialogue: {dialogue}. Rephrase the dialogue using as different words and styles as possible. Output ONLY the rephrased content.";
pub const SUMMARIZE_TEMPLATE: &str = "You are given a dialogue between a user and a recommender system. Here is the dialogue: {dialogue}. Summarize the user's preference for movie recommendations in a compact and informative manner.";

pub const ENV_LLM_BASE_URL: &str = "CRS_LLM_BASE_URL";
pub const ENV_LLM_MODEL: &str = "CRS_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "CRS_LLM_API_KEY";

/// Hex SHA-256 of the prompt text; names fixture files.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// A text completion service used for rephrasing and summarizing.
pub trait RewriteProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;

    fn provider_id(&self) -> String;
}

fn provider_err(prompt: &str, message: impl Into<String>) -> Error {
    Error::Provider {
        prompt_hash: prompt_hash(prompt),
        message: message.into(),
    }
}

/// Directory of `<prompt-hash>.txt` files holding recorded completions.
pub struct FixtureStore {
    dir: PathBuf,
    cache: RwLock<HashMap<String, String>>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.txt"))
    }

    pub fn get(&self, prompt: &str) -> Option<String> {
        let hash = prompt_hash(prompt);
        if let Some(v) = self.cache.read().unwrap().get(&hash) {
            return Some(v.clone());
        }
        let text = fs::read_to_string(self.path_for(&hash)).ok()?;
        self.cache.write().unwrap().insert(hash, text.clone());
        Some(text)
    }

    pub fn record(&self, prompt: &str, completion: &str) -> Result<()> {
        let _guard = self.write_lock.lock().unwrap();
        fs::create_dir_all(&self.dir).map_err(|e| Error::file(&self.dir, e))?;
        let hash = prompt_hash(prompt);
        let path = self.path_for(&hash);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, completion).map_err(|e| Error::file(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::file(&path, e))?;
        self.cache.write().unwrap().insert(hash, completion.to_string());
        Ok(())
    }
}

impl RewriteProvider for FixtureStore {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.get(prompt)
            .ok_or_else(|| provider_err(prompt, format!("no fixture in {}", self.dir.display())))
    }

    fn provider_id(&self) -> String {
        format!("fixtures:{}", self.dir.display())
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatProvider {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            client,
        })
    }

    /// Reads `CRS_LLM_BASE_URL`, `CRS_LLM_MODEL` and optionally `CRS_LLM_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let base = std::env::var(ENV_LLM_BASE_URL)
            .map_err(|_| Error::Config(format!("{ENV_LLM_BASE_URL} is not set")))?;
        let model = std::env::var(ENV_LLM_MODEL)
            .map_err(|_| Error::Config(format!("{ENV_LLM_MODEL} is not set")))?;
        Self::new(base, model, std::env::var(ENV_LLM_API_KEY).ok(), Duration::from_secs(30))
    }
}

impl RewriteProvider for HttpChatProvider {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&json!({
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
            }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| provider_err(prompt, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(provider_err(prompt, format!("status {status}")));
        }
        let body: serde_json::Value = resp.json().map_err(|e| provider_err(prompt, e.to_string()))?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| provider_err(prompt, "response has no choices[0].message.content"))?
            .trim()
            .to_string();
        if text.is_empty() {
            return Err(provider_err(prompt, "empty completion"));
        }
        Ok(text)
    }

    fn provider_id(&self) -> String {
        format!("chat:{}@{}", self.model, self.base_url)
    }
}

/// Replays recorded completions, calling the live provider (and recording
/// its answer) on a miss.
pub struct RecordingProvider<P> {
    live: P,
    store: FixtureStore,
}

impl<P: RewriteProvider> RecordingProvider<P> {
    pub fn new(live: P, store: FixtureStore) -> Self {
        Self { live, store }
    }
}

impl<P: RewriteProvider> RewriteProvider for RecordingProvider<P> {
    fn complete(&self, prompt: &str) -> Result<String> {
        if let Some(hit) = self.store.get(prompt) {
            return Ok(hit);
        }
        let text = self.live.complete(prompt)?;
        self.store.record(prompt, &text)?;
        Ok(text)
    }

    fn provider_id(&self) -> String {
        self.live.provider_id()
    }
}
