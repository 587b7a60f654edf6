//! LLM-as-judge client: builds the taxonomy prompt, calls an
//! OpenAI-compatible endpoint, validates the strict-JSON verdict, and caches
//! every terminal judgment so reruns are offline and byte-reproducible.

mod cache;
mod parse;
mod prompt;
mod transport;

pub use cache::{CacheKey, JudgmentCache};
pub use parse::parse_judgment;
pub use prompt::{build_prompt, build_prompt_from_texts, PROMPT_VERSION};
pub use transport::{
    ChatCompletion, ChatMessage, ChatRequest, ChatTransport, HttpTransport, TransportError,
};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::model::{Judgment, JudgmentStatus, ProblemRecord, ResponseTrace};

const JSON_REMINDER: &str = "\n\nReminder: return ONLY the JSON object.";

/// Judge endpoint and sampling settings. Temperature defaults to 0.0 for
/// reproducibility.
#[derive(Debug, Clone)]
pub struct JudgeConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub prompt_version: String,
    /// Upper bound on concurrent in-flight judge requests.
    pub max_in_flight: usize,
    pub retry_backoff_ms: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_retries: 3,
            timeout_secs: 120,
            prompt_version: PROMPT_VERSION.into(),
            max_in_flight: 8,
            retry_backoff_ms: 250,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs == 0 {
            return Err("judge timeout must be positive".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.endpoint_url.trim().is_empty() {
            return Err("judge endpoint URL is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge transport failed after {attempts} attempts: {source}")]
    Transport {
        attempts: u32,
        source: TransportError,
    },
}

/// A judge bound to one transport. Counts every network call so offline and
/// warm-cache guarantees are assertable.
pub struct JudgeClient {
    config: JudgeConfig,
    transport: Arc<dyn ChatTransport>,
    network_calls: AtomicU64,
}

impl JudgeClient {
    pub fn new(config: JudgeConfig, transport: Arc<dyn ChatTransport>) -> JudgeClient {
        JudgeClient {
            config,
            transport,
            network_calls: AtomicU64::new(0),
        }
    }

    /// Production client: HTTP transport, bearer token from the configured
    /// environment variable (requests go unauthenticated if it is unset).
    pub fn over_http(config: JudgeConfig) -> JudgeClient {
        let api_key = std::env::var(&config.api_key_env).ok();
        let transport = HttpTransport::new(
            &config.endpoint_url,
            api_key,
            Duration::from_secs(config.timeout_secs),
        );
        JudgeClient::new(config, Arc::new(transport))
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, problem_text: &str, response_text: &str) -> CacheKey {
        CacheKey::compute(
            &self.config.prompt_version,
            &self.config.model_name,
            problem_text,
            response_text,
        )
    }

    /// Judge one response, going to the network only on a cache miss.
    /// Transport failures and malformed replies are retried up to
    /// `max_retries` (a terse "return only JSON" reminder is appended on
    /// re-asks); a terminal `ParseFailed` or `Refused` judgment is cached as
    /// a value rather than raised.
    pub fn judge(
        &self,
        problem: &ProblemRecord,
        response: &ResponseTrace,
        cache: &JudgmentCache,
    ) -> Result<Judgment, JudgeError> {
        self.judge_texts(&problem.question, &response.raw_text, cache)
    }

    /// Text-level variant used by calibration.
    pub fn judge_texts(
        &self,
        question: &str,
        response_text: &str,
        cache: &JudgmentCache,
    ) -> Result<Judgment, JudgeError> {
        let key = self.cache_key(question, response_text);
        cache.get_or_compute(&key, || self.judge_uncached(question, response_text))
    }

    fn judge_uncached(&self, question: &str, response_text: &str) -> Result<Judgment, JudgeError> {
        let prompt = build_prompt_from_texts(question, response_text);
        let mut last_transport_error = None;

        for attempt in 0..=self.config.max_retries {
            let content = if attempt == 0 {
                prompt.clone()
            } else {
                format!("{prompt}{JSON_REMINDER}")
            };
            let request = ChatRequest {
                model: self.config.model_name.clone(),
                messages: vec![ChatMessage::user(content)],
                temperature: self.config.temperature,
            };

            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.complete(&request) {
                Err(err) => {
                    last_transport_error = Some(err);
                    if attempt < self.config.max_retries && self.config.retry_backoff_ms > 0 {
                        std::thread::sleep(Duration::from_millis(
                            self.config.retry_backoff_ms * u64::from(attempt + 1),
                        ));
                    }
                }
                Ok(completion) => {
                    if let Some(judgment) = self.finish(completion, attempt) {
                        return Ok(judgment);
                    }
                    // malformed reply: fall through to the next attempt
                }
            }
        }

        match last_transport_error {
            Some(source) => Err(JudgeError::Transport {
                attempts: self.config.max_retries + 1,
                source,
            }),
            // unreachable: the final attempt's reply is always terminal
            None => Ok(self.stamp(parse_judgment(""), self.config.max_retries)),
        }
    }

    /// Turn a completion into a terminal judgment, or `None` when it should
    /// be retried (a reply that failed to parse, with retries remaining).
    fn finish(&self, completion: ChatCompletion, attempt: u32) -> Option<Judgment> {
        let refused = completion.refusal.is_some()
            || completion
                .content
                .as_deref()
                .is_none_or(|c| c.trim().is_empty());
        if refused {
            let raw = completion
                .refusal
                .or(completion.content)
                .unwrap_or_default();
            let mut judgment = parse_judgment(&raw);
            judgment.status = JudgmentStatus::Refused;
            judgment.parse_error = None;
            return Some(self.stamp(judgment, attempt));
        }

        let judgment = parse_judgment(completion.content.as_deref().unwrap_or_default());
        if judgment.status == JudgmentStatus::ParseFailed && attempt < self.config.max_retries {
            return None;
        }
        Some(self.stamp(judgment, attempt))
    }

    fn stamp(&self, mut judgment: Judgment, attempt: u32) -> Judgment {
        judgment.judge_model = self.config.model_name.clone();
        judgment.prompt_version = self.config.prompt_version.clone();
        judgment.retry_count = attempt;
        judgment
    }

    /// Judge a batch with at most `max_in_flight` requests in flight.
    /// Results are returned in input order; the first error wins and stops
    /// the dispatch of further work.
    pub fn judge_many(
        &self,
        jobs: &[(&str, &str)],
        cache: &JudgmentCache,
    ) -> Result<Vec<Judgment>, JudgeError> {
        let workers = self.config.max_in_flight.min(jobs.len()).max(1);
        let cursor = AtomicU64::new(0);
        let results: Mutex<Vec<Option<Judgment>>> = Mutex::new(vec![None; jobs.len()]);
        let failure: Mutex<Option<JudgeError>> = Mutex::new(None);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = cursor.fetch_add(1, Ordering::SeqCst) as usize;
                    if index >= jobs.len() {
                        return;
                    }
                    if failure.lock().expect("failure lock").is_some() {
                        return;
                    }
                    let (question, response_text) = jobs[index];
                    match self.judge_texts(question, response_text, cache) {
                        Ok(judgment) => {
                            results.lock().expect("results lock")[index] = Some(judgment);
                        }
                        Err(err) => {
                            failure.lock().expect("failure lock").get_or_insert(err);
                            return;
                        }
                    }
                });
            }
        });

        if let Some(err) = failure.into_inner().expect("failure lock") {
            return Err(err);
        }
        Ok(results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("all jobs completed"))
            .collect())
    }
}
