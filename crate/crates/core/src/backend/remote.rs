//! Client for a model server that returns full next-token logits over HTTP.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{check_query, BackendDescriptor, BackendKind, Distribution, LanguageModel};
use crate::distribution::NextTokenDistribution;
use crate::error::{CafieError, Result};
use crate::text::{TokenId, TokenSequence, Vocabulary};

pub const TIMEOUT_ENV: &str = "CAFIE_HTTP_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Serialize)]
struct LogitsRequest<'a> {
    context_ids: &'a [TokenId],
    temperature: f64,
}

#[derive(Deserialize)]
struct LogitsResponse {
    /// `null` entries stand for masked tokens (`-inf`).
    logits: Vec<Option<f64>>,
}

#[derive(Deserialize)]
struct InfoResponse {
    vocab_size: usize,
    model: String,
}

/// Remote backend. The server owns the model; the client owns the
/// vocabulary used to tokenize prompts, which must match the server's.
/// Returned logits are taken to be already divided by the requested temperature.
#[derive(Debug, Clone)]
pub struct RemoteModel {
    base_url: String,
    model_name: String,
    vocab: Vocabulary,
    client: Client,
}

impl RemoteModel {
    /// Connects using the timeout from `CAFIE_HTTP_TIMEOUT_MS` (default 30 s).
    pub fn connect(base_url: &str, vocab: Vocabulary) -> Result<Self> {
        let timeout = match std::env::var(TIMEOUT_ENV) {
            Ok(v) => v.trim().parse::<u64>().map_err(|_| {
                CafieError::param(TIMEOUT_ENV, format!("expected milliseconds, got `{v}`"))
            })?,
            Err(_) => DEFAULT_TIMEOUT_MS,
        };
        Self::connect_with_timeout(base_url, vocab, Duration::from_millis(timeout))
    }

    /// Queries `/v1/info` and checks that the server's vocabulary size matches.
    pub fn connect_with_timeout(
        base_url: &str,
        vocab: Vocabulary,
        timeout: Duration,
    ) -> Result<Self> {
        let base_url = base_url.trim_end_matches('/').to_string();
        if !base_url.starts_with("http://") {
            return Err(CafieError::param(
                "endpoint",
                format!("must be an http:// URL, got `{base_url}`"),
            ));
        }
        let client = Client::builder().timeout(timeout).build().map_err(|e| {
            CafieError::BackendUnavailable(format!("cannot build HTTP client: {e}"))
        })?;
        let mut model = Self {
            base_url,
            model_name: String::new(),
            vocab,
            client,
        };
        let info: InfoResponse = model.post("/v1/info", &serde_json::json!({}))?;
        if info.vocab_size != model.vocab.len() {
            return Err(CafieError::vocab_size(model.vocab.len(), info.vocab_size));
        }
        model.model_name = info.model;
        Ok(model)
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    fn post<B: Serialize + ?Sized, R: for<'de> Deserialize<'de>>(
        &self,
        route: &str,
        body: &B,
    ) -> Result<R> {
        let url = format!("{}{route}", self.base_url);
        let unavailable =
            |what: String| CafieError::BackendUnavailable(format!("POST {url}: {what}"));
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(unavailable(format!("HTTP {status}")));
        }
        resp.json::<R>()
            .map_err(|e| unavailable(format!("bad response body: {e}")))
    }
}

impl LanguageModel for RemoteModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Remote,
            identity: format!("{} ({})", self.base_url, self.model_name),
            vocab_size: self.vocab.len(),
        }
    }

    fn distribution(&self, context: &[TokenId], temperature: f64) -> Result<Distribution> {
        check_query(context, temperature)?;
        let resp: LogitsResponse = self.post(
            "/v1/logits",
            &LogitsRequest {
                context_ids: context,
                temperature,
            },
        )?;
        if resp.logits.len() != self.vocab.len() {
            return Err(CafieError::vocab_size(self.vocab.len(), resp.logits.len()));
        }
        let logits: Vec<f64> = resp
            .logits
            .into_iter()
            .map(|l| l.unwrap_or(f64::NEG_INFINITY))
            .collect();
        NextTokenDistribution::from_logits(&logits, 1.0).map_err(|e| {
            CafieError::BackendUnavailable(format!("server returned unusable logits: {e}"))
        })
    }

    /// One request per context, all in flight at once.
    fn distributions(
        &self,
        contexts: &[TokenSequence],
        temperature: f64,
    ) -> Result<Vec<Distribution>> {
        if contexts.len() <= 1 {
            return contexts
                .iter()
                .map(|c| self.distribution(c.ids(), temperature))
                .collect();
        }
        thread::scope(|s| {
            let handles: Vec<_> = contexts
                .iter()
                .map(|c| s.spawn(move || self.distribution(c.ids(), temperature)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(CafieError::BackendUnavailable(
                            "request thread panicked".into(),
                        ))
                    })
                })
                .collect()
        })
    }
}
