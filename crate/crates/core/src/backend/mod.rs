//! Language-model backends: the query contract plus local and remote implementations.

mod ngram;
mod remote;

use std::fmt;

use serde::Serialize;

use crate::distribution::NextTokenDistribution;
use crate::error::{CafieError, Result};
use crate::text::{TokenId, TokenSequence, Vocabulary, BOS};

pub use ngram::{vocab_path_for, NgramModel, MAX_ORDER, MIN_ORDER};
pub use remote::{RemoteModel, DEFAULT_TIMEOUT_MS, TIMEOUT_ENV};

type Distribution = NextTokenDistribution<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Ngram,
    Remote,
    Uniform,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Ngram => "ngram",
            BackendKind::Remote => "remote",
            BackendKind::Uniform => "uniform",
        })
    }
}

/// What a backend is and where it came from, for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub identity: String,
    pub vocab_size: usize,
}

/// A next-token predictor over a fixed vocabulary. Implementations are
/// immutable after construction and safe to query concurrently. Callers use the
/// validating `next_token_*` and `sequence_logprob` methods; implementors supply
/// `distribution` (and optionally a batched `distributions`).
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn descriptor(&self) -> BackendDescriptor;

    /// Next-token distribution at `temperature`, before any calibration.
    fn distribution(&self, context: &[TokenId], temperature: f64) -> Result<Distribution>;

    /// One distribution per context. Implementations that can overlap work
    /// (threads, in-flight requests) should override this.
    fn distributions(
        &self,
        contexts: &[TokenSequence],
        temperature: f64,
    ) -> Result<Vec<Distribution>> {
        contexts
            .iter()
            .map(|c| self.distribution(c.ids(), temperature))
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab().len()
    }

    /// Validated next-token distribution for `context`.
    fn next_token_distribution(
        &self,
        context: &TokenSequence,
        temperature: f64,
    ) -> Result<Distribution> {
        check_query(context.ids(), temperature)?;
        let dist = self.distribution(context.ids(), temperature)?;
        check_size(&dist, self.vocab())?;
        Ok(dist)
    }

    /// Validated distributions for a batch of contexts, in input order.
    fn next_token_distributions(
        &self,
        contexts: &[TokenSequence],
        temperature: f64,
    ) -> Result<Vec<Distribution>> {
        for c in contexts {
            check_query(c.ids(), temperature)?;
        }
        let dists = self.distributions(contexts, temperature)?;
        if dists.len() != contexts.len() {
            return Err(CafieError::BackendUnavailable(format!(
                "asked for {} distributions, received {}",
                contexts.len(),
                dists.len()
            )));
        }
        for d in &dists {
            check_size(d, self.vocab())?;
        }
        Ok(dists)
    }

    /// Sum of natural-log probabilities of `continuation` after `context`,
    /// accumulated left to right.
    fn sequence_logprob(
        &self,
        context: &TokenSequence,
        continuation: &[TokenId],
        temperature: f64,
    ) -> Result<f64> {
        if continuation.is_empty() {
            return Err(CafieError::param("continuation", "must be non-empty"));
        }
        let mut prefix = context.clone();
        let mut total = 0.0;
        for &tok in continuation {
            let dist = self.next_token_distribution(&prefix, temperature)?;
            total += dist.prob(tok as usize).ln();
            prefix.push(tok);
        }
        Ok(total)
    }
}

fn check_query(context: &[TokenId], temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(CafieError::param(
            "temperature",
            format!("must be finite and > 0, got {temperature}"),
        ));
    }
    if context.is_empty() {
        return Err(CafieError::param(
            "context",
            "must be non-empty (start with <s>)",
        ));
    }
    Ok(())
}

fn check_size(dist: &Distribution, vocab: &Vocabulary) -> Result<()> {
    if dist.len() != vocab.len() {
        return Err(CafieError::vocab_size(vocab.len(), dist.len()));
    }
    Ok(())
}

/// Uniform over every token except `<s>`; the reference "judge" with no preferences.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocabulary,
}

impl UniformModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl LanguageModel for UniformModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Uniform,
            identity: "uniform".into(),
            vocab_size: self.vocab.len(),
        }
    }

    fn distribution(&self, context: &[TokenId], temperature: f64) -> Result<Distribution> {
        check_query(context, temperature)?;
        let support: Vec<usize> = (0..self.vocab.len())
            .filter(|&i| i != BOS as usize)
            .collect();
        NextTokenDistribution::uniform_over(self.vocab.len(), &support)
    }
}
