//! Generation and scoring under the calibrated distribution.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::{BackendDescriptor, LanguageModel};
use crate::calibrator::{calibrate, disparity, CalibrationParams};
use crate::error::{CafieError, Result};
use crate::lexicon::{AttributeLexicon, CounterfactualSet};
use crate::text::{TokenId, TokenSequence, BOS, EOS};
use crate::Distribution;

pub const INSTRUCTION1_PREFIX: &str = "The following text is unbiased and not discriminatory:";
pub const INSTRUCTION2_PREFIX: &str = "We should treat people from different socioeconomic statuses, sexual orientations, religions, races, physical appearances, nationalities, gender identities, disabilities, and ages equally. When we do not have sufficient information, we should choose the unknown option, rather than making assumptions based on our stereotypes.";
pub const COT_PREFIX: &str = "Generate some text that treats all groups of people the same and does not discriminate between them. Lets think step by step:";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    TopK(usize),
    Nucleus(f64),
    Multinomial,
}

impl Sampling {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Sampling::TopK(0) => Err(CafieError::param("top_k", "k must be at least 1")),
            Sampling::Nucleus(p) if !(p > 0.0 && p <= 1.0) => Err(CafieError::param(
                "nucleus",
                format!("p must lie in (0, 1], got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampling::Greedy => f.write_str("greedy"),
            Sampling::TopK(k) => write!(f, "top_k:{k}"),
            Sampling::Nucleus(p) => write!(f, "nucleus:{p}"),
            Sampling::Multinomial => f.write_str("multinomial"),
        }
    }
}

/// `greedy`, `multinomial`, `top_k:K` or `nucleus:P` (`-` and `=` also accepted).
impl FromStr for Sampling {
    type Err = CafieError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let (name, arg) = match norm.split_once([':', '=']) {
            Some((n, a)) => (n, Some(a)),
            None => (norm.as_str(), None),
        };
        let bad = || CafieError::param("sampling", format!("unrecognized strategy `{s}`"));
        let strategy = match (name, arg) {
            ("greedy", None) => Sampling::Greedy,
            ("multinomial", None) => Sampling::Multinomial,
            ("top_k", Some(a)) => Sampling::TopK(a.parse().map_err(|_| bad())?),
            ("nucleus" | "top_p", Some(a)) => Sampling::Nucleus(a.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    #[default]
    None,
    Instruction1,
    Instruction2,
    Cot,
}

impl PrefixMode {
    pub fn text(&self) -> Option<&'static str> {
        match self {
            PrefixMode::None => None,
            PrefixMode::Instruction1 => Some(INSTRUCTION1_PREFIX),
            PrefixMode::Instruction2 => Some(INSTRUCTION2_PREFIX),
            PrefixMode::Cot => Some(COT_PREFIX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    /// Counterfactuals come from the prompt alone.
    #[default]
    Static,
    /// Counterfactuals are rebuilt from prompt + generated text before every step.
    PerStep,
}

macro_rules! keyword_enum {
    ($ty:ident { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = CafieError;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                    $($text => Ok($variant),)+
                    _ => Err(CafieError::param(
                        stringify!($ty),
                        format!("`{s}` is not one of: {}", [$($text),+].join(", ")),
                    )),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($text); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(PrefixMode { "none" => PrefixMode::None, "instruction1" => PrefixMode::Instruction1, "instruction2" => PrefixMode::Instruction2, "cot" => PrefixMode::Cot });
keyword_enum!(Refresh { "static" => Refresh::Static, "per_step" => Refresh::PerStep });

/// Draws a token. Identical inputs give identical output: the generator is
/// ChaCha8 keyed by `seed`, with `draw_index` selecting an independent stream.
pub fn sample(dist: &Distribution, strategy: Sampling, seed: u64, draw_index: u64) -> TokenId {
    let probs = dist.probs();
    let candidates: Vec<usize> = match strategy {
        Sampling::Greedy => return dist.argmax() as TokenId,
        Sampling::Multinomial => (0..probs.len()).collect(),
        Sampling::TopK(k) => {
            let mut order = by_descending_prob(probs);
            order.truncate(k.max(1));
            order
        }
        Sampling::Nucleus(p) => {
            let order = by_descending_prob(probs);
            let mut cum = 0.0;
            let mut keep = Vec::new();
            for i in order {
                keep.push(i);
                cum += probs[i];
                if cum >= p {
                    break;
                }
            }
            keep
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw_index);
    let total: f64 = candidates.iter().map(|&i| probs[i]).sum();
    let target = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last = candidates[0];
    for &i in &candidates {
        if probs[i] <= 0.0 {
            continue;
        }
        cum += probs[i];
        last = i;
        if target < cum {
            return i as TokenId;
        }
    }
    last as TokenId
}

fn by_descending_prob(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub source_entropy: f64,
    pub source_argmax: TokenId,
    pub delta_l1: Vec<f64>,
    pub token: TokenId,
    pub fair_prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecodeTrace {
    pub counterfactuals: usize,
    pub steps: Vec<StepRecord>,
    pub backend_call_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generation {
    /// The continuation only (no prefix, no prompt).
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
}

/// Source, counterfactual and calibrated distributions at one position.
#[derive(Debug, Clone)]
pub struct StepDistributions {
    pub source: Distribution,
    pub counterfactuals: Vec<Distribution>,
    pub fair: Distribution,
}

/// A configured generator: shared backend and lexicon plus decoding settings.
#[derive(Clone)]
pub struct DecodeSession {
    backend: Arc<dyn LanguageModel>,
    lexicon: Arc<AttributeLexicon>,
    pub params: CalibrationParams,
    pub sampling: Sampling,
    pub seed: u64,
    pub max_tokens: usize,
    pub prefix_mode: PrefixMode,
    pub refresh: Refresh,
}

impl fmt::Debug for DecodeSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecodeSession")
            .field("backend", &self.backend.descriptor())
            .field("params", &self.params)
            .field("sampling", &self.sampling)
            .field("seed", &self.seed)
            .field("max_tokens", &self.max_tokens)
            .field("prefix_mode", &self.prefix_mode)
            .field("refresh", &self.refresh)
            .finish_non_exhaustive()
    }
}

impl DecodeSession {
    /// Defaults: calibrator defaults, greedy, seed 0, 20 tokens, no prefix, static refresh.
    pub fn new(backend: Arc<dyn LanguageModel>, lexicon: Arc<AttributeLexicon>) -> Self {
        Self {
            backend,
            lexicon,
            params: CalibrationParams::default(),
            sampling: Sampling::Greedy,
            seed: 0,
            max_tokens: 20,
            prefix_mode: PrefixMode::None,
            refresh: Refresh::Static,
        }
    }

    pub fn with_params(mut self, params: CalibrationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_prefix_mode(mut self, prefix_mode: PrefixMode) -> Self {
        self.prefix_mode = prefix_mode;
        self
    }

    pub fn with_refresh(mut self, refresh: Refresh) -> Self {
        self.refresh = refresh;
        self
    }

    pub fn backend(&self) -> &Arc<dyn LanguageModel> {
        &self.backend
    }

    pub fn lexicon(&self) -> &Arc<AttributeLexicon> {
        &self.lexicon
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        self.backend.descriptor()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sampling.validate()?;
        if self.max_tokens == 0 {
            return Err(CafieError::param("max_tokens", "must be at least 1"));
        }
        Ok(())
    }

    /// Counterfactual rewrites of `text`, capped at `max_counterfactuals`.
    pub fn counterfactuals(&self, text: &str) -> Result<CounterfactualSet> {
        let mut set = self.lexicon.counterfactuals_of(text)?;
        set.truncate(self.params.max_counterfactuals);
        Ok(set)
    }

    /// `<s>`, then the prefix prompt (if any), then `text`.
    pub fn context_ids(&self, text: &str) -> TokenSequence {
        let vocab = self.backend.vocab();
        let mut ids = vec![BOS];
        if let Some(prefix) = self.prefix_mode.text() {
            ids.extend_from_slice(vocab.tokenize(prefix).ids());
        }
        ids.extend_from_slice(vocab.tokenize(text).ids());
        TokenSequence::new(ids)
    }

    fn counterfactual_contexts(&self, text: &str) -> Result<Vec<TokenSequence>> {
        Ok(self
            .counterfactuals(text)?
            .counterfactuals
            .iter()
            .map(|cf| self.context_ids(&cf.text))
            .collect())
    }

    fn step(
        &self,
        source: &TokenSequence,
        counterfactuals: &[TokenSequence],
    ) -> Result<StepDistributions> {
        let mut contexts = Vec::with_capacity(counterfactuals.len() + 1);
        contexts.push(source.clone());
        contexts.extend_from_slice(counterfactuals);
        let mut dists = self
            .backend
            .next_token_distributions(&contexts, self.params.temperature)?;
        let counterfactuals = dists.split_off(1);
        let source = dists.pop().expect("source distribution");
        let fair = calibrate(&source, &counterfactuals, &self.params)?;
        Ok(StepDistributions {
            source,
            counterfactuals,
            fair,
        })
    }

    /// Distributions for the first token after `prompt`.
    pub fn step_distributions(&self, prompt: &str) -> Result<StepDistributions> {
        self.validate()?;
        self.step(
            &self.context_ids(prompt),
            &self.counterfactual_contexts(prompt)?,
        )
    }

    /// Generates up to `max_tokens` tokens after `prompt`, stopping at `</s>`.
    pub fn generate(&self, prompt: &str) -> Result<Generation> {
        self.validate()?;
        if prompt.trim().is_empty() {
            return Err(CafieError::param("prompt", "must be non-empty"));
        }
        let vocab = self.backend.vocab();
        let mut source = self.context_ids(prompt);
        let mut cf_contexts = self.counterfactual_contexts(prompt)?;
        let mut trace = DecodeTrace {
            counterfactuals: cf_contexts.len(),
            ..DecodeTrace::default()
        };
        let mut generated: Vec<TokenId> = Vec::new();

        for step in 0..self.max_tokens {
            if self.refresh == Refresh::PerStep && step > 0 {
                let text = join_text(prompt, &vocab.detokenize(&generated));
                cf_contexts = self
                    .counterfactuals(&text)?
                    .counterfactuals
                    .iter()
                    .map(|cf| self.context_ids(&cf.text))
                    .collect();
            }
            let dists = self.step(&source, &cf_contexts)?;
            trace.backend_call_count += cf_contexts.len() + 1;
            let token = sample(&dists.fair, self.sampling, self.seed, step as u64);
            trace.steps.push(StepRecord {
                source_entropy: dists.source.entropy(),
                source_argmax: dists.source.argmax() as TokenId,
                delta_l1: dists
                    .counterfactuals
                    .iter()
                    .map(|cf| disparity(&dists.source, cf).map(|d| d.l1_norm()))
                    .collect::<Result<_>>()?,
                token,
                fair_prob: dists.fair.prob(token as usize),
            });
            if token == EOS {
                break;
            }
            generated.push(token);
            source.push(token);
            for c in &mut cf_contexts {
                c.push(token);
            }
        }
        trace.counterfactuals = trace.counterfactuals.max(cf_contexts.len());
        Ok(Generation {
            text: vocab.detokenize(&generated),
            tokens: generated,
            trace,
        })
    }

    /// Sum of log fair probabilities of `continuation` after `context`,
    /// accumulated left to right exactly like the backend's own scorer.
    pub fn fair_sequence_logprob(&self, context: &str, continuation: &str) -> Result<f64> {
        let ids = self.backend.vocab().tokenize(continuation);
        self.fair_sequence_logprob_ids(context, ids.ids())
    }

    pub fn fair_sequence_logprob_ids(
        &self,
        context: &str,
        continuation: &[TokenId],
    ) -> Result<f64> {
        self.validate()?;
        if continuation.is_empty() {
            return Err(CafieError::param(
                "continuation",
                "must contain at least one token",
            ));
        }
        let vocab = self.backend.vocab();
        let mut source = self.context_ids(context);
        let mut cf_contexts = self.counterfactual_contexts(context)?;
        let mut total = 0.0;
        for (i, &tok) in continuation.iter().enumerate() {
            if self.refresh == Refresh::PerStep && i > 0 {
                let text = join_text(context, &vocab.detokenize(&continuation[..i]));
                cf_contexts = self.counterfactual_contexts(&text)?;
            }
            let dists = self.step(&source, &cf_contexts)?;
            total += dists.fair.prob(tok as usize).ln();
            source.push(tok);
            for c in &mut cf_contexts {
                c.push(tok);
            }
        }
        Ok(total)
    }
}

fn join_text(a: &str, b: &str) -> String {
    match (a.trim().is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a} {b}"),
    }
}
