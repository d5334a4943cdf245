//! Lexicon-based sentiment scoring with negation and intensity modifiers.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::{CafieError, Result};

/// The shipped valence list (a subset of the VADER lexicon).
pub const STARTER_SENTIMENT_TSV: &str = include_str!("../data/sentiment_lexicon.tsv");

pub const NEGATION_WINDOW: usize = 3;
pub const BOOSTER_WINDOW: usize = 2;
/// Constant in the compound normalizer `s / sqrt(s^2 + NORMALIZER)`.
pub const NORMALIZER: f64 = 15.0;

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\w']+").expect("static regex"));

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    valence: HashMap<String, f64>,
    negators: HashSet<String>,
    boosters: HashMap<String, f64>,
}

impl SentimentLexicon {
    pub fn new(
        valence: HashMap<String, f64>,
        negators: HashSet<String>,
        boosters: HashMap<String, f64>,
    ) -> Result<Self> {
        for (w, v) in &valence {
            if !v.is_finite() || !(-4.0..=4.0).contains(v) {
                return Err(CafieError::Validation(format!(
                    "valence of `{w}` is {v}, outside [-4, 4]"
                )));
            }
        }
        for (w, m) in &boosters {
            if !(0.5..=2.0).contains(m) {
                return Err(CafieError::Validation(format!(
                    "booster `{w}` multiplier {m} outside [0.5, 2]"
                )));
            }
        }
        Ok(Self {
            valence,
            negators,
            boosters,
        })
    }

    /// Parses `word<TAB>valence` lines plus `#negator<TAB>word` and
    /// `#booster<TAB>word<TAB>multiplier` directives; other `#` lines are comments.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut valence = HashMap::new();
        let mut negators = HashSet::new();
        let mut boosters = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let at = || format!("line {}", i + 1);
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let number = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CafieError::parse(at(), format!("`{s}` is not a number")))
            };
            match fields[0] {
                "#negator" => {
                    let [_, word] = fields[..] else {
                        return Err(CafieError::parse(at(), "expected `#negator<TAB>word`"));
                    };
                    negators.insert(word.trim().to_lowercase());
                }
                "#booster" => {
                    let [_, word, mult] = fields[..] else {
                        return Err(CafieError::parse(
                            at(),
                            "expected `#booster<TAB>word<TAB>multiplier`",
                        ));
                    };
                    boosters.insert(word.trim().to_lowercase(), number(mult)?);
                }
                f if f.starts_with('#') => {}
                _ => {
                    let [word, v] = fields[..] else {
                        return Err(CafieError::parse(at(), "expected `word<TAB>valence`"));
                    };
                    valence.insert(word.trim().to_lowercase(), number(v)?);
                }
            }
        }
        Self::new(valence, negators, boosters)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&crate::error::read_text(path)?).map_err(|e| match e {
            CafieError::Parse { location, message } => CafieError::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn starter() -> Self {
        Self::from_tsv(STARTER_SENTIMENT_TSV).expect("shipped sentiment lexicon is valid")
    }

    pub fn valence(&self, word: &str) -> Option<f64> {
        self.valence.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    /// Same lexicon with every valence negated.
    pub fn mirrored(&self) -> Self {
        Self {
            valence: self.valence.iter().map(|(w, v)| (w.clone(), -v)).collect(),
            negators: self.negators.clone(),
            boosters: self.boosters.clone(),
        }
    }

    /// Sum of modified valences in `text`.
    pub fn raw_score(&self, text: &str) -> f64 {
        let words: Vec<String> = WORD
            .find_iter(text)
            .map(|m| m.as_str().to_lowercase().replace('\'', ""))
            .filter(|w| !w.is_empty())
            .collect();
        let mut total = 0.0;
        for (i, w) in words.iter().enumerate() {
            let Some(mut v) = self.valence(w) else {
                continue;
            };
            let negated = words[i.saturating_sub(NEGATION_WINDOW)..i]
                .iter()
                .any(|p| self.negators.contains(p));
            if negated {
                v = -v;
            }
            for p in &words[i.saturating_sub(BOOSTER_WINDOW)..i] {
                if let Some(m) = self.boosters.get(p) {
                    v *= m;
                }
            }
            total += v;
        }
        total
    }

    /// Compound score in [-1, 1]; zero for text with no valence words.
    pub fn score(&self, text: &str) -> f64 {
        compound(self.raw_score(text))
    }
}

pub fn compound(s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    (s / (s * s + NORMALIZER).sqrt()).clamp(-1.0, 1.0)
}
