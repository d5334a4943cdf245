//! Word-level vocabulary and tokenization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::error::{CafieError, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

const RESERVED: [&str; 3] = [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

static PIECE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)</?s>|<unk>|\w+|[^\w\s]").expect("static regex"));

/// A piece of surface text with its byte range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Splits text into word and punctuation pieces. Reserved markers such as
/// `<unk>` are kept whole so that detokenized text tokenizes back to the same ids.
pub fn pieces(text: &str) -> impl Iterator<Item = Piece<'_>> {
    PIECE.find_iter(text).map(|m| Piece {
        text: m.as_str(),
        start: m.start(),
        end: m.end(),
    })
}

/// Lowercased pieces joined by single spaces.
pub fn normalize(text: &str) -> String {
    pieces(text)
        .map(|p| p.text.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A tokenized context (no implicit BOS/EOS).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    /// `[BOS] ++ ids`
    pub fn with_bos(ids: &[TokenId]) -> Self {
        let mut v = Vec::with_capacity(ids.len() + 1);
        v.push(BOS);
        v.extend_from_slice(ids);
        Self(v)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn concat(&self, other: &[TokenId]) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(other);
        Self(v)
    }
}

/// Word vocabulary; ids 0..3 are BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary of lowercased word types with frequency >= `min_count`,
    /// ordered by descending frequency then lexicographically.
    pub fn build<'a, I>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for piece in pieces(line) {
                let word = piece.text.to_lowercase();
                if RESERVED.contains(&word.as_str()) {
                    continue;
                }
                *counts.entry(word).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        if kept.is_empty() {
            return Err(CafieError::EmptyCorpus);
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Builds from an explicit id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 {
            return Err(CafieError::Validation(format!(
                "vocabulary needs the 3 reserved tokens plus at least one word, got {} entries",
                tokens.len()
            )));
        }
        for (i, reserved) in RESERVED.iter().enumerate() {
            if tokens[i] != *reserved {
                return Err(CafieError::Validation(format!(
                    "id {i} must be `{reserved}`, found `{}`",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(CafieError::Validation(format!(
                    "token {i} `{t}` is empty or has whitespace"
                )));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(CafieError::Validation(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercased word ids; out-of-vocabulary words map to UNK. No BOS/EOS.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        TokenSequence(
            pieces(text)
                .map(|p| self.id(&p.text.to_lowercase()).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&crate::error::read_text(path)?)
    }

    /// SHA-256 of the persisted form; model files reference their vocabulary by it.
    pub fn content_hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}
