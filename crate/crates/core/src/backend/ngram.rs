//! Interpolated add-k n-gram model and its binary container.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{check_query, BackendDescriptor, BackendKind, Distribution, LanguageModel};
use crate::distribution::NextTokenDistribution;
use crate::error::{CafieError, Result};
use crate::text::{TokenId, TokenSequence, Vocabulary, BOS, EOS};

const MAGIC: &[u8; 5] = b"CAFN1";
pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 5;

/// Continuation counts observed after one history.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Followers {
    total: u64,
    /// sorted by token id
    next: Vec<(TokenId, u64)>,
}

/// The vocabulary file stored beside a model: `model.bin` -> `model.vocab`.
pub fn vocab_path_for(model_path: &Path) -> PathBuf {
    model_path.with_extension("vocab")
}

/// Add-k estimates at every order from 1 to `order`, interpolated from the
/// lowest order up. The weight of each history is `c(h) / (c(h) + k|V'|)`,
/// where `V'` is the vocabulary without `<s>`, which is never predicted.
#[derive(Debug, Clone)]
pub struct NgramModel {
    vocab: Vocabulary,
    order: usize,
    k: f64,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// `tables[n - 2]` maps an (n-1)-token history to its followers.
    tables: Vec<HashMap<Vec<TokenId>, Followers>>,
    identity: String,
}

impl NgramModel {
    /// Counts every line as `<s> tokens </s>`.
    pub fn train<'a, I>(lines: I, vocab: Vocabulary, order: usize, k: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        check_hyper(order, k)?;
        let mut unigram = vec![0u64; vocab.len()];
        let mut raw: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> =
            vec![HashMap::new(); order - 1];
        let mut any = false;
        for line in lines {
            let body = vocab.tokenize(line);
            if body.is_empty() {
                continue;
            }
            any = true;
            let mut seq = Vec::with_capacity(body.len() + 2);
            seq.push(BOS);
            seq.extend_from_slice(body.ids());
            seq.push(EOS);
            for i in 1..seq.len() {
                let w = seq[i];
                unigram[w as usize] += 1;
                for n in MIN_ORDER..=order.min(i + 1) {
                    let h = seq[i + 1 - n..i].to_vec();
                    *raw[n - 2].entry(h).or_default().entry(w).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(CafieError::EmptyCorpus);
        }
        let tables = raw
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(h, next)| {
                        let mut next: Vec<_> = next.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|(_, c)| c).sum();
                        (h, Followers { total, next })
                    })
                    .collect()
            })
            .collect();
        let unigram_total = unigram.iter().sum();
        Ok(Self {
            identity: format!("ngram(order={order}, k={k})"),
            vocab,
            order,
            k,
            unigram,
            unigram_total,
            tables,
        })
    }

    /// Builds the vocabulary from the same lines, then trains.
    pub fn train_with_vocab<'a, I>(lines: I, order: usize, k: f64, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str> + Clone,
    {
        let vocab = Vocabulary::build(lines.clone(), min_count)?;
        Self::train(lines, vocab, order, k)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Interpolated probabilities for the next token (`<s>` gets zero).
    pub fn probabilities(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let kv = self.k * (v - 1) as f64;
        let denom = self.unigram_total as f64 + kv;
        let mut p: Vec<f64> = self
            .unigram
            .iter()
            .map(|&c| (c as f64 + self.k) / denom)
            .collect();
        p[BOS as usize] = 0.0;
        for n in MIN_ORDER..=self.order {
            if context.len() < n - 1 {
                break;
            }
            let h = &context[context.len() + 1 - n..];
            let Some(f) = self.tables[n - 2].get(h) else {
                break;
            };
            let total = f.total as f64;
            let denom = total + kv;
            let lambda = total / denom;
            let floor = lambda * self.k / denom;
            for (i, pi) in p.iter_mut().enumerate() {
                if i != BOS as usize {
                    *pi = floor + (1.0 - lambda) * *pi;
                }
            }
            for &(w, c) in &f.next {
                p[w as usize] += lambda * c as f64 / denom;
            }
        }
        p
    }

    /// Natural-log probabilities; `<s>` is `-inf`.
    pub fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        self.probabilities(context)
            .into_iter()
            .map(f64::ln)
            .collect()
    }

    /// Writes the model to `path` and its vocabulary to [`vocab_path_for`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let vocab_path = vocab_path_for(path);
        if vocab_path == path {
            return Err(CafieError::param("model path", "must not end in .vocab"));
        }
        self.vocab.save(&vocab_path)?;
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let vocab_path = vocab_path_for(path);
        let vocab = Vocabulary::load(&vocab_path).map_err(|e| match e {
            CafieError::Io(io) => CafieError::ModelFormat(format!(
                "cannot read vocabulary {}: {io}",
                vocab_path.display()
            )),
            other => other,
        })?;
        let bytes = crate::error::read_file(path)?;
        let mut model = Self::from_bytes(&bytes, vocab)?;
        model.identity = path.display().to_string();
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.vocab.content_hash());

        let unigrams: Vec<_> = self
            .unigram
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .collect();
        out.extend_from_slice(&(unigrams.len() as u64).to_le_bytes());
        for (w, c) in unigrams {
            out.extend_from_slice(&(w as u32).to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        for table in &self.tables {
            let mut rows: Vec<(Vec<TokenId>, u64)> = table
                .iter()
                .flat_map(|(h, f)| {
                    f.next.iter().map(move |&(w, c)| {
                        let mut gram = h.clone();
                        gram.push(w);
                        (gram, c)
                    })
                })
                .collect();
            rows.sort_unstable();
            out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
            for (gram, c) in rows {
                for id in gram {
                    out.extend_from_slice(&id.to_le_bytes());
                }
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], vocab: Vocabulary) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CafieError::ModelFormat("missing CAFN1 header".into()));
        }
        let order = r.u32()? as usize;
        let k = f64::from_le_bytes(r.array()?);
        check_hyper(order, k).map_err(|e| CafieError::ModelFormat(e.to_string()))?;
        let hash: [u8; 32] = r.array()?;
        if hash != vocab.content_hash() {
            return Err(CafieError::VocabMismatch {
                expected: format!("vocabulary with sha256 {}", hex(&hash)),
                actual: format!("sha256 {}", hex(&vocab.content_hash())),
            });
        }
        let v = vocab.len();
        let check_id = |id: u32| -> Result<TokenId> {
            if (id as usize) < v {
                Ok(id)
            } else {
                Err(CafieError::ModelFormat(format!(
                    "token id {id} outside vocabulary of {v}"
                )))
            }
        };

        let mut unigram = vec![0u64; v];
        for _ in 0..r.u64()? {
            let w = check_id(r.u32()?)?;
            unigram[w as usize] = r.u64()?;
        }
        let mut tables = Vec::with_capacity(order - 1);
        for n in MIN_ORDER..=order {
            let mut table: HashMap<Vec<TokenId>, Followers> = HashMap::new();
            let rows = r.u64()?;
            let mut prev: Option<Vec<TokenId>> = None;
            for _ in 0..rows {
                let mut gram = Vec::with_capacity(n);
                for _ in 0..n {
                    gram.push(check_id(r.u32()?)?);
                }
                let c = r.u64()?;
                if prev.as_ref().is_some_and(|p| *p >= gram) {
                    return Err(CafieError::ModelFormat(format!(
                        "{n}-gram table is not strictly sorted"
                    )));
                }
                let w = gram.pop().expect("n >= 2");
                let f = table.entry(gram.clone()).or_insert(Followers {
                    total: 0,
                    next: Vec::new(),
                });
                f.total += c;
                f.next.push((w, c));
                gram.push(w);
                prev = Some(gram);
            }
            tables.push(table);
        }
        if r.pos != bytes.len() {
            return Err(CafieError::ModelFormat(format!(
                "{} trailing bytes after count tables",
                bytes.len() - r.pos
            )));
        }
        let unigram_total = unigram.iter().sum();
        Ok(Self {
            identity: format!("ngram(order={order}, k={k})"),
            vocab,
            order,
            k,
            unigram,
            unigram_total,
            tables,
        })
    }
}

impl LanguageModel for NgramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Ngram,
            identity: self.identity.clone(),
            vocab_size: self.vocab.len(),
        }
    }

    fn distribution(&self, context: &[TokenId], temperature: f64) -> Result<Distribution> {
        check_query(context, temperature)?;
        NextTokenDistribution::from_logits(&self.logits(context), temperature)
    }

    fn distributions(
        &self,
        contexts: &[TokenSequence],
        temperature: f64,
    ) -> Result<Vec<Distribution>> {
        contexts
            .par_iter()
            .map(|c| self.distribution(c.ids(), temperature))
            .collect()
    }
}

fn check_hyper(order: usize, k: f64) -> Result<()> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(CafieError::param(
            "order",
            format!("must be between {MIN_ORDER} and {MAX_ORDER}, got {order}"),
        ));
    }
    if !(k > 0.0) || !k.is_finite() {
        return Err(CafieError::param(
            "k",
            format!("must be finite and > 0, got {k}"),
        ));
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CafieError::ModelFormat(format!("file truncated at byte {}", self.bytes.len()))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}
