use std::collections::HashMap;

use cafie_core::backend::{vocab_path_for, LanguageModel, NgramModel};
use cafie_core::eval::eval_fluency;
use cafie_core::text::{TokenId, TokenSequence, Vocabulary, BOS, EOS};
use cafie_core::CafieError;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Interpolated add-k estimate computed from raw n-gram counts:
/// p_n(w|h) = l (c(h,w) + k) / (c(h) + kV') + (1 - l) p_{n-1}(w|h'),
/// l = c(h) / (c(h) + kV'), V' = |V| - 1 (no <s>), recursion stops at the
/// first unseen history.
fn oracle(
    lines: &[&str],
    vocab: &Vocabulary,
    order: usize,
    k: f64,
    context: &[TokenId],
) -> Vec<f64> {
    let mut counts: HashMap<Vec<TokenId>, u64> = HashMap::new();
    let mut history: HashMap<Vec<TokenId>, u64> = HashMap::new();
    for line in lines {
        let mut seq = vec![BOS];
        seq.extend_from_slice(vocab.tokenize(line).ids());
        seq.push(EOS);
        for i in 1..seq.len() {
            for n in 1..=order.min(i + 1) {
                let gram = seq[i + 1 - n..=i].to_vec();
                *history.entry(gram[..n - 1].to_vec()).or_default() += 1;
                *counts.entry(gram).or_default() += 1;
            }
        }
    }
    let v = vocab.len();
    let vp = (v - 1) as f64;
    let mut p: Vec<f64> = (0..v as TokenId)
        .map(|w| {
            if w == BOS {
                0.0
            } else {
                let c = *counts.get(&vec![w]).unwrap_or(&0) as f64;
                (c + k) / (history[&vec![]] as f64 + k * vp)
            }
        })
        .collect();
    for n in 2..=order {
        if context.len() < n - 1 {
            break;
        }
        let h = context[context.len() + 1 - n..].to_vec();
        let Some(&ch) = history.get(&h) else { break };
        let ch = ch as f64;
        let l = ch / (ch + k * vp);
        for w in 1..v as TokenId {
            let mut g = h.clone();
            g.push(w);
            let c = *counts.get(&g).unwrap_or(&0) as f64;
            p[w as usize] = l * (c + k) / (ch + k * vp) + (1.0 - l) * p[w as usize];
        }
    }
    p
}

fn stereotype_corpus() -> Vec<String> {
    let mut lines = Vec::new();
    for _ in 0..90 {
        lines.push("he works as a doctor".to_string());
        lines.push("she works as a nurse".to_string());
    }
    for _ in 0..10 {
        lines.push("he works as a nurse".to_string());
        lines.push("she works as a doctor".to_string());
    }
    lines
}

fn ctx(model: &NgramModel, text: &str) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend_from_slice(model.vocab().tokenize(text).ids());
    TokenSequence::new(ids)
}

#[test]
fn probabilities_match_the_count_oracle() {
    let corpus = stereotype_corpus();
    let lines: Vec<&str> = corpus.iter().map(String::as_str).collect();
    for order in 2..=5 {
        for k in [0.01, 0.1, 1.0] {
            let m = NgramModel::train_with_vocab(lines.iter().copied(), order, k, 1).unwrap();
            for text in ["he works as a", "she", "a", "nurse doctor", ""] {
                let c = ctx(&m, text);
                let want = oracle(&lines, m.vocab(), order, k, c.ids());
                let got = m.probabilities(c.ids());
                let diff = got
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-12, "order {order} k {k} `{text}`: {diff}");
            }
        }
    }
}

#[test]
fn doctor_nurse_ratio_follows_counts() {
    let corpus = stereotype_corpus();
    let lines: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let m = NgramModel::train_with_vocab(lines.iter().copied(), 3, 0.01, 1).unwrap();
    let d = m
        .next_token_distribution(&ctx(&m, "he works as a"), 1.0)
        .unwrap();
    let (doc, nur) = (
        m.vocab().id("doctor").unwrap(),
        m.vocab().id("nurse").unwrap(),
    );
    let ratio = d.prob(doc as usize) / d.prob(nur as usize);
    let want = oracle(&lines, m.vocab(), 3, 0.01, ctx(&m, "he works as a").ids());
    assert!((ratio - want[doc as usize] / want[nur as usize]).abs() < 1e-9);
    // The trigram history "as a" mixes both subjects: (100 + k) / (100 + k) = 1.
    assert!((ratio - 1.0).abs() < 1e-9, "{ratio}");
    let m5 = NgramModel::train_with_vocab(lines.iter().copied(), 5, 0.01, 1).unwrap();
    let d5 = m5
        .next_token_distribution(&ctx(&m5, "he works as a"), 1.0)
        .unwrap();
    let r5 = d5.prob(doc as usize) / d5.prob(nur as usize);
    assert!((r5 - 9.0).abs() < 0.05, "{r5}");
}

#[test]
fn uniform_training_gives_uniform_predictions() {
    // Every bigram over {a, b} plus both boundary transitions, seen once.
    let lines = ["a a", "a b", "b a", "b b"];
    let m = NgramModel::train_with_vocab(lines, 2, 1.0, 1).unwrap();
    let d = m.next_token_distribution(&ctx(&m, "a"), 1.0).unwrap();
    let a = m.vocab().id("a").unwrap() as usize;
    let b = m.vocab().id("b").unwrap() as usize;
    assert!((d.prob(a) - d.prob(b)).abs() < 1e-15);
}

#[test]
fn vanishing_k_recovers_the_count_ratio() {
    let m = NgramModel::train_with_vocab(["a b", "a b"], 2, 1e-9, 1).unwrap();
    let b = m.vocab().id("b").unwrap() as usize;
    let d = m.next_token_distribution(&ctx(&m, "a"), 1.0).unwrap();
    assert!(d.prob(b) > 1.0 - 1e-6);
}

#[test]
fn begin_marker_is_never_predicted() {
    let m = NgramModel::train_with_vocab(["a b c"], 3, 0.5, 1).unwrap();
    let d = m.next_token_distribution(&ctx(&m, "a"), 1.0).unwrap();
    assert_eq!(d.prob(BOS as usize), 0.0);
    assert!(m.logits(&[BOS])[BOS as usize].is_infinite());
}

#[test]
fn temperature_flattens_without_moving_the_argmax() {
    let corpus = stereotype_corpus();
    let m = NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 3, 0.1, 1).unwrap();
    let c = ctx(&m, "she works as a");
    let support = |d: &cafie_core::Distribution| -> (f64, f64) {
        let p: Vec<f64> = d.probs().iter().copied().filter(|&x| x > 0.0).collect();
        (
            p.iter().copied().fold(0.0, f64::max),
            p.iter().copied().fold(1.0, f64::min),
        )
    };
    let mut prev_ratio = f64::INFINITY;
    let argmax = m.next_token_distribution(&c, 1.0).unwrap().argmax();
    for t in [0.1, 0.5, 1.0, 2.0, 5.0, 50.0, 1000.0] {
        let d = m.next_token_distribution(&c, t).unwrap();
        assert_eq!(d.argmax(), argmax);
        let (hi, lo) = support(&d);
        assert!(hi / lo < prev_ratio, "T={t}");
        prev_ratio = hi / lo;
    }
    assert!(prev_ratio < 1.01);
}

#[test]
fn training_text_is_less_perplexing_than_shuffled_text() {
    let corpus = stereotype_corpus();
    let m = NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 3, 0.1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shuffled: Vec<String> = corpus
        .iter()
        .map(|l| {
            let mut w: Vec<&str> = l.split(' ').collect();
            w.shuffle(&mut rng);
            w.join(" ")
        })
        .collect();
    let train = eval_fluency(corpus.iter().map(String::as_str), &m)
        .unwrap()
        .perplexity;
    let shuf = eval_fluency(shuffled.iter().map(String::as_str), &m)
        .unwrap()
        .perplexity;
    assert!(train <= shuf, "{train} vs {shuf}");
}

#[test]
fn unseen_text_has_finite_perplexity() {
    let m = NgramModel::train_with_vocab(["a b c", "c b a"], 3, 0.1, 1).unwrap();
    let ppl = eval_fluency(["c c c a", "zzz b"], &m).unwrap().perplexity;
    assert!(ppl.is_finite() && ppl > 1.0);
}

#[test]
fn deterministic_chain_has_zero_logprob() {
    let m = NgramModel::train_with_vocab(["x y z"], 2, 1e-300, 1).unwrap();
    let ids = m.vocab().tokenize("x y z").0;
    let lp = m
        .sequence_logprob(&TokenSequence::with_bos(&[]), &ids, 1.0)
        .unwrap();
    assert!(lp.abs() < 1e-12, "{lp}");
}

#[test]
fn training_rejects_bad_hyperparameters() {
    assert!(matches!(
        NgramModel::train_with_vocab(["a"], 1, 0.1, 1),
        Err(CafieError::InvalidParameter { .. })
    ));
    assert!(matches!(
        NgramModel::train_with_vocab(["a"], 6, 0.1, 1),
        Err(CafieError::InvalidParameter { .. })
    ));
    assert!(matches!(
        NgramModel::train_with_vocab(["a"], 3, 0.0, 1),
        Err(CafieError::InvalidParameter { .. })
    ));
    assert!(matches!(
        NgramModel::train_with_vocab([""], 3, 0.1, 1),
        Err(CafieError::EmptyCorpus)
    ));
}

#[test]
fn container_round_trip_is_byte_exact() {
    let corpus = stereotype_corpus();
    let m = NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 4, 0.05, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    m.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"CAFN1");
    assert!(vocab_path_for(&path).exists());
    let back = NgramModel::load(&path).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let again =
        NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 4, 0.05, 1).unwrap();
    assert_eq!(again.to_bytes(), bytes);
    let c = ctx(&m, "she works as");
    assert_eq!(back.probabilities(c.ids()), m.probabilities(c.ids()));
}

#[test]
fn container_detects_a_different_vocabulary() {
    let m = NgramModel::train_with_vocab(["a b"], 2, 0.1, 1).unwrap();
    let other = Vocabulary::build(["a c"], 1).unwrap();
    assert!(matches!(
        NgramModel::from_bytes(&m.to_bytes(), other),
        Err(CafieError::VocabMismatch { .. })
    ));
    let mut bytes = m.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(
        NgramModel::from_bytes(&bytes, m.vocab().clone()),
        Err(CafieError::ModelFormat(_))
    ));
    let truncated = &m.to_bytes()[..20];
    assert!(matches!(
        NgramModel::from_bytes(truncated, m.vocab().clone()),
        Err(CafieError::ModelFormat(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_rule_is_exact(
        ids in prop::collection::vec(1u32..9, 2..8),
        split in 1usize..7,
        t in prop::sample::select(vec![0.5, 1.0, 2.0]),
    ) {
        let corpus = stereotype_corpus();
        let m = NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 3, 0.1, 1).unwrap();
        let split = split.min(ids.len() - 1);
        let c = TokenSequence::with_bos(&[]);
        let whole = m.sequence_logprob(&c, &ids, t).unwrap();
        let head = m.sequence_logprob(&c, &ids[..split], t).unwrap();
        let tail = m.sequence_logprob(&c.concat(&ids[..split]), &ids[split..], t).unwrap();
        prop_assert!((whole - (head + tail)).abs() < 1e-9, "{} vs {}", whole, head + tail);
        prop_assert!(whole <= 0.0);
    }

    #[test]
    fn distributions_are_valid(ids in prop::collection::vec(0u32..9, 0..6), t in 0.05_f64..20.0) {
        let corpus = stereotype_corpus();
        let m = NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 3, 0.1, 1).unwrap();
        let d = m.next_token_distribution(&TokenSequence::with_bos(&ids), t).unwrap();
        let s: f64 = d.probs().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(d.probs().iter().all(|p| p.is_finite() && *p >= 0.0));
    }
}

#[test]
fn single_token_logprob_is_the_distribution_entry() {
    let corpus = stereotype_corpus();
    let m = NgramModel::train_with_vocab(corpus.iter().map(String::as_str), 3, 0.1, 1).unwrap();
    let c = ctx(&m, "she works as a");
    let nurse = m.vocab().id("nurse").unwrap();
    let lp = m.sequence_logprob(&c, &[nurse], 1.0).unwrap();
    let d = m.next_token_distribution(&c, 1.0).unwrap();
    assert_eq!(lp, d.prob(nurse as usize).ln());
}
