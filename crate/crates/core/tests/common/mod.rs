//! Shared fixtures and an independent reference implementation of the
//! calibration arithmetic, written with plain loops over `Vec<f64>`.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use cafie_core::backend::{LanguageModel, NgramModel};
use cafie_core::calibrator::{CalibrationParams, CombineMode, InterWeighting, WeightFn};
use cafie_core::decoder::DecodeSession;
use cafie_core::lexicon::AttributeLexicon;
use cafie_core::synthetic::{self, SyntheticConfig, SYNTHETIC_K, SYNTHETIC_ORDER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WEIGHT_FNS: [WeightFn; 4] = [
    WeightFn::Tanh,
    WeightFn::Arctan,
    WeightFn::Sigmoid,
    WeightFn::Softsign,
];
pub const INTER: [InterWeighting; 2] = [InterWeighting::Elementwise, InterWeighting::ScalarL1];

/// Reference weight, straight from the textbook definitions.
pub fn oracle_weight(delta: f64, lambda: f64, f: WeightFn) -> f64 {
    let x = -lambda * delta;
    match f {
        WeightFn::Tanh => x.tanh() + 1.0,
        WeightFn::Arctan => (2.0 / PI) * x.atan() + 1.0,
        WeightFn::Sigmoid => 2.0 * (1.0 / (1.0 + (-x).exp())),
        WeightFn::Softsign => x / (1.0 + x.abs()) + 1.0,
    }
}

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Reference adjusted distribution (before blending).
pub fn oracle_combine(po: &[f64], cfs: &[Vec<f64>], p: &CalibrationParams) -> Vec<f64> {
    let n = po.len();
    let r = cfs.len();
    let mean_cf: Vec<f64> = (0..n)
        .map(|v| cfs.iter().map(|c| c[v]).sum::<f64>() / r as f64)
        .collect();
    match p.combine_mode {
        CombineMode::Cafie => {
            let deltas: Vec<Vec<f64>> = cfs
                .iter()
                .map(|c| (0..n).map(|v| po[v] - c[v]).collect())
                .collect();
            let l1: Vec<f64> = deltas
                .iter()
                .map(|d| d.iter().map(|x| x.abs()).sum())
                .collect();
            let mut raw = vec![0.0; n];
            for v in 0..n {
                let mut acc = 0.0;
                for i in 0..r {
                    let coef = match p.inter_weighting {
                        InterWeighting::Elementwise => {
                            let den: f64 = (0..r).map(|j| deltas[j][v].abs().exp()).sum();
                            deltas[i][v].abs().exp() / den
                        }
                        InterWeighting::ScalarL1 => {
                            let den: f64 = (0..r).map(|j| l1[j].exp()).sum();
                            l1[i].exp() / den
                        }
                    };
                    acc += coef * oracle_weight(deltas[i][v], p.lambda, p.weight_fn) * po[v];
                }
                raw[v] = acc;
            }
            normalized(raw)
        }
        CombineMode::Jpdf => normalized((0..n).map(|v| po[v] * mean_cf[v]).collect()),
        CombineMode::Ratio => normalized((0..n).map(|v| (po[v] + mean_cf[v]) / 2.0).collect()),
        CombineMode::Weight => {
            let md: Vec<f64> = (0..n).map(|v| po[v] - mean_cf[v]).collect();
            let z: f64 = md.iter().map(|x| x.exp()).sum();
            normalized((0..n).map(|v| (1.0 - md[v].exp() / z) * po[v]).collect())
        }
    }
}

/// Reference fair distribution: adjusted distribution blended with the source.
pub fn oracle_fair(po: &[f64], cfs: &[Vec<f64>], p: &CalibrationParams) -> Vec<f64> {
    if cfs.is_empty() {
        return po.to_vec();
    }
    let c = oracle_combine(po, cfs, p);
    (0..po.len())
        .map(|v| p.alpha * c[v] + (1.0 - p.alpha) * po[v])
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A random probability vector with every entry strictly positive.
pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    normalized((0..n).map(|_| rng.random::<f64>() + 1e-3).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct SyntheticSetup {
    pub model: Arc<NgramModel>,
    pub lexicon: Arc<AttributeLexicon>,
    pub config: SyntheticConfig,
}

/// The default synthetic corpus, its trained n-gram model and gender lexicon,
/// built once per test binary.
pub fn synthetic_setup() -> &'static SyntheticSetup {
    static SETUP: OnceLock<SyntheticSetup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let config = SyntheticConfig::default();
        let corpus = synthetic::corpus(&config);
        let model = NgramModel::train_with_vocab(
            corpus.iter().map(String::as_str),
            SYNTHETIC_ORDER,
            SYNTHETIC_K,
            1,
        )
        .expect("synthetic model trains");
        SyntheticSetup {
            model: Arc::new(model),
            lexicon: Arc::new(synthetic::lexicon().expect("synthetic lexicon")),
            config,
        }
    })
}

impl SyntheticSetup {
    pub fn session(&self, lambda: f64, alpha: f64) -> DecodeSession {
        let backend: Arc<dyn LanguageModel> = self.model.clone();
        DecodeSession::new(backend, self.lexicon.clone()).with_params(CalibrationParams {
            lambda,
            alpha,
            ..CalibrationParams::default()
        })
    }
}
