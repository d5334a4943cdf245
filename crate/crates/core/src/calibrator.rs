//! Counterfactual calibration of next-token distributions.
//!
//! Given the source distribution `p_o` and the distributions `p_i` obtained
//! from R counterfactual contexts, the calibrator
//!
//! 1. measures the per-token disparity `delta_i = p_o - p_i`,
//! 2. turns it into an intra-counterfactual weight `w_i = f(-lambda * delta_i)`
//!    that shrinks tokens the source over-prefers and boosts tokens it
//!    under-prefers (`f(0) = 1` for every supported `f`),
//! 3. averages `w_i * p_o` over counterfactuals with softmax coefficients
//!    driven by `|delta_i|`, renormalizes, and
//! 4. blends the result back with `p_o` by `alpha`.
//!
//! Every kernel is generic over [`Scalar`]; the engine uses `f64`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distribution::NextTokenDistribution;
use crate::error::{CafieError, Result};
use crate::scalar::Scalar;

/// Mass below which a calibrated distribution is reported as degenerate.
pub const DEGENERATE_FLOOR: f64 = 1e-30;

/// The alpha grid of the ablation study.
pub const ALPHA_ABLATION_GRID: [f64; 7] = [0.0, 0.5, 0.8, 0.9, 0.99, 0.999, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    Tanh,
    Arctan,
    Sigmoid,
    Softsign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Cafie,
    Jpdf,
    Ratio,
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterWeighting {
    /// Softmax over counterfactuals taken independently at every vocabulary entry.
    Elementwise,
    /// Softmax over the L1 norms of the disparity vectors (one scalar per counterfactual).
    ScalarL1,
}

macro_rules! str_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = CafieError;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().replace('-', "_").as_str() {
                    $($name => Ok($variant),)+
                    other => Err(CafieError::param(
                        stringify!($ty),
                        format!("unknown value `{other}` (expected one of: {})", [$($name),+].join(", ")),
                    )),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self { $(v if *v == $variant => $name,)+ _ => unreachable!() };
                f.write_str(name)
            }
        }
    };
}

str_enum!(WeightFn { "tanh" => WeightFn::Tanh, "arctan" => WeightFn::Arctan, "sigmoid" => WeightFn::Sigmoid, "softsign" => WeightFn::Softsign });
str_enum!(CombineMode { "cafie" => CombineMode::Cafie, "jpdf" => CombineMode::Jpdf, "ratio" => CombineMode::Ratio, "weight" => CombineMode::Weight });
str_enum!(InterWeighting { "elementwise" => InterWeighting::Elementwise, "scalar_l1" => InterWeighting::ScalarL1 });

/// Hyperparameters of the calibration pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub lambda: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub max_counterfactuals: usize,
    pub weight_fn: WeightFn,
    pub combine_mode: CombineMode,
    pub inter_weighting: InterWeighting,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            alpha: 0.99,
            temperature: 1.0,
            max_counterfactuals: usize::MAX,
            weight_fn: WeightFn::Tanh,
            combine_mode: CombineMode::Cafie,
            inter_weighting: InterWeighting::Elementwise,
        }
    }
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CafieError::param(
                "lambda",
                format!("must be finite and >= 0, got {}", self.lambda),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CafieError::param(
                "alpha",
                format!("must lie in [0, 1], got {}", self.alpha),
            ));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(CafieError::param(
                "temperature",
                format!("must be finite and > 0, got {}", self.temperature),
            ));
        }
        Ok(())
    }
}

/// `p_source - p_counterfactual`, entries in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityVector<T: Scalar> {
    pub delta: Vec<T>,
}

impl<T: Scalar> DisparityVector<T> {
    pub fn l1_norm(&self) -> T {
        self.delta.iter().map(|d| d.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T: Scalar> {
    pub w: Vec<T>,
}

pub fn disparity<T: Scalar>(
    p_source: &NextTokenDistribution<T>,
    p_counterfactual: &NextTokenDistribution<T>,
) -> Result<DisparityVector<T>> {
    p_source.check_same_size(p_counterfactual)?;
    let delta = p_source
        .probs()
        .iter()
        .zip(p_counterfactual.probs())
        .map(|(a, b)| *a - *b)
        .collect();
    Ok(DisparityVector { delta })
}

/// Weight of a single entry. All variants map 0 to 1 and decrease in `delta`.
pub fn weight_of<T: Scalar>(delta: T, lambda: T, weight_fn: WeightFn) -> T {
    let two = T::of(2.0);
    let x = -lambda * delta;
    match weight_fn {
        // tanh(x) + 1 == 2 / (1 + e^{-2x}); this form keeps full relative
        // precision when the weight underflows towards zero.
        WeightFn::Tanh => two / (T::one() + (-two * x).exp()),
        WeightFn::Arctan => two / T::PI() * x.atan() + T::one(),
        WeightFn::Sigmoid => two / (T::one() + (-x).exp()),
        WeightFn::Softsign => x / (T::one() + x.abs()) + T::one(),
    }
}

pub fn intra_weight<T: Scalar>(
    delta: &DisparityVector<T>,
    lambda: T,
    weight_fn: WeightFn,
) -> WeightVector<T> {
    WeightVector {
        w: delta
            .delta
            .iter()
            .map(|&d| weight_of(d, lambda, weight_fn))
            .collect(),
    }
}

/// The counterfactually adjusted distribution (before blending with the source).
pub fn combine<T: Scalar>(
    p_source: &NextTokenDistribution<T>,
    counterfactuals: &[NextTokenDistribution<T>],
    params: &CalibrationParams,
) -> Result<NextTokenDistribution<T>> {
    params.validate()?;
    if counterfactuals.is_empty() {
        return Err(CafieError::param(
            "counterfactuals",
            "combine needs at least one counterfactual",
        ));
    }
    for cf in counterfactuals {
        p_source.check_same_size(cf)?;
    }
    let n = p_source.len();
    let r = T::of(counterfactuals.len() as f64);
    let po = p_source.probs();

    let raw: Vec<T> = match params.combine_mode {
        CombineMode::Cafie => {
            let deltas = counterfactuals
                .iter()
                .map(|cf| disparity(p_source, cf))
                .collect::<Result<Vec<_>>>()?;
            let lambda = T::of(params.lambda);
            let weights: Vec<WeightVector<T>> = deltas
                .iter()
                .map(|d| intra_weight(d, lambda, params.weight_fn))
                .collect();
            match params.inter_weighting {
                InterWeighting::Elementwise => (0..n)
                    .map(|v| {
                        // |delta| <= 1, so the exponentials cannot overflow.
                        let norm: T = deltas.iter().map(|d| d.delta[v].abs().exp()).sum();
                        let mix: T = deltas
                            .iter()
                            .zip(&weights)
                            .map(|(d, w)| d.delta[v].abs().exp() / norm * w.w[v])
                            .sum();
                        mix * po[v]
                    })
                    .collect(),
                InterWeighting::ScalarL1 => {
                    let exps: Vec<T> = deltas.iter().map(|d| d.l1_norm().exp()).collect();
                    let norm: T = exps.iter().copied().sum();
                    (0..n)
                        .map(|v| {
                            let mix: T = exps
                                .iter()
                                .zip(&weights)
                                .map(|(e, w)| *e / norm * w.w[v])
                                .sum();
                            mix * po[v]
                        })
                        .collect()
                }
            }
        }
        CombineMode::Jpdf => {
            let mean = mean_of(counterfactuals, n, r);
            po.iter().zip(&mean).map(|(a, b)| *a * *b).collect()
        }
        CombineMode::Ratio => {
            let mean = mean_of(counterfactuals, n, r);
            po.iter()
                .zip(&mean)
                .map(|(a, b)| (*a + *b) / T::of(2.0))
                .collect()
        }
        CombineMode::Weight => {
            let mut mean_delta = vec![T::zero(); n];
            for cf in counterfactuals {
                for (v, (a, b)) in po.iter().zip(cf.probs()).enumerate() {
                    mean_delta[v] = mean_delta[v] + (*a - *b) / r;
                }
            }
            let soft = NextTokenDistribution::from_logits(&mean_delta, T::one())?;
            po.iter()
                .zip(soft.probs())
                .map(|(p, s)| (T::one() - *s) * *p)
                .collect()
        }
    };
    NextTokenDistribution::from_mass(raw, T::of(DEGENERATE_FLOOR))
}

fn mean_of<T: Scalar>(dists: &[NextTokenDistribution<T>], n: usize, r: T) -> Vec<T> {
    let mut mean = vec![T::zero(); n];
    for d in dists {
        for (m, p) in mean.iter_mut().zip(d.probs()) {
            *m = *m + *p / r;
        }
    }
    mean
}

/// `alpha * p_cafie + (1 - alpha) * p_source`.
pub fn blend<T: Scalar>(
    p_source: &NextTokenDistribution<T>,
    p_cafie: &NextTokenDistribution<T>,
    alpha: T,
) -> Result<NextTokenDistribution<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(CafieError::param(
            "alpha",
            format!("must lie in [0, 1], got {alpha}"),
        ));
    }
    p_source.check_same_size(p_cafie)?;
    let keep = T::one() - alpha;
    NextTokenDistribution::new(
        p_cafie
            .probs()
            .iter()
            .zip(p_source.probs())
            .map(|(c, o)| alpha * *c + keep * *o)
            .collect(),
    )
}

/// Full pipeline: `blend(combine(..))`, or the source itself when there are
/// no counterfactuals or `alpha` is zero.
pub fn calibrate<T: Scalar>(
    p_source: &NextTokenDistribution<T>,
    counterfactuals: &[NextTokenDistribution<T>],
    params: &CalibrationParams,
) -> Result<NextTokenDistribution<T>> {
    if counterfactuals.is_empty() || params.alpha == 0.0 {
        params.validate()?;
        for cf in counterfactuals {
            p_source.check_same_size(cf)?;
        }
        return Ok(p_source.clone());
    }
    let adjusted = combine(p_source, counterfactuals, params)?;
    blend(p_source, &adjusted, T::of(params.alpha))
}
