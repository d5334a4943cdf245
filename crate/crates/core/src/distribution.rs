//! Probability vectors over the vocabulary.

use serde::Serialize;

use crate::error::{CafieError, Result};
use crate::scalar::Scalar;

/// A validated next-token distribution: non-negative, finite, sums to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NextTokenDistribution<T: Scalar> {
    probs: Vec<T>,
}

impl<T: Scalar> NextTokenDistribution<T> {
    /// Wraps `probs` after checking the distribution invariants.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CafieError::InvalidDistribution(
                "empty probability vector".into(),
            ));
        }
        let mut total = T::zero();
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < T::zero() {
                return Err(CafieError::InvalidDistribution(format!(
                    "entry {i} is {p} (must be finite and non-negative)"
                )));
            }
            total = total + p;
        }
        if (total - T::one()).abs() > T::sum_tolerance(probs.len()) {
            return Err(CafieError::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes a non-negative mass vector. Fails with `DegenerateDistribution`
    /// when the total mass is below `floor`.
    pub fn from_mass(mass: Vec<T>, floor: T) -> Result<Self> {
        let mut total = T::zero();
        for (i, &m) in mass.iter().enumerate() {
            if !m.is_finite() || m < T::zero() {
                return Err(CafieError::InvalidDistribution(format!(
                    "mass entry {i} is {m} (must be finite and non-negative)"
                )));
            }
            total = total + m;
        }
        if !(total >= floor) || total <= T::zero() {
            return Err(CafieError::DegenerateDistribution {
                mass: total.as_f64(),
            });
        }
        Self::new(mass.into_iter().map(|m| m / total).collect())
    }

    /// Softmax of `logits / temperature`. Entries of `-inf` get probability zero.
    pub fn from_logits(logits: &[T], temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(CafieError::param(
                "temperature",
                "must be a positive finite number",
            ));
        }
        if logits.iter().any(|l| l.is_nan() || *l == T::infinity()) {
            return Err(CafieError::InvalidDistribution(
                "logits contain NaN or +inf".into(),
            ));
        }
        let max = logits
            .iter()
            .copied()
            .fold(T::neg_infinity(), |acc, l| acc.max(l));
        if max == T::neg_infinity() {
            return Err(CafieError::InvalidDistribution(
                "every logit is -inf".into(),
            ));
        }
        let weights: Vec<T> = logits
            .iter()
            .map(|&l| ((l - max) / temperature).exp())
            .collect();
        let total: T = weights.iter().copied().sum();
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Uniform distribution over `support` (ids not in it get zero).
    pub fn uniform_over(len: usize, support: &[usize]) -> Result<Self> {
        if support.is_empty() {
            return Err(CafieError::InvalidDistribution("empty support".into()));
        }
        let share = T::one() / T::of(support.len() as f64);
        let mut probs = vec![T::zero(); len];
        for &id in support {
            if id >= len {
                return Err(CafieError::InvalidDistribution(format!(
                    "support id {id} out of range for {len} entries"
                )));
            }
            probs[id] = share;
        }
        Self::new(probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, id: usize) -> T {
        self.probs[id]
    }

    pub fn into_inner(self) -> Vec<T> {
        self.probs
    }

    /// Index of the largest entry; ties resolve to the lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> T {
        self.probs
            .iter()
            .filter(|p| **p > T::zero())
            .map(|&p| -p * p.ln())
            .sum()
    }

    pub fn check_same_size(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(CafieError::vocab_size(self.len(), other.len()));
        }
        Ok(())
    }

    /// Total-variation distance, half the L1 distance.
    pub fn total_variation(&self, other: &Self) -> Result<T> {
        self.check_same_size(other)?;
        let l1: T = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (*a - *b).abs())
            .sum();
        Ok(l1 / T::of(2.0))
    }

    /// Reorders entries so that entry `i` of the result is entry `mapping[i]` of `self`.
    pub fn permuted(&self, mapping: &[usize]) -> Result<Self> {
        if mapping.len() != self.len() {
            return Err(CafieError::vocab_size(self.len(), mapping.len()));
        }
        Self::new(mapping.iter().map(|&j| self.probs[j]).collect())
    }
}
