//! Categorical-distribution arithmetic shared by every other module.
//!
//! All information quantities are in nats. Every logarithm of a probability
//! is taken through [`ln_clamped`], which floors its argument at [`LOG_EPS`];
//! entropies use the `0 · ln 0 = 0` convention instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside every logarithm of a probability.
pub const LOG_EPS: f64 = 1e-16;

/// Tolerance on `Σ p = 1` for a valid [`Categorical`].
pub const NORM_TOL: f64 = 1e-9;

#[inline]
pub fn ln_clamped(p: f64) -> f64 {
    p.max(LOG_EPS).ln()
}

/// Sum whose result does not depend on the order of `terms`: equal
/// multisets give bit-identical totals, so mirror-image states stay exactly
/// symmetric under repeated message passing.
pub fn sum_unordered(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// `ln Σ exp(x)`, computed with max-subtraction.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A normalized probability vector over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Wraps `probs` after checking the type invariants.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty categorical".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "entry {i} is {p}, expected a finite nonnegative probability"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidInput(format!("entries sum to {sum}, expected 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform categorical needs at least one entry");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn delta(n: usize, index: usize) -> Self {
        assert!(index < n, "delta index {index} out of range for {n} entries");
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Index of the largest entry (first one on exact ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl std::ops::Index<usize> for Categorical {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Categorical::new(v)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(c: Categorical) -> Self {
        c.probs
    }
}

/// Rescales nonnegative weights to sum to one.
pub fn normalize(weights: &[f64]) -> Result<Categorical> {
    if weights.is_empty() {
        return Err(Error::Degenerate("empty weight vector".into()));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::Degenerate(format!(
            "weight {i} is {w}, expected finite and nonnegative"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("weights sum to zero".into()));
    }
    Ok(Categorical {
        probs: weights.iter().map(|w| w / total).collect(),
    })
}

/// `p[i] ∝ exp(precision · logits[i])`.
pub fn softmax(logits: &[f64], precision: f64) -> Result<Categorical> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logits".into()));
    }
    if !precision.is_finite() || precision < 0.0 {
        return Err(Error::InvalidInput(format!(
            "precision must be finite and nonnegative, got {precision}"
        )));
    }
    if let Some((i, x)) = logits.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("logit {i} is {x}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|x| precision * x).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Categorical {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Shannon entropy, `0 · ln 0 = 0`.
pub fn entropy(p: &Categorical) -> f64 {
    -p.probs
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// `KL[p ‖ q]` with `q` clamped at [`LOG_EPS`] inside the log.
pub fn kl_divergence(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "kl_divergence over supports of size {} and {}",
            p.len(),
            q.len()
        )));
    }
    let kl = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - ln_clamped(qi)))
        .sum::<f64>();
    // rounding can leave a tiny negative residue when p == q
    Ok(kl.max(0.0))
}
