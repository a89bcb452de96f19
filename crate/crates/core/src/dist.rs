//! Categorical distributions over a vocabulary plus the end-of-sequence marker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization tolerance for every distribution built in this crate.
pub const NORM_TOL: f64 = 1e-9;

/// A normalized probability vector. The last entry is always the EOS event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    /// Wraps an already-normalized vector, checking it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidDistribution(format!("weight {i} is {w}")));
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("all weights are zero".into()));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn point_mass(len: usize, index: usize) -> Self {
        let mut probs = vec![0.0; len];
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

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn eos_index(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Index of the most probable entry; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for CategoricalDist {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<CategoricalDist> for Vec<f64> {
    fn from(d: CategoricalDist) -> Self {
        d.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized() {
        assert!(CategoricalDist::new(vec![0.5, 0.4]).is_err());
        assert!(CategoricalDist::new(vec![1.5, -0.5]).is_err());
        assert!(CategoricalDist::new(vec![]).is_err());
    }

    #[test]
    fn normalizes_weights() {
        let d = CategoricalDist::from_weights(vec![3.0, 1.0]).unwrap();
        assert_eq!(d.probs(), &[0.75, 0.25]);
        assert!(CategoricalDist::from_weights(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let d = CategoricalDist::uniform(4);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<CategoricalDist>(&s).unwrap(), d);
        assert!(serde_json::from_str::<CategoricalDist>("[0.9, 0.2]").is_err());
    }
}
