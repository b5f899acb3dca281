use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_EPS_UNC: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    RandomSubset,
    Uncertainty,
}

/// Which concepts an intervention replaces with ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub k: usize,
    #[serde(default = "default_eps_unc")]
    pub eps_unc: f64,
}

fn default_eps_unc() -> f64 {
    DEFAULT_EPS_UNC
}

impl StrategySpec {
    pub fn random_subset(k: usize) -> Self {
        Self {
            kind: StrategyKind::RandomSubset,
            k,
            eps_unc: DEFAULT_EPS_UNC,
        }
    }

    pub fn uncertainty(k: usize) -> Self {
        Self {
            kind: StrategyKind::Uncertainty,
            k,
            eps_unc: DEFAULT_EPS_UNC,
        }
    }

    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }

    pub fn validate(&self, num_concepts: usize) -> Result<()> {
        if self.k > num_concepts {
            return Err(Error::InvalidArgument(format!("k = {} exceeds K = {num_concepts}", self.k)));
        }
        if !(self.eps_unc > 0.0 && self.eps_unc.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps_unc must be positive, got {}", self.eps_unc)));
        }
        Ok(())
    }

    /// Indices to intervene on for one instance.
    pub fn select<T: Scalar, R: Rng + ?Sized>(&self, c_hat: &[T], rng: &mut R) -> Result<Vec<usize>> {
        self.validate(c_hat.len())?;
        Ok(match self.kind {
            StrategyKind::RandomSubset => rand::seq::index::sample(rng, c_hat.len(), self.k).into_vec(),
            StrategyKind::Uncertainty => {
                let w = uncertainty_weights(c_hat, self.eps_unc);
                weighted_without_replacement(&w, self.k, rng)
            }
        })
    }

    /// `c′` for one instance: `ĉ` with the selected entries set to `c`.
    pub fn apply_row<T: Scalar, R: Rng + ?Sized>(&self, c_hat: &[T], c: &[T], rng: &mut R) -> Result<Vec<T>> {
        if c_hat.len() != c.len() {
            return Err(shape_err("strategy", format!("{} ground-truth concepts", c_hat.len()), format!("{}", c.len())));
        }
        let mut out = c_hat.to_vec();
        for i in self.select(c_hat, rng)? {
            out[i] = c[i];
        }
        Ok(out)
    }

    /// Row-wise `c′`, one independent draw per instance in row order.
    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, c_hat: &Matrix<T>, c: &Matrix<T>, rng: &mut R) -> Result<Matrix<T>> {
        c_hat.same_shape(c, "strategy")?;
        let mut out = c_hat.clone();
        for i in 0..c.rows() {
            let row = self.apply_row(c_hat.row(i), c.row(i), rng)?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }
}

/// Initial selection probabilities `(σ + ε) / (Kε + Σσ)` with `σ_i = 1 / (|ĉ_i − ½| + ε)`.
pub fn uncertainty_weights<T: Scalar>(c_hat: &[T], eps: f64) -> Vec<f64> {
    let sigma: Vec<f64> = c_hat.iter().map(|v| 1.0 / ((v.as_f64() - 0.5).abs() + eps)).collect();
    let denom = c_hat.len() as f64 * eps + sigma.iter().sum::<f64>();
    sigma.iter().map(|s| (s + eps) / denom).collect()
}

/// Draws `k` distinct indices, each draw proportional to the remaining weights.
fn weighted_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = pos;
                break;
            }
            u -= weights[i];
        }
        chosen.push(remaining.remove(pick));
    }
    chosen
}

/// Random-subset strategy on one instance.
pub fn strategy_random_subset<T: Scalar, R: Rng + ?Sized>(c_hat: &[T], c: &[T], k: usize, rng: &mut R) -> Result<Vec<T>> {
    StrategySpec::random_subset(k).apply_row(c_hat, c, rng)
}

/// Uncertainty-based strategy on one instance.
pub fn strategy_uncertainty<T: Scalar, R: Rng + ?Sized>(c_hat: &[T], c: &[T], k: usize, eps_unc: f64, rng: &mut R) -> Result<Vec<T>> {
    StrategySpec {
        kind: StrategyKind::Uncertainty,
        k,
        eps_unc,
    }
    .apply_row(c_hat, c, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extremes_of_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c_hat = [0.2, 0.7, 0.4];
        let c = [1.0, 0.0, 1.0];
        for kind in [StrategyKind::RandomSubset, StrategyKind::Uncertainty] {
            let s = StrategySpec { kind, k: 0, eps_unc: 1e-6 };
            assert_eq!(s.apply_row(&c_hat, &c, &mut rng).unwrap(), c_hat.to_vec());
            assert_eq!(s.with_k(3).apply_row(&c_hat, &c, &mut rng).unwrap(), c.to_vec());
            assert!(s.with_k(4).apply_row(&c_hat, &c, &mut rng).is_err());
        }
    }

    #[test]
    fn uncertainty_prefers_the_undecided_concept() {
        let w = uncertainty_weights(&[0.5, 0.99, 0.01], 1e-6);
        assert!(w[0] > 0.999);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_draws_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut idx = weighted_without_replacement(&[0.1, 0.5, 0.2, 0.2], 3, &mut rng);
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 3);
        }
    }
}
