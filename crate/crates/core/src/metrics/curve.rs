use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scores::{aupr, auroc, brier};
use crate::data::DataView;
use crate::error::{Error, Result};
use crate::interventions::{Intervenable, InterventionConfig, StrategySpec};
use crate::scalar::Scalar;

/// One seed's model and test split.
pub struct CurveRun<'a, T> {
    pub seed: u64,
    pub model: &'a dyn Intervenable<T>,
    pub test: DataView<'a, T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub auroc: f64,
    pub aupr: f64,
    pub brier: f64,
}

/// Median and interquartile range across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    /// Linear-interpolation quantiles; a single value gives a zero-width spread.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("spread values"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub per_seed: Vec<SeedScores>,
    pub auroc: Spread,
    pub aupr: Spread,
    pub brier: Spread,
}

/// `{0, ⌈K/5⌉, 2⌈K/5⌉, …, K}`.
pub fn default_k_grid(num_concepts: usize) -> Vec<usize> {
    let step = num_concepts.div_ceil(5).max(1);
    let mut ks: Vec<usize> = (0..num_concepts).step_by(step).collect();
    ks.push(num_concepts);
    ks
}

/// Seed of the strategy draws for one curve cell.
pub fn cell_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (k as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Post-intervention predictions on `test` with `k` concepts drawn per
/// instance, in batches of `config.batch_size`.
pub fn curve_predictions<T: Scalar, M: Intervenable<T> + ?Sized>(
    model: &M,
    test: &DataView<'_, T>,
    strategy: &StrategySpec,
    k: usize,
    config: &InterventionConfig,
    seed: u64,
) -> Result<Vec<T>> {
    config.validate()?;
    let spec = strategy.with_k(k);
    spec.validate(model.num_concepts())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(seed, k));
    let (x, c) = (test.x(), test.c());
    let mut out = Vec::with_capacity(x.rows());
    for start in (0..x.rows()).step_by(config.batch_size) {
        let idx: Vec<usize> = (start..(start + config.batch_size).min(x.rows())).collect();
        let base = model.baseline(&x.select_rows(&idx))?;
        let c_prime = spec.apply(&base.c_hat, &c.select_rows(&idx), &mut rng)?;
        out.extend(model.apply(&base, &c_prime, config)?.y_after);
    }
    Ok(out)
}

pub fn score<T: Scalar>(seed: u64, probs: &[T], labels: &[T]) -> Result<SeedScores> {
    Ok(SeedScores {
        seed,
        auroc: auroc(probs, labels)?,
        aupr: aupr(probs, labels)?,
        brier: brier(probs, labels)?,
    })
}

/// Target metrics after intervening on `k ∈ ks` concepts, for every run,
/// summarised across runs per `k`.
pub fn intervention_curve<T: Scalar>(
    runs: &[CurveRun<'_, T>],
    strategy: &StrategySpec,
    ks: &[usize],
    config: &InterventionConfig,
) -> Result<Vec<CurvePoint>> {
    if runs.is_empty() {
        return Err(Error::Empty("curve runs"));
    }
    if ks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("k grid must be sorted".into()));
    }
    for run in runs {
        if let Some(&k) = ks.iter().find(|&&k| k > run.model.num_concepts()) {
            return Err(Error::InvalidArgument(format!("k = {k} exceeds K = {}", run.model.num_concepts())));
        }
    }
    let cells: Vec<(usize, usize)> = (0..ks.len()).flat_map(|ki| (0..runs.len()).map(move |ri| (ki, ri))).collect();
    let scores: Vec<SeedScores> = cells
        .par_iter()
        .map(|&(ki, ri)| {
            let run = &runs[ri];
            let probs = curve_predictions(run.model, &run.test, strategy, ks[ki], config, run.seed)?;
            score(run.seed, &probs, &run.test.y())
        })
        .collect::<Result<_>>()?;
    scores
        .chunks(runs.len())
        .zip(ks)
        .map(|(per_seed, &k)| {
            let col = |f: fn(&SeedScores) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
            Ok(CurvePoint {
                k,
                per_seed: per_seed.to_vec(),
                auroc: Spread::of(&col(|s| s.auroc))?,
                aupr: Spread::of(&col(|s| s.aupr))?,
                brier: Spread::of(&col(|s| s.brier))?,
            })
        })
        .collect()
}

/// AUROC at the largest `k` minus AUROC at the smallest, per seed.
pub fn curve_gain(points: &[CurvePoint]) -> Vec<(u64, f64)> {
    match (points.first(), points.last()) {
        (Some(a), Some(b)) => a.per_seed.iter().zip(&b.per_seed).map(|(s0, s1)| (s0.seed, s1.auroc - s0.auroc)).collect(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_grid_examples() {
        assert_eq!(default_k_grid(10), vec![0, 2, 4, 6, 8, 10]);
        assert_eq!(default_k_grid(30), vec![0, 6, 12, 18, 24, 30]);
        assert_eq!(default_k_grid(3), vec![0, 1, 2, 3]);
        assert_eq!(default_k_grid(0), vec![0]);
    }

    #[test]
    fn spread_quantiles() {
        let s = Spread::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        let s = Spread::of(&[1.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.25, 1.5, 1.75));
        assert_eq!(Spread::of(&[7.0]).unwrap().iqr(), 0.0);
        assert!(Spread::of(&[]).is_err());
    }
}
