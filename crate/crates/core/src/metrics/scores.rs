use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

fn check_pairs<T: Scalar>(scores: &[T], labels: &[T], op: &'static str) -> Result<(Vec<f64>, Vec<bool>)> {
    if scores.len() != labels.len() {
        return Err(shape_err(op, format!("{} labels", scores.len()), format!("{}", labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{op} scores")));
    }
    let l = labels
        .iter()
        .map(|v| match v.as_f64() {
            x if x == 1.0 => Ok(true),
            x if x == 0.0 => Ok(false),
            x => Err(Error::InvalidArgument(format!("{op} labels must be 0 or 1, got {x}"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok((s, l))
}

/// Groups of tied scores in descending order, as (positives, negatives) counts.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Mann–Whitney AUROC: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[T]) -> Result<f64> {
    let (s, l) = check_pairs(scores, labels, "auroc")?;
    let pos = l.iter().filter(|&&b| b).count() as u64;
    let neg = l.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("auroc needs both classes"));
    }
    // Twice the Mann–Whitney U, kept integral so ties stay exact.
    let mut twice_u: u128 = 0;
    let mut neg_below: u64 = neg;
    for (p, n) in tie_groups(&s, &l) {
        neg_below -= n;
        twice_u += 2 * p as u128 * neg_below as u128 + p as u128 * n as u128;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Average precision `Σ (R_t − R_{t−1}) · P_t` over distinct score thresholds.
pub fn aupr<T: Scalar>(scores: &[T], labels: &[T]) -> Result<f64> {
    let (s, l) = check_pairs(scores, labels, "aupr")?;
    let pos = l.iter().filter(|&&b| b).count() as u64;
    if pos == 0 {
        return Err(Error::SingleClass("aupr needs at least one positive"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in tie_groups(&s, &l) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Mean squared error between probabilities and binary outcomes.
pub fn brier<T: Scalar>(probs: &[T], labels: &[T]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(shape_err("brier", format!("{} labels", probs.len()), format!("{}", labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Empty("brier inputs"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let d = p.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Equal-width reliability bins over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub n_bins: usize,
    pub edges: Vec<f64>,
    /// Mean predicted probability per bin; `None` for empty bins.
    pub mean_predicted: Vec<Option<f64>>,
    /// Empirical positive frequency per bin; `None` for empty bins.
    pub frequency: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

pub const DEFAULT_CALIBRATION_BINS: usize = 10;

pub fn calibration_bins<T: Scalar>(probs: &[T], labels: &[T], n_bins: usize) -> Result<CalibrationBins> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 calibration bins, got {n_bins}")));
    }
    if probs.len() != labels.len() {
        return Err(shape_err("calibration_bins", format!("{} labels", probs.len()), format!("{}", labels.len())));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (p, y) in probs.iter().zip(labels) {
        let p = p.as_f64();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[b] += p;
        sum_y[b] += y.as_f64();
        counts[b] += 1;
    }
    let avg = |s: &[f64]| -> Vec<Option<f64>> {
        s.iter()
            .zip(&counts)
            .map(|(&v, &c)| (c > 0).then(|| v / c as f64))
            .collect()
    };
    Ok(CalibrationBins {
        n_bins,
        edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        mean_predicted: avg(&sum_p),
        frequency: avg(&sum_y),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.9], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.2, 0.4, 0.6, 0.8], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.2, 0.4], &[1.0, 1.0]), Err(Error::SingleClass(_))));
        assert!(auroc(&[0.2, 0.4], &[0.5, 1.0]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.3, 0.1, 0.7], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.8, 0.1, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        let v = aupr(&[0.9, 0.8, 0.7], &[1.0, 0.0, 1.0]).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert!(aupr(&[0.9], &[0.0]).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[0.5; 4], &[0.0, 1.0, 1.0, 0.0]).unwrap(), 0.25);
        assert_eq!(brier(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((brier(&[0.8, 0.3], &[1.0, 0.0]).unwrap() - 0.065).abs() < 1e-15);
    }

    #[test]
    fn calibration_edges_and_counts() {
        let b = calibration_bins(&[1.0; 5], &[1.0; 5], 10).unwrap();
        assert_eq!(b.counts[9], 5);
        assert_eq!(b.frequency[9], Some(1.0));
        assert!(b.frequency[..9].iter().all(Option::is_none));
        assert!(calibration_bins(&[0.5], &[1.0], 1).is_err());
    }
}
