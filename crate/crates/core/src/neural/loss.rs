use crate::error::Result;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Probabilities are clamped into `[EPS_CLIP, 1 - EPS_CLIP]` inside the log terms.
pub const EPS_CLIP: f64 = 1e-7;

#[inline]
fn clip<T: Scalar>(p: T) -> T {
    let lo = T::lit(EPS_CLIP);
    p.max(lo).min(T::one() - lo)
}

/// Derivative of [`bce`] with respect to `p`.
#[inline]
pub fn bce_grad<T: Scalar>(p: T, t: T) -> T {
    let pc = clip(p);
    (p - t) / (pc * (T::one() - pc))
}

/// Binary cross-entropy of a single probability against a (possibly soft) target.
#[inline]
pub fn bce<T: Scalar>(p: T, t: T) -> T {
    let p = clip(p);
    -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
}

/// Mean binary cross-entropy over all entries and its gradient w.r.t. `p`.
///
/// The gradient is `(p − t) / (p̃ (1 − p̃))` with `p̃` the clipped probability:
/// finite for saturated predictions and exactly zero whenever `p = t`.
pub fn bce_loss<T: Scalar>(p: &Matrix<T>, t: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    p.same_shape(t, "bce_loss")?;
    let n = T::from_usize(p.as_slice().len().max(1)).unwrap();
    let mut total = T::zero();
    let grad = p.zip_map(t, |pv, tv| bce_grad(pv, tv) / n)?;
    for (&pv, &tv) in p.as_slice().iter().zip(t.as_slice()) {
        total += bce(pv, tv);
    }
    Ok((total / n, grad))
}

/// Per-row mean binary cross-entropy.
pub fn bce_rows<T: Scalar>(p: &Matrix<T>, t: &Matrix<T>) -> Result<Vec<T>> {
    p.same_shape(t, "bce_rows")?;
    let k = T::from_usize(p.cols().max(1)).unwrap();
    Ok((0..p.rows())
        .map(|i| {
            p.row(i)
                .iter()
                .zip(t.row(i))
                .map(|(&a, &b)| bce(a, b))
                .sum::<T>()
                / k
        })
        .collect())
}
