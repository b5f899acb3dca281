use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Two-component projection shared by original and edited representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Principal directions as rows (2 × d), unit norm.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub explained_variance: Vec<f64>,
    pub original: Vec<[f64; 2]>,
    pub edited: Vec<[f64; 2]>,
}

/// Fits two principal components on `[z; z_edited]` and projects both sets.
pub fn pca2<T: Scalar>(z: &Matrix<T>, z_edited: &Matrix<T>) -> Result<PcaProjection> {
    if z.cols() != z_edited.cols() {
        return Err(shape_err("pca2", format!("{} columns", z.cols()), z_edited.shape_str()));
    }
    let all = z.vstack(z_edited)?.cast::<f64>();
    let n = all.rows();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("pca2 needs at least 3 rows, got {n}")));
    }
    let d = all.cols();
    let mean = all.column_means();
    let mut centred = all.clone();
    for i in 0..n {
        for (v, m) in centred.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = centred.t_matmul(&centred)?.scale(1.0 / (n - 1) as f64);
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut components = Vec::with_capacity(2);
    let mut explained_variance = Vec::with_capacity(2);
    for &idx in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        // Fix the sign so the largest-magnitude coordinate is positive.
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    while components.len() < 2 {
        components.push(vec![0.0; d]);
        explained_variance.push(0.0);
    }
    let project = |m: &Matrix<T>| -> Vec<[f64; 2]> {
        (0..m.rows())
            .map(|i| {
                let mut out = [0.0; 2];
                for (o, comp) in out.iter_mut().zip(&components) {
                    *o = m.row(i).iter().zip(&mean).zip(comp).map(|((x, mu), c)| (x.as_f64() - mu) * c).sum();
                }
                out
            })
            .collect()
    };
    let original = project(z);
    let edited = project(z_edited);
    Ok(PcaProjection {
        mean,
        components,
        explained_variance,
        original,
        edited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_project_identically() {
        let z = Matrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let p = pca2(&z, &z).unwrap();
        assert_eq!(p.original, p.edited);
    }

    #[test]
    fn line_has_no_second_component() {
        let z = Matrix::from_fn(10, 3, |i, j| i as f64 * (j + 1) as f64);
        let p = pca2(&z, &z).unwrap();
        assert!(p.explained_variance[1] < 1e-10 * p.explained_variance[0]);
    }

    #[test]
    fn rejects_degenerate_input() {
        let z = Matrix::filled(4, 2, 1.0);
        assert!(matches!(pca2(&z, &z), Err(Error::ZeroVariance)));
        let tiny = Matrix::filled(1, 2, 1.0);
        assert!(pca2(&tiny, &tiny).is_err());
    }
}
