use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::models::ProbeModel;
use crate::neural::{bce, bce_grad, Optimizer};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Euclidean,
    Cosine,
}

/// Settings of the representation edit `argmin λ·L^c(q(z′), c′) + d(z, z′)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionConfig {
    pub lambda: f64,
    pub distance: DistanceKind,
    /// Adam learning rate of the inner loop.
    pub lr: f64,
    pub max_steps: usize,
    /// Stop once the L1 change of an instance's `z′` falls below this.
    pub tol: f64,
    /// Rows edited together at evaluation time.
    pub batch_size: usize,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            distance: DistanceKind::Euclidean,
            lr: 1e-2,
            max_steps: 100,
            tol: 1e-6,
            batch_size: 512,
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and positive, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.tol > 0.0) {
            return Err(Error::Config("inner lr and tolerance must be positive".into()));
        }
        if self.max_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_steps and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// `d(z, z′)`: Euclidean, or `1 − cos(z, z′)`.
pub fn distance<T: Scalar>(z: &[T], z_edit: &[T], kind: DistanceKind) -> Result<T> {
    if z.len() != z_edit.len() {
        return Err(shape_err("distance", format!("{} entries", z.len()), format!("{}", z_edit.len())));
    }
    match kind {
        DistanceKind::Euclidean => Ok(z.iter().zip(z_edit).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt()),
        DistanceKind::Cosine => {
            let (na, nb) = (norm(z), norm(z_edit));
            if na.is_zero() || nb.is_zero() {
                return Err(Error::InvalidArgument("cosine distance of a zero vector".into()));
            }
            if z == z_edit {
                return Ok(T::zero());
            }
            let dot: T = z.iter().zip(z_edit).map(|(&a, &b)| a * b).sum();
            Ok(T::one() - dot / (na * nb))
        }
    }
}

/// `∂d/∂z′`; zero at `z′ = z` for both kinds.
fn distance_grad<T: Scalar>(z: &[T], z_edit: &[T], kind: DistanceKind) -> Result<Vec<T>> {
    if z == z_edit {
        return Ok(vec![T::zero(); z.len()]);
    }
    match kind {
        DistanceKind::Euclidean => {
            let d = distance(z, z_edit, kind)?;
            Ok(z.iter().zip(z_edit).map(|(&a, &b)| (b - a) / d).collect())
        }
        DistanceKind::Cosine => {
            let (na, nb) = (norm(z), norm(z_edit));
            if na.is_zero() || nb.is_zero() {
                return Err(Error::InvalidArgument("cosine distance of a zero vector".into()));
            }
            let dot: T = z.iter().zip(z_edit).map(|(&a, &b)| a * b).sum();
            let nanb = na * nb;
            let cube = na * nb * nb * nb;
            Ok(z.iter().zip(z_edit).map(|(&a, &b)| -(a / nanb - dot * b / cube)).collect())
        }
    }
}

/// Output of an edit on a batch; every per-row field is independent of the
/// other rows in the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EditOutcome<T> {
    pub z_edited: Matrix<T>,
    /// Objective at the initial point and after every inner step, per row.
    pub objective_trace: Vec<Vec<f64>>,
    pub steps: Vec<usize>,
}

/// Per-row values of `λ·L^c(q(z′), c′) + d(z, z′)` at `z′ = z_edit`, and
/// their gradients with respect to `z_edit` when `want_grad` is set.
pub fn edit_objective<T: Scalar>(
    z: &Matrix<T>,
    z_edit: &Matrix<T>,
    target: &Matrix<T>,
    probe: &ProbeModel<T>,
    config: &InterventionConfig,
    want_grad: bool,
) -> Result<(Vec<T>, Option<Matrix<T>>)> {
    let lambda = T::lit(config.lambda);
    let fwd = probe.net.forward_eval(z_edit)?;
    let p = fwd.output();
    let mut values = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let lc = p.row(i).iter().zip(target.row(i)).map(|(&a, &b)| bce(a, b)).sum::<T>();
        values.push(lambda * lc + distance(z.row(i), z_edit.row(i), config.distance)?);
    }
    if !want_grad {
        return Ok((values, None));
    }
    let upstream = p.zip_map(target, |a, b| lambda * bce_grad(a, b))?;
    let mut grad = probe.net.input_gradient(&fwd, &upstream)?;
    for i in 0..z.rows() {
        let dg = distance_grad(z.row(i), z_edit.row(i), config.distance)?;
        for (g, d) in grad.row_mut(i).iter_mut().zip(dg) {
            *g += d;
        }
    }
    Ok((values, Some(grad)))
}

/// Minimises `λ·L^c(q(z′), c′) + d(z, z′)` over `z′` with Adam, starting at `z`.
/// Per row, `L^c` sums the binary cross-entropy over the K concepts.
///
/// Each row keeps its own stopping state: it stops once its L1 change drops
/// below `tol`, after `max_steps`, or immediately if its gradient at `z` is
/// exactly zero. The lowest-objective iterate of each row is returned.
pub fn edit_representations<T: Scalar>(
    z: &Matrix<T>,
    target: &Matrix<T>,
    probe: &ProbeModel<T>,
    config: &InterventionConfig,
) -> Result<EditOutcome<T>> {
    config.validate()?;
    crate::models::require_eval(&probe.net, "probe")?;
    if z.cols() != probe.input_dim() {
        return Err(shape_err("edit_representations", format!("{} representation columns", probe.input_dim()), z.shape_str()));
    }
    if target.rows() != z.rows() || target.cols() != probe.num_concepts() {
        return Err(shape_err(
            "edit_representations",
            format!("{}x{} target concepts", z.rows(), probe.num_concepts()),
            target.shape_str(),
        ));
    }
    if target.as_slice().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::InvalidArgument("target concept values must lie in [0, 1]".into()));
    }
    let n = z.rows();
    let tol = T::lit(config.tol);
    let mut opt = Optimizer::adam(config.lr)?;
    let mut current = z.clone();
    let mut best = z.clone();
    let mut best_value = vec![T::infinity(); n];
    let mut trace: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut steps = vec![0usize; n];
    let mut active = vec![true; n];

    for step in 0..=config.max_steps {
        let want_grad = step < config.max_steps && active.iter().any(|&a| a);
        let (values, grad) = edit_objective(z, &current, target, probe, config, want_grad)?;
        for i in (0..n).filter(|&i| active[i]) {
            if !values[i].is_finite() {
                return Err(Error::NonFiniteObjective { step });
            }
            trace[i].push(values[i].as_f64());
            if values[i] < best_value[i] {
                best_value[i] = values[i];
                best.row_mut(i).copy_from_slice(current.row(i));
            }
        }
        let Some(grad) = grad else { break };
        for i in 0..n {
            if active[i] && grad.row(i).iter().all(|g| g.is_zero()) {
                active[i] = false;
            }
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        let before = current.clone();
        opt.step_rows(&mut current, &grad, &active)?;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            steps[i] += 1;
            let change: T = current.row(i).iter().zip(before.row(i)).map(|(&a, &b)| (a - b).abs()).sum();
            if change < tol {
                // Record the objective at the final iterate before retiring the row.
                let (v, _) = edit_objective(
                    &z.select_rows(&[i]),
                    &current.select_rows(&[i]),
                    &target.select_rows(&[i]),
                    probe,
                    config,
                    false,
                )?;
                if !v[0].is_finite() {
                    return Err(Error::NonFiniteObjective { step: step + 1 });
                }
                trace[i].push(v[0].as_f64());
                if v[0] < best_value[i] {
                    best_value[i] = v[0];
                    best.row_mut(i).copy_from_slice(current.row(i));
                }
                active[i] = false;
            }
        }
    }
    Ok(EditOutcome {
        z_edited: best,
        objective_trace: trace,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ProbeLinearity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(d: usize, k: usize, seed: u64) -> ProbeModel<f64> {
        ProbeModel::init(d, k, ProbeLinearity::Linear, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn distance_examples() {
        let z = [0.3, -1.2, 2.0];
        for kind in [DistanceKind::Euclidean, DistanceKind::Cosine] {
            assert_eq!(distance(&z, &z, kind).unwrap(), 0.0);
        }
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], DistanceKind::Euclidean).unwrap(), 5.0);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert!((distance(&z, &neg, DistanceKind::Cosine).unwrap() - 2.0).abs() < 1e-15);
        assert!(distance(&[0.0, 0.0], &[1.0, 0.0], DistanceKind::Cosine).is_err());
    }

    #[test]
    fn distance_gradients_match_finite_differences() {
        let z = [0.3f64, -1.2, 2.0, 0.7];
        let ze = [0.1f64, -0.9, 2.4, 0.2];
        for kind in [DistanceKind::Euclidean, DistanceKind::Cosine] {
            let g = distance_grad(&z, &ze, kind).unwrap();
            for j in 0..4 {
                let h = 1e-6;
                let (mut a, mut b) = (ze, ze);
                a[j] += h;
                b[j] -= h;
                let fd = (distance(&z, &a, kind).unwrap() - distance(&z, &b, kind).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-7, "{kind:?} {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn self_target_is_stationary() {
        let q = probe(6, 3, 1);
        let z = Matrix::from_fn(5, 6, |i, j| ((i * 3 + j) as f64).sin());
        let target = q.predict(&z).unwrap();
        let out = edit_representations(&z, &target, &q, &InterventionConfig::default()).unwrap();
        assert_eq!(out.z_edited, z);
        assert!(out.steps.iter().all(|&s| s == 0));
    }

    #[test]
    fn rejects_non_positive_lambda() {
        let q = probe(6, 3, 2);
        let z = Matrix::from_fn(4, 6, |i, j| ((i + 2 * j) as f64).cos());
        let target = Matrix::filled(4, 3, 1.0);
        for lambda in [0.0, -0.5, f64::NAN] {
            let cfg = InterventionConfig {
                lambda,
                ..Default::default()
            };
            assert!(matches!(edit_representations(&z, &target, &q, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn final_objective_never_exceeds_initial() {
        let q = probe(8, 4, 3);
        let z = Matrix::from_fn(10, 8, |i, j| ((i * 5 + j * 7) % 11) as f64 / 5.0 - 1.0);
        let target = Matrix::from_fn(10, 4, |i, j| ((i + j) % 2) as f64);
        for distance in [DistanceKind::Euclidean, DistanceKind::Cosine] {
            let cfg = InterventionConfig {
                distance,
                lambda: 3.2,
                ..Default::default()
            };
            let out = edit_representations(&z, &target, &q, &cfg).unwrap();
            for (i, t) in out.objective_trace.iter().enumerate() {
                let (v, _) = edit_objective(&z.select_rows(&[i]), &out.z_edited.select_rows(&[i]), &target.select_rows(&[i]), &q, &cfg, false).unwrap();
                assert!(v[0].as_f64() <= t[0]);
                assert!(out.steps[i] <= cfg.max_steps);
            }
        }
    }

    #[test]
    fn batch_rows_match_single_row_edits() {
        let q = probe(8, 4, 5);
        let z = Matrix::from_fn(7, 8, |i, j| ((i * 13 + j * 3) % 7) as f64 / 3.0 - 1.0);
        let target = Matrix::from_fn(7, 4, |i, j| ((i * j) % 2) as f64);
        let cfg = InterventionConfig::default();
        let batch = edit_representations(&z, &target, &q, &cfg).unwrap();
        for i in 0..7 {
            let one = edit_representations(&z.select_rows(&[i]), &target.select_rows(&[i]), &q, &cfg).unwrap();
            assert_eq!(one.z_edited.row(0), batch.z_edited.row(i));
            assert_eq!(one.objective_trace[0], batch.objective_trace[i]);
            assert_eq!(one.steps[0], batch.steps[i]);
        }
    }

    #[test]
    fn rejects_train_mode_probe_and_bad_targets() {
        let mut q = probe(3, 2, 0);
        let z = Matrix::filled(1, 3, 0.5);
        assert!(edit_representations(&z, &Matrix::filled(1, 2, 1.5), &q, &InterventionConfig::default()).is_err());
        q.net.set_mode(crate::neural::Mode::Train);
        assert!(matches!(
            edit_representations(&z, &Matrix::filled(1, 2, 1.0), &q, &InterventionConfig::default()),
            Err(Error::NotEvalMode(_))
        ));
    }
}
