use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// A named, mutable parameter buffer handed to an optimizer.
pub struct ParamSlot<'a, T> {
    pub id: String,
    pub values: &'a mut [T],
}

impl<'a, T> ParamSlot<'a, T> {
    pub fn new(id: impl Into<String>, values: &'a mut [T]) -> Self {
        Self { id: id.into(), values }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM_BETA1: f64 = 0.9;
    pub const ADAM_BETA2: f64 = 0.999;
    pub const ADAM_EPS: f64 = 1e-8;

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: Self::ADAM_BETA1,
            beta2: Self::ADAM_BETA2,
            eps: Self::ADAM_EPS,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }
}

/// SGD or bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        if !(kind.lr() > 0.0 && kind.lr().is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", kind.lr())));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps, .. } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidArgument("adam betas must lie in [0, 1) and eps be positive".into()));
            }
        }
        Ok(Self {
            kind,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd { lr })
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(lr))
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn ensure_moments(&mut self, sizes: impl Iterator<Item = usize> + Clone) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = sizes.clone().map(|n| vec![T::zero(); n]).collect();
            self.second_moment = sizes.map(|n| vec![T::zero(); n]).collect();
            return Ok(());
        }
        let expected: Vec<usize> = self.first_moment.iter().map(Vec::len).collect();
        let got: Vec<usize> = sizes.collect();
        if expected != got {
            return Err(shape_err("optimizer moments", format!("{expected:?}"), format!("{got:?}")));
        }
        Ok(())
    }

    /// One update over all slots. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [ParamSlot<'_, T>], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err("optimizer_step", format!("{} gradient tensors", params.len()), format!("{}", grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.values.len() != g.len() {
                return Err(shape_err("optimizer_step", format!("{} entries for {}", p.values.len(), p.id), format!("{}", g.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.id)));
            }
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                let lr = T::lit(lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (v, &d) in p.values.iter_mut().zip(g.iter()) {
                        *v -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                self.ensure_moments(grads.iter().map(|g| g.len()))?;
                let t = self.step_count as i32;
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let (lr, eps) = (T::lit(lr), T::lit(eps));
                for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first_moment[idx];
                    let s = &mut self.second_moment[idx];
                    for j in 0..g.len() {
                        let d = g[j];
                        m[j] = b1 * m[j] + (T::one() - b1) * d;
                        s[j] = b2 * s[j] + (T::one() - b2) * d * d;
                        let mh = m[j] / c1;
                        let vh = s[j] / c2;
                        p.values[j] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Updates only the rows flagged in `active`; frozen rows keep both their
    /// values and their moment estimates. The step counter advances once.
    pub fn step_rows(&mut self, param: &mut Matrix<T>, grad: &Matrix<T>, active: &[bool]) -> Result<()> {
        param.same_shape(grad, "optimizer_step_rows")?;
        if active.len() != param.rows() {
            return Err(shape_err("optimizer_step_rows", format!("{} row flags", param.rows()), format!("{}", active.len())));
        }
        for i in (0..grad.rows()).filter(|&i| active[i]) {
            if grad.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient row {i}")));
            }
        }
        self.step_count += 1;
        let cols = param.cols();
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                let lr = T::lit(lr);
                for i in (0..param.rows()).filter(|&i| active[i]) {
                    for (v, &d) in param.row_mut(i).iter_mut().zip(grad.row(i)) {
                        *v -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                self.ensure_moments(std::iter::once(param.as_slice().len()))?;
                let t = self.step_count as i32;
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let (lr, eps) = (T::lit(lr), T::lit(eps));
                let m = &mut self.first_moment[0];
                let s = &mut self.second_moment[0];
                let (ob1, ob2) = (T::one() - b1, T::one() - b2);
                for i in (0..param.rows()).filter(|&i| active[i]) {
                    let span = i * cols..(i + 1) * cols;
                    let rows = param.row_mut(i).iter_mut().zip(grad.row(i));
                    for ((v, &d), (mj, sj)) in rows.zip(m[span.clone()].iter_mut().zip(&mut s[span])) {
                        *mj = b1 * *mj + ob1 * d;
                        *sj = b2 * *sj + ob2 * d * d;
                        *v -= lr * (*mj / c1) / ((*sj / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
