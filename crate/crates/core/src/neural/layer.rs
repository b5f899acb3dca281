use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// One layer of a [`super::LayeredNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Layer<T> {
    /// `y = x Wᵀ + b`, weight shaped `out × in`.
    Affine { weight: Matrix<T>, bias: Vec<T> },
    Relu,
    Sigmoid,
    /// Row-wise softmax.
    Softmax,
    /// Inverted dropout; identity in eval mode.
    Dropout { rate: T },
    BatchNorm {
        scale: Vec<T>,
        shift: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        momentum: T,
        eps: T,
    },
}

/// Per-layer state captured during a forward pass and consumed by backward.
#[derive(Clone, Debug)]
pub(crate) enum LayerCache<T> {
    Stateless,
    Dropout { mask: Vec<T> },
    BatchNormTrain { xhat: Matrix<T>, inv_std: Vec<T> },
    BatchNormEval { inv_std: Vec<T> },
}

/// Parameter gradients of a single layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad<T> {
    None,
    Affine { weight: Matrix<T>, bias: Vec<T> },
    BatchNorm { scale: Vec<T>, shift: Vec<T> },
}

impl<T: Scalar> Layer<T> {
    /// Affine layer with weights drawn from `N(0, 2 / fan_in)` and zero bias.
    pub fn affine_he<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        });
        Layer::Affine {
            weight,
            bias: vec![T::zero(); fan_out],
        }
    }

    pub fn affine(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape_err("Layer::affine", format!("bias of length {}", weight.rows()), format!("{}", bias.len())));
        }
        Ok(Layer::Affine { weight, bias })
    }

    pub fn dropout(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Layer::Dropout { rate: T::lit(rate) })
    }

    /// Batch normalisation with unit scale, zero shift and fresh running statistics.
    pub fn batchnorm(dim: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("batchnorm eps {eps} must be positive")));
        }
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::InvalidArgument(format!("batchnorm momentum {momentum} outside (0, 1]")));
        }
        Ok(Layer::BatchNorm {
            scale: vec![T::one(); dim],
            shift: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
            momentum: T::lit(momentum),
            eps: T::lit(eps),
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Affine { .. } => "affine",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::Dropout { .. } => "dropout",
            Layer::BatchNorm { .. } => "batchnorm",
        }
    }

    /// `(in, out)` for layers with a fixed width.
    pub fn dims(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Affine { weight, .. } => Some((weight.cols(), weight.rows())),
            Layer::BatchNorm { scale, .. } => Some((scale.len(), scale.len())),
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Affine { .. } | Layer::BatchNorm { .. })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Layer::Affine { weight, bias } => {
                if bias.len() != weight.rows() {
                    return Err(shape_err("affine", format!("bias {}", weight.rows()), format!("{}", bias.len())));
                }
            }
            Layer::Dropout { rate } => {
                if !(*rate >= T::zero() && *rate < T::one()) {
                    return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
                }
            }
            Layer::BatchNorm {
                scale,
                shift,
                running_mean,
                running_var,
                momentum,
                eps,
            } => {
                let d = scale.len();
                if shift.len() != d || running_mean.len() != d || running_var.len() != d {
                    return Err(shape_err("batchnorm", format!("all vectors of length {d}"), "mismatched lengths"));
                }
                if !(*eps > T::zero()) || !(*momentum > T::zero() && *momentum <= T::one()) {
                    return Err(Error::InvalidArgument("batchnorm eps/momentum out of range".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if let Some((input, _)) = self.dims() {
            if x.cols() != input {
                return Err(shape_err(self.kind_name(), format!("{input} input columns"), x.shape_str()));
            }
        }
        Ok(())
    }

    /// Train-mode forward; may draw dropout masks and refreshes batchnorm running statistics.
    pub(crate) fn forward_train<R: Rng + ?Sized>(&mut self, x: &Matrix<T>, rng: &mut R) -> Result<(Matrix<T>, LayerCache<T>)> {
        self.check_input(x)?;
        match self {
            Layer::Dropout { rate } if *rate > T::zero() => {
                let keep = T::one() - *rate;
                let inv_keep = T::one() / keep;
                let p_keep = keep.as_f64();
                let mask: Vec<T> = (0..x.as_slice().len())
                    .map(|_| if rng.gen::<f64>() < p_keep { inv_keep } else { T::zero() })
                    .collect();
                let out = Matrix::from_raw(
                    x.rows(),
                    x.cols(),
                    x.as_slice().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
                );
                Ok((out, LayerCache::Dropout { mask }))
            }
            Layer::BatchNorm {
                scale,
                shift,
                running_mean,
                running_var,
                momentum,
                eps,
            } => {
                let n = x.rows();
                let nt = T::from_usize(n.max(1)).unwrap();
                let mean = x.column_means();
                let mut var = vec![T::zero(); x.cols()];
                for i in 0..n {
                    for (j, v) in var.iter_mut().enumerate() {
                        let d = x[(i, j)] - mean[j];
                        *v += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= nt;
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + *eps).sqrt()).collect();
                let xhat = Matrix::from_fn(n, x.cols(), |i, j| (x[(i, j)] - mean[j]) * inv_std[j]);
                let out = Matrix::from_fn(n, x.cols(), |i, j| scale[j] * xhat[(i, j)] + shift[j]);
                let unbias = if n > 1 {
                    nt / T::from_usize(n - 1).unwrap()
                } else {
                    T::one()
                };
                let m = *momentum;
                for j in 0..x.cols() {
                    running_mean[j] = (T::one() - m) * running_mean[j] + m * mean[j];
                    running_var[j] = (T::one() - m) * running_var[j] + m * var[j] * unbias;
                }
                Ok((out, LayerCache::BatchNormTrain { xhat, inv_std }))
            }
            _ => self.forward_eval(x),
        }
    }

    /// Deterministic forward: dropout disabled, batchnorm uses running statistics.
    pub(crate) fn forward_eval(&self, x: &Matrix<T>) -> Result<(Matrix<T>, LayerCache<T>)> {
        self.check_input(x)?;
        let out = match self {
            Layer::Affine { weight, bias } => {
                let mut y = x.matmul_t(weight)?;
                y.add_row_broadcast(bias)?;
                y
            }
            Layer::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Layer::Sigmoid => x.map(sigmoid),
            Layer::Softmax => softmax_rows(x),
            Layer::Dropout { .. } => x.clone(),
            Layer::BatchNorm {
                scale,
                shift,
                running_mean,
                running_var,
                eps,
                ..
            } => {
                let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + *eps).sqrt()).collect();
                let y = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                    scale[j] * ((x[(i, j)] - running_mean[j]) * inv_std[j]) + shift[j]
                });
                return Ok((y, LayerCache::BatchNormEval { inv_std }));
            }
        };
        Ok((out, LayerCache::Stateless))
    }

    /// Returns parameter gradients and, when requested, the gradient w.r.t. the layer input.
    pub(crate) fn backward(
        &self,
        input: &Matrix<T>,
        output: &Matrix<T>,
        cache: &LayerCache<T>,
        grad: &Matrix<T>,
        want_input_grad: bool,
        want_param_grad: bool,
    ) -> Result<(LayerGrad<T>, Option<Matrix<T>>)> {
        output.same_shape(grad, "backward upstream gradient")?;
        let mismatch = || Error::MissingForward(format!("cache does not belong to a {} layer", self.kind_name()));
        match self {
            Layer::Affine { weight, .. } => {
                let dx = if want_input_grad { Some(grad.matmul(weight)?) } else { None };
                if !want_param_grad {
                    return Ok((LayerGrad::None, dx));
                }
                let dw = grad.t_matmul(input)?;
                let db = grad.column_sums();
                Ok((LayerGrad::Affine { weight: dw, bias: db }, dx))
            }
            Layer::Relu => Ok((
                LayerGrad::None,
                Some(input.zip_map(grad, |x, g| if x > T::zero() { g } else { T::zero() })?),
            )),
            Layer::Sigmoid => Ok((LayerGrad::None, Some(output.zip_map(grad, |y, g| g * y * (T::one() - y))?))),
            Layer::Softmax => {
                let mut dx = Matrix::zeros(grad.rows(), grad.cols());
                for i in 0..grad.rows() {
                    let s = output.row(i);
                    let g = grad.row(i);
                    let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for (d, (&si, &gi)) in dx.row_mut(i).iter_mut().zip(s.iter().zip(g)) {
                        *d = si * (gi - dot);
                    }
                }
                Ok((LayerGrad::None, Some(dx)))
            }
            Layer::Dropout { .. } => match cache {
                LayerCache::Dropout { mask } => Ok((
                    LayerGrad::None,
                    Some(Matrix::from_raw(
                        grad.rows(),
                        grad.cols(),
                        grad.as_slice().iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                    )),
                )),
                LayerCache::Stateless => Ok((LayerGrad::None, Some(grad.clone()))),
                _ => Err(mismatch()),
            },
            Layer::BatchNorm {
                scale,
                running_mean,
                ..
            } => match cache {
                LayerCache::BatchNormTrain { xhat, inv_std } => {
                    let n = grad.rows();
                    let nt = T::from_usize(n.max(1)).unwrap();
                    let d = grad.cols();
                    let mut dscale = vec![T::zero(); d];
                    let mut dshift = vec![T::zero(); d];
                    for i in 0..n {
                        for j in 0..d {
                            let g = grad[(i, j)];
                            dscale[j] += g * xhat[(i, j)];
                            dshift[j] += g;
                        }
                    }
                    // dxhat = g * scale; sums reduce to dshift * scale and dscale * scale.
                    let dx = Matrix::from_fn(n, d, |i, j| {
                        let dxhat = grad[(i, j)] * scale[j];
                        inv_std[j] / nt * (nt * dxhat - dshift[j] * scale[j] - xhat[(i, j)] * dscale[j] * scale[j])
                    });
                    Ok((
                        LayerGrad::BatchNorm {
                            scale: dscale,
                            shift: dshift,
                        },
                        Some(dx),
                    ))
                }
                LayerCache::BatchNormEval { inv_std } => {
                    let d = grad.cols();
                    let mut dscale = vec![T::zero(); d];
                    let mut dshift = vec![T::zero(); d];
                    for i in 0..grad.rows() {
                        for j in 0..d {
                            let g = grad[(i, j)];
                            dscale[j] += g * (input[(i, j)] - running_mean[j]) * inv_std[j];
                            dshift[j] += g;
                        }
                    }
                    let dx = Matrix::from_fn(grad.rows(), d, |i, j| grad[(i, j)] * scale[j] * inv_std[j]);
                    Ok((
                        LayerGrad::BatchNorm {
                            scale: dscale,
                            shift: dshift,
                        },
                        Some(dx),
                    ))
                }
                _ => Err(mismatch()),
            },
        }
    }

    /// Mutable parameter buffers with stable identifiers, in update order.
    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        match self {
            Layer::Affine { weight, bias } => vec![("weight", weight.as_mut_slice()), ("bias", bias.as_mut_slice())],
            Layer::BatchNorm { scale, shift, .. } => vec![("scale", scale.as_mut_slice()), ("shift", shift.as_mut_slice())],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Affine { weight, bias } => vec![weight.as_slice(), bias.as_slice()],
            Layer::BatchNorm { scale, shift, .. } => vec![scale.as_slice(), shift.as_slice()],
            _ => Vec::new(),
        }
    }
}

impl<T: Scalar> LayerGrad<T> {
    pub(crate) fn tensors(&self) -> Vec<&[T]> {
        match self {
            LayerGrad::None => Vec::new(),
            LayerGrad::Affine { weight, bias } => vec![weight.as_slice(), bias.as_slice()],
            LayerGrad::BatchNorm { scale, shift } => vec![scale.as_slice(), shift.as_slice()],
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            LayerGrad::None => Vec::new(),
            LayerGrad::Affine { weight, bias } => vec![weight.as_mut_slice(), bias.as_mut_slice()],
            LayerGrad::BatchNorm { scale, shift } => vec![scale.as_mut_slice(), shift.as_mut_slice()],
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
