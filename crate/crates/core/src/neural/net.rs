use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerCache, LayerGrad};
use super::optim::ParamSlot;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Ordered stack of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LayeredNet<T> {
    layers: Vec<Layer<T>>,
    mode: Mode,
}

/// Split point `s`: layers `[0, s)` form the body, `[s, L)` the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    split_index: usize,
}

impl Slice {
    pub fn new<T: Scalar>(split_index: usize, net: &LayeredNet<T>) -> Result<Self> {
        if split_index == 0 || split_index >= net.len() {
            return Err(Error::InvalidArgument(format!(
                "slice index {split_index} must lie strictly inside a net of {} layers",
                net.len()
            )));
        }
        Ok(Self { split_index })
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn body(&self) -> Range<usize> {
        0..self.split_index
    }

    pub fn head<T>(&self, net: &LayeredNet<T>) -> Range<usize> {
        self.split_index..net.layers.len()
    }
}

/// Activations and caches of one forward pass over a layer range.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    range: Range<usize>,
    mode: Mode,
    /// `activations[i]` is the input of layer `range.start + i`; the last entry is the output.
    activations: Vec<Matrix<T>>,
    caches: Vec<LayerCache<T>>,
    kinds: Vec<&'static str>,
}

impl<T: Scalar> Forward<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.activations.last().expect("forward holds at least the input")
    }

    pub fn into_output(mut self) -> Matrix<T> {
        self.activations.pop().expect("forward holds at least the input")
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.activations[0]
    }

    /// Activations at every layer boundary.
    pub fn activations(&self) -> &[Matrix<T>] {
        &self.activations
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }
}

/// Gradients for the layers of a range; entries align with `range`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub range: Range<usize>,
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat list of gradient tensors in the same order as [`LayeredNet::param_slots`].
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(LayerGrad::tensors).collect()
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            for t in l.tensors_mut() {
                for v in t.iter_mut() {
                    *v *= s;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_zero()))
    }
}

impl<T: Scalar> LayeredNet<T> {
    /// Validates layer parameters and that adjacent widths compose.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if let Some((input, output)) = layer.dims() {
                if let Some(w) = width {
                    if w != input {
                        return Err(shape_err(
                            "LayeredNet::new",
                            format!("layer {i} ({}) input width {w}", layer.kind_name()),
                            format!("{input}"),
                        ));
                    }
                }
                width = Some(output);
            }
        }
        if layers.is_empty() {
            return Err(Error::Empty("layered net"));
        }
        Ok(Self { layers, mode: Mode::Train })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn eval(mut self) -> Self {
        self.mode = Mode::Eval;
        self
    }

    /// Width expected at the input of layer `start`, if any layer in `start..` fixes it.
    pub fn input_dim_at(&self, start: usize) -> Option<usize> {
        self.layers[start..].iter().find_map(|l| l.dims().map(|d| d.0))
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.input_dim_at(0)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| l.dims().map(|d| d.1))
    }

    /// Sub-network over `range`, sharing no state with `self`.
    pub fn sub_net(&self, range: Range<usize>) -> Result<Self> {
        let mut net = Self::new(self.layers[range].to_vec())?;
        net.mode = self.mode;
        Ok(net)
    }

    /// Concatenates `self` then `other`.
    pub fn chain(&self, other: &Self) -> Result<Self> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        let mut net = Self::new(layers)?;
        net.mode = self.mode;
        Ok(net)
    }

    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer range {range:?} invalid for a net of {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, range: &Range<usize>, x: &Matrix<T>) -> Result<()> {
        // Activation layers preserve width, so the first fixed-width layer decides.
        if let Some(d) = self.layers[range.clone()].iter().find_map(|l| l.dims().map(|d| d.0)) {
            if x.cols() != d {
                return Err(shape_err("forward", format!("{d} input columns"), x.shape_str()));
            }
        }
        Ok(())
    }

    /// Forward over `range` using the net's current mode. Train mode samples
    /// dropout masks from `rng` and updates batchnorm running statistics.
    pub fn forward_range<R: Rng + ?Sized>(&mut self, range: Range<usize>, x: &Matrix<T>, rng: &mut R) -> Result<Forward<T>> {
        if self.mode == Mode::Eval {
            return self.forward_range_eval(range, x);
        }
        self.check_range(&range)?;
        self.check_input(&range, x)?;
        let mut activations = Vec::with_capacity(range.len() + 1);
        let mut caches = Vec::with_capacity(range.len());
        let mut kinds = Vec::with_capacity(range.len());
        activations.push(x.clone());
        for layer in &mut self.layers[range.clone()] {
            let (y, cache) = layer.forward_train(activations.last().unwrap(), rng)?;
            activations.push(y);
            caches.push(cache);
            kinds.push(layer.kind_name());
        }
        Ok(Forward {
            range,
            mode: Mode::Train,
            activations,
            caches,
            kinds,
        })
    }

    /// Eval-mode forward over `range`; never mutates the net.
    pub fn forward_range_eval(&self, range: Range<usize>, x: &Matrix<T>) -> Result<Forward<T>> {
        self.check_range(&range)?;
        self.check_input(&range, x)?;
        let mut activations = Vec::with_capacity(range.len() + 1);
        let mut caches = Vec::with_capacity(range.len());
        let mut kinds = Vec::with_capacity(range.len());
        activations.push(x.clone());
        for layer in &self.layers[range.clone()] {
            let (y, cache) = layer.forward_eval(activations.last().unwrap())?;
            activations.push(y);
            caches.push(cache);
            kinds.push(layer.kind_name());
        }
        Ok(Forward {
            range,
            mode: Mode::Eval,
            activations,
            caches,
            kinds,
        })
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Matrix<T>, rng: &mut R) -> Result<Forward<T>> {
        self.forward_range(0..self.layers.len(), x, rng)
    }

    pub fn forward_eval(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        self.forward_range_eval(0..self.layers.len(), x)
    }

    /// Eval-mode output of the whole net.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.predict_range(0..self.layers.len(), x)
    }

    /// Eval-mode output over `range` without retaining intermediate activations.
    pub fn predict_range(&self, range: Range<usize>, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_range(&range)?;
        self.check_input(&range, x)?;
        let mut cur = x.clone();
        for layer in &self.layers[range] {
            cur = layer.forward_eval(&cur)?.0;
        }
        Ok(cur)
    }

    /// Backpropagates `grad_out` through the range recorded in `fwd`.
    pub fn backward(&self, fwd: &Forward<T>, grad_out: &Matrix<T>) -> Result<(Gradients<T>, Matrix<T>)> {
        let (g, dx) = self.backward_impl(fwd, grad_out, true, true)?;
        Ok((g, dx.expect("input gradient requested")))
    }

    /// Gradient with respect to the input of the range only.
    pub fn input_gradient(&self, fwd: &Forward<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        let (_, dx) = self.backward_impl(fwd, grad_out, true, false)?;
        Ok(dx.expect("input gradient requested"))
    }

    /// Like [`Self::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&self, fwd: &Forward<T>, grad_out: &Matrix<T>) -> Result<Gradients<T>> {
        Ok(self.backward_impl(fwd, grad_out, false, true)?.0)
    }

    fn backward_impl(&self, fwd: &Forward<T>, grad_out: &Matrix<T>, want_input: bool, want_params: bool) -> Result<(Gradients<T>, Option<Matrix<T>>)> {
        let range = fwd.range.clone();
        if range.end > self.layers.len() || fwd.caches.len() != range.len() || fwd.activations.len() != range.len() + 1 {
            return Err(Error::MissingForward(format!("forward over {range:?} does not fit this net")));
        }
        for (layer, kind) in self.layers[range.clone()].iter().zip(&fwd.kinds) {
            if layer.kind_name() != *kind {
                return Err(Error::MissingForward(format!(
                    "layer kind {} differs from recorded {kind}",
                    layer.kind_name()
                )));
            }
        }
        if grad_out.shape() != fwd.output().shape() {
            return Err(shape_err("backward", fwd.output().shape_str(), grad_out.shape_str()));
        }
        let mut grads = vec![LayerGrad::None; range.len()];
        let mut g = grad_out.clone();
        for local in (0..range.len()).rev() {
            let layer = &self.layers[range.start + local];
            let need_dx = want_input || local > 0;
            let (lg, dx) = layer.backward(
                &fwd.activations[local],
                &fwd.activations[local + 1],
                &fwd.caches[local],
                &g,
                need_dx,
                want_params,
            )?;
            grads[local] = lg;
            match dx {
                Some(d) => g = d,
                None => {
                    return Ok((Gradients { range, layers: grads }, None));
                }
            }
        }
        Ok((Gradients { range, layers: grads }, Some(g)))
    }

    /// Parameter buffers of the layers in `range`, tagged `layer{i}.{name}`.
    pub fn param_slots(&mut self, range: Range<usize>) -> Vec<ParamSlot<'_, T>> {
        let start = range.start;
        self.layers[range]
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(name, values)| ParamSlot::new(format!("layer{}.{name}", start + i), values))
            })
            .collect()
    }

    /// Flat copy of every parameter and batchnorm buffer, for freeze audits.
    pub fn snapshot(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            for p in l.params() {
                out.extend_from_slice(p);
            }
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = l
            {
                out.extend_from_slice(running_mean);
                out.extend_from_slice(running_var);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(<[T]>::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_affine_passes_input_through() {
        let net = LayeredNet::new(vec![Layer::affine(Matrix::<f64>::identity(3), vec![0.0; 3]).unwrap()]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn scalar_affine_and_sigmoid() {
        let net = LayeredNet::new(vec![
            Layer::affine(Matrix::from_rows(&[vec![2.0]]).unwrap(), vec![1.0]).unwrap(),
        ])
        .unwrap();
        let y = net.predict(&Matrix::from_rows(&[vec![3.0]]).unwrap()).unwrap();
        assert_eq!(y[(0, 0)], 7.0);
        let s = LayeredNet::<f64>::new(vec![Layer::Sigmoid]).unwrap();
        assert_eq!(s.predict(&Matrix::zeros(1, 1)).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = LayeredNet::<f64>::new(vec![Layer::affine_he(3, 4, &mut rng), Layer::affine_he(5, 1, &mut rng)]);
        assert!(bad.is_err());
        let net = LayeredNet::<f64>::new(vec![Layer::affine_he(3, 4, &mut rng)]).unwrap();
        let err = net.predict(&Matrix::zeros(2, 5)).unwrap_err();
        assert!(err.to_string().contains("2x5"));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = LayeredNet::<f64>::new(vec![
            Layer::affine_he(4, 5, &mut rng),
            Layer::Relu,
            Layer::batchnorm(5, 0.1, 1e-5).unwrap(),
            Layer::affine_he(5, 2, &mut rng),
            Layer::Sigmoid,
        ])
        .unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let fwd = net.forward_eval(&x).unwrap();
        let (g, dx) = net.backward(&fwd, &Matrix::zeros(6, 2)).unwrap();
        assert!(g.is_zero());
        assert!(dx.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn affine_input_gradient_is_upstream_times_weight() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]]).unwrap();
        let net = LayeredNet::new(vec![Layer::affine(w.clone(), vec![0.1, 0.2, 0.3]).unwrap()]).unwrap();
        let x = Matrix::from_rows(&[vec![0.7, -1.1]]).unwrap();
        let g = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let fwd = net.forward_eval(&x).unwrap();
        let (_, dx) = net.backward(&fwd, &g).unwrap();
        assert_eq!(dx, g.matmul(&w).unwrap());
    }

    #[test]
    fn backward_rejects_foreign_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = LayeredNet::<f64>::new(vec![Layer::affine_he(2, 2, &mut rng), Layer::Relu]).unwrap();
        let b = LayeredNet::<f64>::new(vec![Layer::Relu, Layer::affine_he(2, 2, &mut rng)]).unwrap();
        let fwd = a.forward_eval(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(b.backward(&fwd, &Matrix::zeros(1, 2)), Err(Error::MissingForward(_))));
        let c = LayeredNet::<f64>::new(vec![Layer::affine_he(2, 2, &mut rng)]).unwrap();
        assert!(matches!(c.backward(&fwd, &Matrix::zeros(1, 2)), Err(Error::MissingForward(_))));
    }

    #[test]
    fn slice_bounds() {
        let net = LayeredNet::<f64>::new(vec![Layer::Relu, Layer::Sigmoid]).unwrap();
        assert!(Slice::new(0, &net).is_err());
        assert!(Slice::new(2, &net).is_err());
        assert_eq!(Slice::new(1, &net).unwrap().body(), 0..1);
    }
}
