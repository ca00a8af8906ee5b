use rand::Rng;
use std::ops::Range;

use super::layers::{Layer, LayerSpec, Param};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Sequential graph of layers over `(channels, length)` inputs.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    input: (usize, usize),
}

impl<T: Real> Network<T> {
    /// He-normal initialisation, drawing from `rng` in layer order.
    pub fn from_specs<R: Rng + ?Sized>(
        specs: &[LayerSpec],
        input: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        specs.iter().try_fold(input, |s, l| l.output_shape(s))?;
        let layers = specs
            .iter()
            .map(|s| Layer::from_spec(s, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, input })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input
    }

    /// `(channels, length)` after each top-level layer.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize)>> {
        let mut shape = self.input;
        self.layers
            .iter()
            .map(|l| {
                shape = l.spec().output_shape(shape)?;
                Ok(shape)
            })
            .collect()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if (x.channels(), x.length()) != self.input {
            return Err(Error::ShapeMismatch(format!(
                "network expects {}×{} inputs, got {}×{}",
                self.input.0,
                self.input.1,
                x.channels(),
                x.length()
            )));
        }
        self.forward_range(x, 0..self.layers.len(), train)
    }

    /// Runs only `layers[range]`.
    pub fn forward_range(
        &mut self,
        x: &Tensor<T>,
        range: Range<usize>,
        train: bool,
    ) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers[range] {
            h = layer.forward(&h, train)?;
        }
        Ok(h)
    }

    /// Gradient w.r.t. the network input; parameter gradients are stored
    /// on the layers.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_range(dy, 0..self.layers.len())
    }

    /// Backpropagates `dy` (gradient at the output of `layers[range.end-1]`)
    /// down to the input of `layers[range.start]`.
    pub fn backward_range(&mut self, dy: &Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for layer in self.layers[range].iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    pub fn n_param_tensors(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_| n += 1);
        n
    }

    /// All parameter values concatenated in traversal order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    pub fn flat_grads(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |p| out.extend_from_slice(&p.grad));
        out
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |p| {
            let n = p.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// Positive-output pattern of every ReLU from the last training forward.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.relu_pattern(&mut out));
        out
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.iter().map(Layer::cast).collect(),
            input: self.input,
        }
    }
}
