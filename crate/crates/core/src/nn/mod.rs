//! Layers with hand-written backward passes, Adam, and a finite-difference
//! gradient checker.

mod adam;
mod gradcheck;
mod layers;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport, Objective, SequentialObjective};
pub use layers::{sigmoid, Activation, Conv2d, Dense, Dropout, Layer, MaxPool2d, KERNEL, POOL};

use crate::error::Result;
use crate::ndcore::{Rng, Scalar, Tensor};

/// Ordered stack of layers.
#[derive(Clone, Debug)]
pub struct Sequential<T: Scalar = f32> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Caching forward pass; `Some(rng)` selects training mode.
    pub fn forward(&mut self, x: &Tensor<T>, mut rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, rng.as_deref_mut())?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.layers.len();
        self.backward_from(n, dy)
    }

    /// Backpropagates `dy`, taken as the gradient w.r.t. the output of layer
    /// `end - 1`, through layers `end - 1 ..= 0`.
    pub fn backward_from(&mut self, end: usize, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for layer in self.layers[..end].iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    /// `(name, param, grad)` for every parameter tensor, named `"{index}.{kind}"`.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut().into_iter().map(move |(n, p, g)| (format!("{i}.{n}"), p, g)))
            .collect()
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}
