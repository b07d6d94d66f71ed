use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Scalar, Tensor};

/// Bias-corrected Adam with per-parameter first and second moments.
///
/// Moments are allocated on the first step and matched to parameters by
/// position, so the parameter list must be passed in the same order every
/// step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState<T: Scalar = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    #[serde(skip)]
    first: Vec<Tensor<T>>,
    #[serde(skip)]
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(learning_rate: f64) -> Self {
        AdamState { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: Vec<(&mut Tensor<T>, &Tensor<T>)>) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|(p, _)| Tensor::zeros(p.shape().to_vec())).collect();
            self.second = self.first.clone();
        }
        if params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Shape(format!(
                    "adam parameter {i}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let correct1 = T::lit(1.0 - self.beta1.powi(t));
        let correct2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(self.learning_rate), T::lit(self.epsilon));
        let one = T::one();

        for ((p, g), (m, v)) in params.into_iter().zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            let p = p.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * gi;
                let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / correct1;
                let v_hat = vi / correct2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::<f64>::new(0.1);
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::zeros([2]);
        for _ in 0..3 {
            adam.step(vec![(&mut p, &g)]).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = AdamState::<f64>::new(0.1);
        let mut p = Tensor::vector(vec![0.5]);
        adam.step(vec![(&mut p, &Tensor::vector(vec![1.0]))]).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = 0.5 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut adam = AdamState::<f32>::new(0.01);
            let mut p = Tensor::vector(vec![1.0f32, 2.0, 3.0]);
            for k in 0..5 {
                let g = Tensor::vector(vec![0.1 * k as f32, -0.2, 0.3]);
                adam.step(vec![(&mut p, &g)]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut adam = AdamState::<f32>::new(0.0);
        let mut p = Tensor::vector(vec![1.0f32, 2.0]);
        adam.step(vec![(&mut p, &Tensor::vector(vec![3.0, -4.0]))]).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = AdamState::<f32>::new(0.1);
        let mut p = Tensor::vector(vec![1.0f32, 2.0]);
        assert!(adam.step(vec![(&mut p, &Tensor::vector(vec![1.0]))]).is_err());
        let mut adam = AdamState::<f32>::new(0.1);
        adam.step(vec![(&mut p, &Tensor::vector(vec![1.0, 1.0]))]).unwrap();
        let mut q = Tensor::vector(vec![1.0f32]);
        assert!(adam.step(vec![(&mut p, &Tensor::vector(vec![1.0, 1.0])), (&mut q, &Tensor::vector(vec![1.0]))]).is_err());
    }
}
