use serde::Serialize;

use super::Sequential;
use crate::error::Result;
use crate::ndcore::{Rng, Tensor};

/// A scalar loss over a flat parameter vector, with an analytic gradient.
pub trait Objective {
    fn num_params(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    fn loss(&mut self) -> Result<f64>;
    /// Analytic gradient in the same flat order as [`Objective::param`].
    fn gradient(&mut self) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub num_params: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

// Relative errors are measured against max(|analytic|, |numeric|, FLOOR) so
// coordinates with vanishing gradient are compared absolutely.
const FLOOR: f64 = 1e-6;

/// Compares the analytic gradient against central finite differences with
/// step `step`, coordinate by coordinate.
pub fn grad_check(objective: &mut impl Objective, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let n = objective.num_params();
    let analytic = objective.gradient()?;
    let mut max_rel_error = 0.0f64;
    let mut worst_param = None;
    for i in 0..n {
        let orig = objective.param(i);
        objective.set_param(i, orig + step);
        let up = objective.loss()?;
        objective.set_param(i, orig - step);
        let down = objective.loss()?;
        objective.set_param(i, orig);
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        if rel.is_nan() || rel > max_rel_error {
            max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            worst_param = Some(i);
        }
    }
    Ok(GradCheckReport { num_params: n, max_rel_error, worst_param, tolerance, passed: max_rel_error < tolerance })
}

/// Loss of a [`Sequential`] stack on a fixed input.
///
/// `loss_fn` maps the stack output to `(loss, d loss / d output)`. When
/// `dropout_seed` is set the stack runs in training mode with a generator
/// rebuilt from that seed on every evaluation, which freezes dropout masks.
pub struct SequentialObjective<F> {
    pub stack: Sequential<f64>,
    pub input: Tensor<f64>,
    pub loss_fn: F,
    pub dropout_seed: Option<u64>,
}

impl<F> SequentialObjective<F>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    pub fn new(stack: Sequential<f64>, input: Tensor<f64>, loss_fn: F) -> Self {
        SequentialObjective { stack, input, loss_fn, dropout_seed: None }
    }

    fn run_forward(&mut self) -> Result<Tensor<f64>> {
        match self.dropout_seed {
            Some(seed) => {
                let mut rng = Rng::new(seed);
                self.stack.forward(&self.input, Some(&mut rng))
            }
            None => self.stack.forward(&self.input, None),
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (t, (_, p)) in self.stack.params().iter().enumerate() {
            if index < p.len() {
                return (t, index);
            }
            index -= p.len();
        }
        panic!("parameter index out of range");
    }
}

impl<F> Objective for SequentialObjective<F>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    fn num_params(&self) -> usize {
        self.stack.param_count()
    }

    fn param(&self, index: usize) -> f64 {
        let (t, i) = self.locate(index);
        self.stack.params()[t].1.data()[i]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (t, i) = self.locate(index);
        self.stack.params_mut()[t].1.data_mut()[i] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        let y = self.run_forward()?;
        Ok((self.loss_fn)(&y).0)
    }

    fn gradient(&mut self) -> Result<Vec<f64>> {
        self.stack.zero_grad();
        let y = self.run_forward()?;
        let (_, dy) = (self.loss_fn)(&y);
        self.stack.backward(&dy)?;
        Ok(self.stack.params_mut().into_iter().flat_map(|(_, _, g)| g.data().to_vec()).collect())
    }
}
