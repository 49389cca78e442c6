//! Minimal dense numeric layer library: embedding, LSTM stacks, dense heads,
//! dropout, and a finite-difference gradient checker.
//!
//! Everything is generic over [`Scalar`] so the same code runs in 32-bit
//! precision for training and in 64-bit precision for gradient verification.
//! All gradients are analytic and hand-derived; `grad_check` validates them
//! against central finite differences.

mod gradcheck;
mod layers;
mod lstm;
mod matrix;

pub use gradcheck::{corrupt_gradients, grad_check};
pub use layers::{dropout, dropout_mask, Activation, Dense, DenseCache, DropoutMode, Embedding};
pub use lstm::{bidirectional_outputs, LayerState, LstmLayer, LstmStack, RecurrentState, StackRun, StepCache};
pub use matrix::Matrix;

use num_traits::Float;
use std::fmt::{Debug, Display};

/// Floating-point element type for all kernels. Implemented for `f32`
/// (training default) and `f64` (gradient-check mode).
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A trainable tensor: value plus an accumulated gradient of identical shape.
#[derive(Debug, Clone)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    pub value: Matrix<F>,
    pub grad: Matrix<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Matrix<F>) -> Self {
        let grad = Matrix::zeros(value.rows, value.cols);
        Parameter { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Anything holding a flat, stably ordered set of named parameters.
/// The order must be identical between `params` and `params_mut` and across
/// calls; the optimizer, checkpointing, and the gradient checker rely on it.
pub trait Parameterized<F: Scalar> {
    fn params(&self) -> Vec<&Parameter<F>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<F>>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
