//! Minimal dense-tensor kernel: the layer set of the residual regressor with
//! reverse-mode gradients, smooth-L1 loss and Adam.

mod adam;
mod gradcheck;
mod layers;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckOptions, GradCheckReport};
pub use layers::{smooth_l1, BatchNorm, Dropout, Linear, Mode, Param, Relu};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::Result;

/// Smooth-L1 transition point, in normalized units.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Chain of linear layers with no nonlinearity, trained on smooth-L1.
#[derive(Debug, Clone)]
pub struct LinearStack {
    pub layers: Vec<Linear>,
}

impl LinearStack {
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for l in &mut self.layers {
            x = l.forward(&x)?;
        }
        Ok(x)
    }
}

impl Differentiable for LinearStack {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn loss(&mut self, input: &Tensor, target: &Tensor, backward: bool) -> Result<f64> {
        let y = self.forward(input)?;
        let (loss, mut grad) = smooth_l1(&y, target, SMOOTH_L1_BETA)?;
        if backward {
            self.params_mut().into_iter().for_each(Param::zero_grad);
            for l in self.layers.iter_mut().rev() {
                grad = l.backward(&grad)?;
            }
        }
        Ok(loss)
    }

    fn dropout_active(&self) -> bool {
        false
    }
}
