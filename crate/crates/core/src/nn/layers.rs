//! Layers with cached forward state and hand-written backward passes.
//!
//! `forward` stores what `backward` needs; `backward` takes the gradient of
//! the loss with respect to the layer output, accumulates parameter
//! gradients and returns the gradient with respect to the layer input.
//! `apply` is the cache-free inference path.

use rand::Rng;

use crate::error::{Error, Result};

use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out_features x in_features`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.expect_matrix("linear weight")?;
        bias.expect_shape(&[out], "linear bias")?;
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        })
    }

    /// He-uniform weights, zero bias.
    pub fn init(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        let w = (0..in_features * out_features)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(
            Tensor::matrix(out_features, in_features, w).expect("sized"),
            Tensor::zeros(&[out_features]),
        )
        .expect("sized")
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.rows()
    }

    /// `input . weight^T + bias` without caching.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, width) = input.expect_matrix("linear input")?;
        if width != self.in_features() {
            return Err(Error::ShapeMismatch {
                expected: format!("input width {}", self.in_features()),
                actual: width.to_string(),
            });
        }
        let out = self.out_features();
        let mut y = Tensor::zeros(&[batch, out]);
        for r in 0..batch {
            y.row_mut(r).copy_from_slice(self.bias.value.data());
        }
        gemm(
            batch,
            width,
            out,
            1.0,
            input.data(),
            false,
            self.weight.value.data(),
            true,
            1.0,
            y.data_mut(),
        );
        Ok(y)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let y = self.apply(input)?;
        self.input = Some(input.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Precondition("linear backward before forward".into()))?;
        let (batch, inp) = (x.rows(), x.cols());
        let out = self.out_features();
        grad_out.expect_shape(&[batch, out], "linear output gradient")?;
        // dW += dY^T X
        gemm(
            out,
            batch,
            inp,
            1.0,
            grad_out.data(),
            true,
            x.data(),
            false,
            1.0,
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        for r in 0..batch {
            for (d, g) in db.iter_mut().zip(grad_out.row(r)) {
                *d += g;
            }
        }
        // dX = dY W
        let mut dx = Tensor::zeros(&[batch, inp]);
        gemm(
            batch,
            out,
            inp,
            1.0,
            grad_out.data(),
            false,
            self.weight.value.data(),
            false,
            0.0,
            dx.data_mut(),
        );
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    training: bool,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[features], 1.0)),
            beta: Param::new(Tensor::zeros(&[features])),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        let (batch, f) = input.expect_matrix("batchnorm input")?;
        if f != self.features() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} features", self.features()),
                actual: f.to_string(),
            });
        }
        Ok((batch, f))
    }

    /// Inference-mode normalization from the running statistics.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, _) = self.check_input(input)?;
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(self.gamma.value.data())
            .map(|(v, g)| g / (v + self.eps).sqrt())
            .collect();
        let mut y = input.clone();
        for r in 0..batch {
            for (i, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[i]) * scale[i] + self.beta.value.data()[i];
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (batch, f) = self.check_input(input)?;
        if mode == Mode::Eval {
            let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let mut normalized = input.clone();
            for r in 0..batch {
                for (i, v) in normalized.row_mut(r).iter_mut().enumerate() {
                    *v = (*v - self.running_mean[i]) * inv_std[i];
                }
            }
            let y = self.scale_shift(&normalized);
            self.cache = Some(BnCache {
                normalized,
                inv_std,
                training: false,
            });
            return Ok(y);
        }
        if batch < 2 {
            return Err(Error::Precondition(format!(
                "batch normalization in training mode needs a batch of at least 2, got {batch}"
            )));
        }
        let n = batch as f64;
        let mut mean = vec![0.0; f];
        for r in 0..batch {
            for (m, v) in mean.iter_mut().zip(input.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for r in 0..batch {
            for ((s, v), m) in var.iter_mut().zip(input.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = input.clone();
        for r in 0..batch {
            for (i, v) in normalized.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[i]) * inv_std[i];
            }
        }
        let m = self.momentum;
        for i in 0..f {
            self.running_mean[i] = (1.0 - m) * self.running_mean[i] + m * mean[i];
            self.running_var[i] = (1.0 - m) * self.running_var[i] + m * var[i];
        }
        let y = self.scale_shift(&normalized);
        self.cache = Some(BnCache {
            normalized,
            inv_std,
            training: true,
        });
        Ok(y)
    }

    fn scale_shift(&self, normalized: &Tensor) -> Tensor {
        let mut y = normalized.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..y.rows() {
            for (i, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[i] + b[i];
            }
        }
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Precondition("batchnorm backward before forward".into()))?;
        let xhat = &cache.normalized;
        let (batch, f) = (xhat.rows(), xhat.cols());
        grad_out.expect_shape(&[batch, f], "batchnorm output gradient")?;
        let gamma = self.gamma.value.data();
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for r in 0..batch {
            for i in 0..f {
                let dy = grad_out.row(r)[i];
                sum_dy[i] += dy;
                sum_dy_xhat[i] += dy * xhat.row(r)[i];
            }
        }
        let mut dx = Tensor::zeros(&[batch, f]);
        let n = batch as f64;
        for r in 0..batch {
            let (dy, xh) = (grad_out.row(r), xhat.row(r));
            for (i, d) in dx.row_mut(r).iter_mut().enumerate() {
                *d = if cache.training {
                    gamma[i] * cache.inv_std[i] * (dy[i] - sum_dy[i] / n - xh[i] * sum_dy_xhat[i] / n)
                } else {
                    gamma[i] * cache.inv_std[i] * dy[i]
                };
            }
        }
        for i in 0..f {
            self.gamma.grad.data_mut()[i] += sum_dy_xhat[i];
            self.beta.grad.data_mut()[i] += sum_dy[i];
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

/// Elementwise `max(0, x)`; the gradient at exactly 0 is 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn apply(input: &Tensor) -> Tensor {
        let mut y = input.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        self.mask = input.data().iter().map(|&v| v > 0.0).collect();
        Self::apply(input)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.len() != self.mask.len() {
            return Err(Error::Precondition("relu backward does not match forward".into()));
        }
        let mut dx = grad_out.clone();
        for (d, &keep) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in training,
/// so inference is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    rate: f64,
    scale: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            scale: Vec::new(),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut impl Rng) -> Tensor {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.scale = vec![1.0; input.len()];
            return input.clone();
        }
        let keep = 1.0 / (1.0 - self.rate);
        self.scale = (0..input.len())
            .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mut y = input.clone();
        for (v, s) in y.data_mut().iter_mut().zip(&self.scale) {
            *v *= s;
        }
        y
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.len() != self.scale.len() {
            return Err(Error::Precondition("dropout backward does not match forward".into()));
        }
        let mut dx = grad_out.clone();
        for (d, s) in dx.data_mut().iter_mut().zip(&self.scale) {
            *d *= s;
        }
        Ok(dx)
    }
}

/// Smooth-L1 loss averaged over every element, and its gradient with
/// respect to `pred`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor, beta: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", pred.shape()),
            actual: format!("{:?}", target.shape()),
        });
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "smooth-L1 beta must be positive, got {beta}"
        )));
    }
    let n = pred.len().max(1) as f64;
    // Compensated (Neumaier) summation keeps the loss accurate to a few ulp,
    // which finite-difference gradient checks depend on.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let e = p - t;
        let term = if e.abs() < beta {
            *g = e / beta / n;
            0.5 * e * e / beta
        } else {
            *g = e.signum() / n;
            e.abs() - 0.5 * beta
        };
        let next = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - next) + term
        } else {
            (term - next) + sum
        };
        sum = next;
    }
    Ok(((sum + comp) / n, grad))
}
