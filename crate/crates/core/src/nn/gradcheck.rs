//! Central finite-difference check of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::layers::Param;
use super::tensor::Tensor;

/// A network with a scalar training loss on a fixed batch.
pub trait Differentiable {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Loss on `(input, target)` in deterministic training mode. With
    /// `backward`, parameter gradients are zeroed and then filled.
    fn loss(&mut self, input: &Tensor, target: &Tensor, backward: bool) -> Result<f64>;

    fn dropout_active(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Tensors with at most this many entries are checked entry by entry;
    /// larger ones get this many sampled entries plus directional checks.
    pub max_entries_per_param: usize,
    /// Random unit directions (equal-magnitude entries, random signs)
    /// checked on each large tensor.
    pub directions_per_param: usize,
    /// Absolute floor of the relative-error denominator.
    pub floor: f64,
    /// Floor of the relative-error denominator as a fraction of the loss.
    /// Central differences of the loss carry roundoff near
    /// `eps * loss / step`, so gradients far below the loss (e.g. a bias
    /// feeding batch normalization, which is zero by construction) cannot be
    /// resolved relative to themselves.
    pub loss_relative_floor: f64,
    pub seed: u64,
    /// Adds a bias to every analytic gradient. Exists to prove a broken
    /// backward pass is caught.
    pub corrupt_gradient: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries_per_param: 64,
            directions_per_param: 2,
            floor: 1e-12,
            loss_relative_floor: 1e-3,
            seed: 0,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: usize,
    pub worst_param: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of every parameter tensor with central
/// differences and returns the largest relative error found.
pub fn grad_check<N: Differentiable>(
    net: &mut N,
    input: &Tensor,
    target: &Tensor,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if net.dropout_active() {
        return Err(Error::Precondition(
            "gradient check requires dropout to be disabled".into(),
        ));
    }
    let base_loss = net.loss(input, target, true)?;
    if !base_loss.is_finite() {
        return Err(Error::NonFinite("loss at the check point".into()));
    }
    let floor = opts.floor.max(opts.loss_relative_floor * base_loss.abs());
    let mut grads: Vec<Tensor> = net.params_mut().iter().map(|p| p.grad.clone()).collect();
    if opts.corrupt_gradient {
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v = *v * 1.01 + 1e-3);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checks: 0,
        worst_param: 0,
    };
    let record = |report: &mut GradCheckReport, param: usize, err: f64| {
        report.checks += 1;
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_param = param;
        }
    };

    for (pi, grad) in grads.iter().enumerate() {
        let n = grad.len();
        let entries: Vec<usize> = if n <= opts.max_entries_per_param {
            (0..n).collect()
        } else {
            (0..opts.max_entries_per_param)
                .map(|_| rng.random_range(0..n))
                .collect()
        };
        for &k in &entries {
            let numeric = central_difference(net, input, target, pi, &|d: &mut [f64], s| d[k] += s, h)?;
            record(&mut report, pi, relative_error(grad.data()[k], numeric, floor));
        }
        if n > opts.max_entries_per_param {
            for _ in 0..opts.directions_per_param {
                let unit = 1.0 / (n as f64).sqrt();
                let dir: Vec<f64> = (0..n)
                    .map(|_| if rng.random::<bool>() { unit } else { -unit })
                    .collect();
                let analytic: f64 = grad.data().iter().zip(&dir).map(|(g, d)| g * d).sum();
                let shift = |d: &mut [f64], s: f64| d.iter_mut().zip(&dir).for_each(|(v, u)| *v += s * u);
                let numeric = central_difference(net, input, target, pi, &shift, h)?;
                record(&mut report, pi, relative_error(analytic, numeric, floor));
            }
        }
    }
    Ok(report)
}

fn central_difference<N: Differentiable>(
    net: &mut N,
    input: &Tensor,
    target: &Tensor,
    param: usize,
    shift: &dyn Fn(&mut [f64], f64),
    h: f64,
) -> Result<f64> {
    let original = net.params_mut()[param].value.clone();
    shift(net.params_mut()[param].value.data_mut(), h);
    let plus = net.loss(input, target, false);
    net.params_mut()[param].value = original.clone();
    shift(net.params_mut()[param].value.data_mut(), -h);
    let minus = net.loss(input, target, false);
    net.params_mut()[param].value = original;
    Ok((plus? - minus?) / (2.0 * h))
}
