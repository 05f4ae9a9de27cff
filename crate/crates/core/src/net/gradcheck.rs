//! Central-difference gradient checks for the hand-written backward passes.
//!
//! The scalar probe is `L = <f(x), r>` for a fixed random `r`, so the
//! analytic gradient is the backward pass applied to `r`.

use rand::Rng;

use super::layers::Param;
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;

/// Symmetric relative error with an absolute floor, so gradients that are
/// zero up to roundoff compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Worst relative error between the backward pass and central differences
/// with respect to the input `x`.
pub fn input_grad_error<S, R: Rng + ?Sized>(
    x: &Tensor,
    rng: &mut R,
    state: &mut S,
    mut forward: impl FnMut(&mut S, &Tensor) -> Result<Tensor>,
    mut backward: impl FnMut(&mut S, &Tensor) -> Result<Tensor>,
) -> Result<f64> {
    let y = forward(state, x)?;
    let probe = Tensor::randn(&y.shape, 1.0, rng);
    let analytic = backward(state, &probe)?;
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp.data[j] = x.data[j] + STEP;
        let plus = forward(state, &xp)?.dot(&probe);
        xp.data[j] = x.data[j] - STEP;
        let minus = forward(state, &xp)?.dot(&probe);
        xp.data[j] = x.data[j];
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic.data[j], numeric));
    }
    Ok(worst)
}

/// Worst relative error with respect to one parameter tensor of `state`.
pub fn param_grad_error<S, R: Rng + ?Sized>(
    x: &Tensor,
    rng: &mut R,
    state: &mut S,
    param: impl Fn(&mut S) -> &mut Param,
    mut forward: impl FnMut(&mut S, &Tensor) -> Result<Tensor>,
    mut backward: impl FnMut(&mut S, &Tensor) -> Result<Tensor>,
) -> Result<f64> {
    let y = forward(state, x)?;
    let probe = Tensor::randn(&y.shape, 1.0, rng);
    param(state).zero_grad();
    backward(state, &probe)?;
    let analytic = param(state).grad.clone();
    let mut worst: f64 = 0.0;
    for j in 0..analytic.len() {
        let orig = param(state).value.data[j];
        param(state).value.data[j] = orig + STEP;
        let plus = forward(state, x)?.dot(&probe);
        param(state).value.data[j] = orig - STEP;
        let minus = forward(state, x)?.dot(&probe);
        param(state).value.data[j] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic.data[j], numeric));
    }
    Ok(worst)
}

/// Worst relative error of a scalar loss gradient with respect to its input.
pub fn scalar_grad_error(
    x: &Tensor,
    mut loss: impl FnMut(&Tensor) -> Result<(f64, Tensor)>,
) -> Result<f64> {
    let (_, analytic) = loss(x)?;
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp.data[j] = x.data[j] + STEP;
        let plus = loss(&xp)?.0;
        xp.data[j] = x.data[j] - STEP;
        let minus = loss(&xp)?.0;
        xp.data[j] = x.data[j];
        worst = worst.max(relative_error(analytic.data[j], (plus - minus) / (2.0 * STEP)));
    }
    Ok(worst)
}
