//! Central finite-difference gradient checking.

use super::layers::{Gradients, Input, LayerStack};
use super::tensor::Tensor2;
use crate::error::Result;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` for every
/// parameter of `stack`, returning the largest relative error.
pub fn gradient_check_with<L>(
    stack: &LayerStack<f64>,
    analytic: &Gradients<f64>,
    mut loss: L,
    h: f64,
) -> f64
where
    L: FnMut(&LayerStack<f64>) -> f64,
{
    let mut probe = stack.clone();
    let flat: Vec<f64> = analytic.iter().copied().collect();
    let mut worst = 0.0f64;
    let mut k = 0;
    let tensors = probe.params().iter().map(|p| p.len()).collect::<Vec<_>>();
    for (ti, len) in tensors.into_iter().enumerate() {
        for j in 0..len {
            let original = probe.params()[ti][j];
            probe.params_mut()[ti][j] = original + h;
            let plus = loss(&probe);
            probe.params_mut()[ti][j] = original - h;
            let minus = loss(&probe);
            probe.params_mut()[ti][j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(flat[k], numeric));
            k += 1;
        }
    }
    worst
}

/// Gradient check of a single forward/backward pass where `loss` maps the
/// stack output to `(loss, ∂loss/∂output)`.
pub fn gradient_check<F>(stack: &LayerStack<f64>, input: &Input<f64>, loss: F, h: f64) -> Result<f64>
where
    F: Fn(&Tensor2<f64>) -> (f64, Tensor2<f64>),
{
    let pass = stack.forward(input)?;
    let (_, upstream) = loss(pass.output());
    let analytic = stack.backward(&pass, &upstream)?;
    Ok(gradient_check_with(
        stack,
        &analytic,
        |s| s.predict(input).map(|out| loss(&out).0).unwrap_or(f64::NAN),
        h,
    ))
}

/// Finite-difference check over a flat parameter vector.
pub fn gradient_check_flat<L>(params: &[f64], analytic: &[f64], mut loss: L, h: f64) -> f64
where
    L: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = loss(&probe);
        probe[i] = original - h;
        let minus = loss(&probe);
        probe[i] = original;
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * h)));
    }
    worst
}
