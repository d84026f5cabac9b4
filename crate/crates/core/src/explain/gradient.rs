use crate::error::{Error, Result};
use crate::nn::{grad_wrt_input, Model, ReluBackwardMode, Tensor};

/// Vanilla gradient of the class logit.
pub fn explain_gradients(model: &Model, image: &Tensor, class_index: usize) -> Result<Tensor> {
    grad_wrt_input(model, image, class_index, ReluBackwardMode::Standard, None)
}

pub fn explain_input_x_gradient(model: &Model, image: &Tensor, class_index: usize) -> Result<Tensor> {
    explain_gradients(model, image, class_index)?.mul(image)
}

pub fn explain_guided_bp(model: &Model, image: &Tensor, class_index: usize) -> Result<Tensor> {
    grad_wrt_input(model, image, class_index, ReluBackwardMode::Guided, None)
}

/// Rescale-rule contributions: `(x − x_ref) ⊙ m`, where `m` is the
/// multiplier propagated with DeepLIFT's rescale rule at every ReLU.
pub fn explain_deeplift(
    model: &Model,
    image: &Tensor,
    baseline: &Tensor,
    class_index: usize,
) -> Result<Tensor> {
    image.check_same_shape(baseline)?;
    let multipliers = grad_wrt_input(
        model,
        image,
        class_index,
        ReluBackwardMode::DeepLiftRescale,
        Some(baseline),
    )?;
    image.sub(baseline)?.mul(&multipliers)
}

/// Midpoint Riemann sum of the path integral from `baseline` to `image`.
pub fn explain_integrated_gradients(
    model: &Model,
    image: &Tensor,
    baseline: &Tensor,
    steps: usize,
    class_index: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    image.check_same_shape(baseline)?;
    let delta = image.sub(baseline)?;
    let mut first: Option<Tensor> = None;
    // accumulate offsets from the first sample so constant integrands are exact
    let mut shift = Tensor::zeros(image.shape());
    for t in 0..steps {
        let alpha = (t as f64 + 0.5) / steps as f64;
        let point = baseline.zip_map(&delta, |b, d| b + alpha * d)?;
        let g = grad_wrt_input(model, &point, class_index, ReluBackwardMode::Standard, None)?;
        match &first {
            None => first = Some(g),
            Some(g0) => shift.add_assign(&g.sub(g0)?),
        }
    }
    let g0 = first.expect("steps >= 1");
    let n = steps as f64;
    let mean = g0.zip_map(&shift, |a, s| a + s / n)?;
    delta.mul(&mean)
}
