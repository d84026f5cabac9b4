use super::explain_guided_bp;
use crate::error::{Error, Result};
use crate::nn::ops::bilinear_upsample;
use crate::nn::{Model, ReluBackwardMode, Tensor};

/// Class activation map at the last conv layer, upsampled to `[H, W]`.
///
/// Channel weights are the spatial mean of the logit's gradient at the conv
/// output; the map is `ReLU(Σ_k weight_k · activation_k)`.
pub fn explain_gradcam(model: &Model, image: &Tensor, class_index: usize) -> Result<Tensor> {
    let target = model
        .last_conv_activation()
        .ok_or_else(|| Error::invalid("GradCAM needs a model with at least one conv layer"))?;
    let seed = model.class_seed(class_index)?;
    let trace = model.trace(image)?;
    let back = model.backward(&trace, seed, ReluBackwardMode::Standard, None, false)?;
    let acts = &trace[target];
    let grads = &back.activations[target];
    let [k, h, w] = *acts.shape() else {
        return Err(Error::shape("conv activation must be [C,H,W]"));
    };
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for ch in 0..k {
        let g = &grads.data()[ch * plane..(ch + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (c, a) in cam.iter_mut().zip(&acts.data()[ch * plane..(ch + 1) * plane]) {
            *c += weight * a;
        }
    }
    for c in cam.iter_mut() {
        *c = c.max(0.0);
    }
    let [_, ih, iw] = *image.shape() else {
        return Err(Error::shape("image must be [C,H,W]"));
    };
    bilinear_upsample(&Tensor::from_parts(vec![h, w], cam), ih, iw)
}

/// Guided backprop map multiplied by the upsampled GradCAM map, broadcast
/// over input channels.
pub fn explain_guided_gradcam(model: &Model, image: &Tensor, class_index: usize) -> Result<Tensor> {
    let guided = explain_guided_bp(model, image, class_index)?;
    let cam = explain_gradcam(model, image, class_index)?;
    let plane = cam.len();
    let data = guided
        .data()
        .iter()
        .enumerate()
        .map(|(i, g)| g * cam.data()[i % plane])
        .collect();
    Ok(Tensor::from_parts(guided.shape().to_vec(), data))
}
