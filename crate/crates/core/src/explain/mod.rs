//! Saliency explainers and the normalization used before comparing maps.

mod gradcam;
mod gradient;
mod lime;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, Tensor};

pub use gradcam::{explain_gradcam, explain_guided_gradcam};
pub use gradient::{
    explain_deeplift, explain_gradients, explain_guided_bp, explain_input_x_gradient,
    explain_integrated_gradients,
};
pub use lime::{explain_lime, lime_coefficients, weighted_lasso, LassoFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExplainerId {
    Gradients,
    InputXGradient,
    GuidedBP,
    /// Only a building block for [`ExplainerId::GuidedGradCAM`].
    GradCAM,
    GuidedGradCAM,
    DeepLIFT,
    IntegratedGradients,
    LIME,
}

impl ExplainerId {
    /// The seven methods evaluated by default (everything but plain GradCAM).
    pub const DEFAULT_SET: [ExplainerId; 7] = [
        ExplainerId::Gradients,
        ExplainerId::InputXGradient,
        ExplainerId::GuidedBP,
        ExplainerId::GuidedGradCAM,
        ExplainerId::DeepLIFT,
        ExplainerId::IntegratedGradients,
        ExplainerId::LIME,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerId::Gradients => "Gradients",
            ExplainerId::InputXGradient => "InputXGradient",
            ExplainerId::GuidedBP => "GuidedBP",
            ExplainerId::GradCAM => "GradCAM",
            ExplainerId::GuidedGradCAM => "GuidedGradCAM",
            ExplainerId::DeepLIFT => "DeepLIFT",
            ExplainerId::IntegratedGradients => "IntegratedGradients",
            ExplainerId::LIME => "LIME",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ExplainerId::DEFAULT_SET
            .iter()
            .chain(std::iter::once(&ExplainerId::GradCAM))
            .copied()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown explainer `{name}`")))
    }
}

impl fmt::Display for ExplainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reference input for DeepLIFT and Integrated Gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Baseline {
    #[default]
    ZeroImage,
}

impl Baseline {
    pub fn image_like(self, image: &Tensor) -> Tensor {
        match self {
            Baseline::ZeroImage => Tensor::zeros(image.shape()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainerConfig {
    pub ig_steps: usize,
    pub baseline: Baseline,
    /// Must be a perfect square; the image is cut into a square grid.
    pub lime_segments: usize,
    pub lime_samples: usize,
    pub lime_kernel_width: f64,
    pub lime_l1_strength: f64,
    pub seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            ig_steps: 64,
            baseline: Baseline::ZeroImage,
            lime_segments: 16,
            lime_samples: 200,
            lime_kernel_width: 0.25,
            lime_l1_strength: 0.01,
            seed: 0,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("explainer.{m}")));
        if self.ig_steps == 0 {
            return fail("ig_steps must be >= 1");
        }
        let g = (self.lime_segments as f64).sqrt().round() as usize;
        if self.lime_segments == 0 || g * g != self.lime_segments {
            return fail("lime_segments must be a positive perfect square");
        }
        if self.lime_samples < self.lime_segments {
            return fail("lime_samples must be >= lime_segments");
        }
        if !(self.lime_kernel_width > 0.0 && self.lime_kernel_width.is_finite()) {
            return fail("lime_kernel_width must be > 0");
        }
        if !(self.lime_l1_strength > 0.0) {
            return fail("lime_l1_strength must be > 0");
        }
        Ok(())
    }
}

/// Which model a saliency map was computed on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    Original,
    Randomized(String),
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelTag::Original => f.write_str("original"),
            ModelTag::Randomized(id) => write!(f, "randomized:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub raw: Tensor,
    /// Single channel `[H, W]`, values in `[0, 1]`.
    pub normalized: Tensor,
    pub explainer: ExplainerId,
    pub image_id: String,
    pub class_index: usize,
    pub model_tag: ModelTag,
}

/// `|raw|` summed over channels and divided by its maximum. An all-zero map
/// stays all zero.
pub fn normalize_saliency(raw: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match *raw.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        ref s => return Err(Error::shape(format!("saliency must be [C,H,W] or [H,W], got {s:?}"))),
    };
    let plane = h * w;
    let mut out = vec![0.0; plane];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&raw.data()[ch * plane..(ch + 1) * plane]) {
            *o += v.abs();
        }
    }
    let max = out.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in out.iter_mut() {
            *v /= max;
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Raw attribution for one explainer.
pub fn explain_raw(
    explainer: ExplainerId,
    model: &Model,
    image_id: &str,
    image: &Tensor,
    class_index: usize,
    config: &ExplainerConfig,
) -> Result<Tensor> {
    let baseline = config.baseline.image_like(image);
    match explainer {
        ExplainerId::Gradients => explain_gradients(model, image, class_index),
        ExplainerId::InputXGradient => explain_input_x_gradient(model, image, class_index),
        ExplainerId::GuidedBP => explain_guided_bp(model, image, class_index),
        ExplainerId::GradCAM => explain_gradcam(model, image, class_index),
        ExplainerId::GuidedGradCAM => explain_guided_gradcam(model, image, class_index),
        ExplainerId::DeepLIFT => explain_deeplift(model, image, &baseline, class_index),
        ExplainerId::IntegratedGradients => {
            explain_integrated_gradients(model, image, &baseline, config.ig_steps, class_index)
        }
        ExplainerId::LIME => explain_lime(model, image_id, image, class_index, config),
    }
}

/// Raw and normalized map, tagged with its provenance.
pub fn explain(
    explainer: ExplainerId,
    model: &Model,
    image_id: &str,
    image: &Tensor,
    class_index: usize,
    config: &ExplainerConfig,
    model_tag: ModelTag,
) -> Result<SaliencyMap> {
    let raw = explain_raw(explainer, model, image_id, image, class_index, config)?;
    let normalized = normalize_saliency(&raw)?;
    Ok(SaliencyMap {
        raw,
        normalized,
        explainer,
        image_id: image_id.to_string(),
        class_index,
        model_tag,
    })
}

#[cfg(test)]
pub(crate) mod test_models {
    use std::collections::BTreeMap;

    use crate::nn::{LayerDescriptor, LayerKind, Model, Tensor};

    /// Flatten + single dense row: f(x) = w·x + b.
    pub fn linear(weights: &[f64], shape: &[usize], bias: f64) -> Model {
        let n = weights.len();
        let layers = vec![
            LayerDescriptor::plain("flatten", LayerKind::Flatten),
            LayerDescriptor::dense("fc", n, 1),
        ];
        let mut params = BTreeMap::new();
        params.insert(
            "fc".to_string(),
            vec![
                Tensor::new(vec![1, n], weights.to_vec()).unwrap(),
                Tensor::new(vec![1], vec![bias]).unwrap(),
            ],
        );
        Model::new("linear", layers, params, shape.to_vec(), 1, 0).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_by_hand() {
        let raw = Tensor::new(vec![1, 2, 2], vec![-2., 1., 0., 4.]).unwrap();
        let n = normalize_saliency(&raw).unwrap();
        assert_eq!(n.shape(), &[2, 2]);
        assert_eq!(n.data(), &[0.5, 0.25, 0., 1.]);
    }

    #[test]
    fn normalize_zero_and_channels() {
        assert!(normalize_saliency(&Tensor::zeros(&[3, 4, 4])).unwrap().is_all_zero());
        let raw = Tensor::new(vec![2, 1, 2], vec![1., -1., -3., 1.]).unwrap();
        assert_eq!(normalize_saliency(&raw).unwrap().data(), &[1., 0.5]);
    }

    #[test]
    fn explainer_names_roundtrip() {
        for e in ExplainerId::DEFAULT_SET {
            assert_eq!(ExplainerId::parse(e.name()).unwrap(), e);
        }
        assert!(ExplainerId::parse("SmoothGrad").is_err());
        assert!(!ExplainerId::DEFAULT_SET.contains(&ExplainerId::GradCAM));
    }

    #[test]
    fn config_validation() {
        assert!(ExplainerConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ExplainerConfig)| {
            let mut c = ExplainerConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.ig_steps = 0));
        assert!(bad(|c| c.lime_segments = 15));
        assert!(bad(|c| c.lime_samples = 8));
        assert!(bad(|c| c.lime_kernel_width = 0.0));
        assert!(bad(|c| c.lime_l1_strength = -1.0));
    }

    #[test]
    fn model_tag_display() {
        assert_eq!(ModelTag::Original.to_string(), "original");
        assert_eq!(ModelTag::Randomized("conv2".into()).to_string(), "randomized:conv2");
    }
}
