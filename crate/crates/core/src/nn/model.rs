use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ops::{self, ReluBackwardMode};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    Dense,
    Relu,
    MaxPool { window: usize, stride: usize },
    Flatten,
    /// Adds the output of an earlier layer to the incoming activation.
    ResidualAdd { skip_from: String },
}

impl LayerKind {
    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Dense)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "Conv",
            LayerKind::Dense => "Dense",
            LayerKind::Relu => "Relu",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::Flatten => "Flatten",
            LayerKind::ResidualAdd { .. } => "ResidualAdd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    UniformFanIn,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub layer_id: String,
    pub kind: LayerKind,
    /// Weight then bias, empty for parameterless kinds.
    pub param_shapes: Vec<Vec<usize>>,
    /// One scheme per entry of `param_shapes`.
    pub init_scheme: Vec<InitScheme>,
}

impl LayerDescriptor {
    pub fn conv(id: &str, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerDescriptor {
            layer_id: id.to_string(),
            kind: LayerKind::Conv { stride, padding },
            param_shapes: vec![vec![cout, cin, k, k], vec![cout]],
            init_scheme: vec![InitScheme::UniformFanIn, InitScheme::Zeros],
        }
    }

    pub fn dense(id: &str, inputs: usize, outputs: usize) -> Self {
        LayerDescriptor {
            layer_id: id.to_string(),
            kind: LayerKind::Dense,
            param_shapes: vec![vec![outputs, inputs], vec![outputs]],
            init_scheme: vec![InitScheme::UniformFanIn, InitScheme::Zeros],
        }
    }

    pub fn plain(id: &str, kind: LayerKind) -> Self {
        LayerDescriptor {
            layer_id: id.to_string(),
            kind,
            param_shapes: Vec::new(),
            init_scheme: Vec::new(),
        }
    }

    /// Fan-in of the weight tensor (all dims but the first).
    pub fn fan_in(&self) -> usize {
        self.param_shapes
            .first()
            .map(|s| s[1..].iter().product())
            .unwrap_or(0)
    }
}

/// A feed-forward network: an ordered list of layers and their parameters.
///
/// Models are immutable values; every edit returns a new model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    architecture_id: String,
    layers: Vec<LayerDescriptor>,
    parameters: BTreeMap<String, Vec<Tensor>>,
    input_shape: Vec<usize>,
    num_classes: usize,
    training_seed: u64,
    train_accuracy: Option<f64>,
    skip_index: Vec<Option<usize>>,
}

impl Model {
    pub fn new(
        architecture_id: impl Into<String>,
        layers: Vec<LayerDescriptor>,
        parameters: BTreeMap<String, Vec<Tensor>>,
        input_shape: Vec<usize>,
        num_classes: usize,
        training_seed: u64,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut skip_index = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            if !seen.insert(layer.layer_id.as_str()) {
                return Err(Error::invalid(format!("duplicate layer id `{}`", layer.layer_id)));
            }
            if layer.kind.has_parameters() != !layer.param_shapes.is_empty()
                || layer.param_shapes.len() != layer.init_scheme.len()
            {
                return Err(Error::invalid(format!(
                    "layer `{}` parameter declaration inconsistent with kind {}",
                    layer.layer_id,
                    layer.kind.name()
                )));
            }
            if layer.kind.has_parameters() {
                let params = parameters.get(&layer.layer_id).ok_or_else(|| {
                    Error::invalid(format!("missing parameters for `{}`", layer.layer_id))
                })?;
                let shapes: Vec<&[usize]> = params.iter().map(|t| t.shape()).collect();
                let declared: Vec<&[usize]> = layer.param_shapes.iter().map(|s| s.as_slice()).collect();
                if shapes != declared {
                    return Err(Error::shape(format!(
                        "parameters of `{}` have shapes {:?}, declared {:?}",
                        layer.layer_id, shapes, declared
                    )));
                }
            }
            skip_index.push(match &layer.kind {
                LayerKind::ResidualAdd { skip_from } => Some(
                    layers[..i]
                        .iter()
                        .position(|l| &l.layer_id == skip_from)
                        .ok_or_else(|| {
                            Error::invalid(format!(
                                "residual `{}` refers to unknown earlier layer `{skip_from}`",
                                layer.layer_id
                            ))
                        })?,
                ),
                _ => None,
            });
        }
        if let Some(extra) = parameters.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(Error::invalid(format!("parameters for unknown layer `{extra}`")));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let model = Model {
            architecture_id: architecture_id.into(),
            layers,
            parameters,
            input_shape,
            num_classes,
            training_seed,
            train_accuracy: None,
            skip_index,
        };
        let logits = model.forward(&Tensor::zeros(&model.input_shape))?;
        if logits.shape() != [num_classes] {
            return Err(Error::shape(format!(
                "network output {:?} does not match {num_classes} classes",
                logits.shape()
            )));
        }
        Ok(model)
    }

    pub fn architecture_id(&self) -> &str {
        &self.architecture_id
    }

    pub fn layers(&self) -> &[LayerDescriptor] {
        &self.layers
    }

    pub fn parameters(&self) -> &BTreeMap<String, Vec<Tensor>> {
        &self.parameters
    }

    pub fn layer_parameters(&self, layer_id: &str) -> Option<&[Tensor]> {
        self.parameters.get(layer_id).map(|v| v.as_slice())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    /// Training-set accuracy recorded by the trainer, if the model was trained.
    pub fn train_accuracy(&self) -> Option<f64> {
        self.train_accuracy
    }

    /// Attaches the trainer's seed and measured accuracy.
    pub fn with_training_record(self, seed: u64, accuracy: Option<f64>) -> Self {
        self.set_training(seed, accuracy)
    }

    pub(crate) fn set_training(mut self, seed: u64, accuracy: Option<f64>) -> Self {
        self.training_seed = seed;
        self.train_accuracy = accuracy;
        self
    }

    /// Returns a copy with the named layer's tensors replaced.
    pub fn with_layer_parameters(&self, layer_id: &str, tensors: Vec<Tensor>) -> Result<Model> {
        let layer = self
            .layers
            .iter()
            .find(|l| l.layer_id == layer_id && l.kind.has_parameters())
            .ok_or_else(|| Error::UnknownLayer(layer_id.to_string()))?;
        let shapes: Vec<&[usize]> = tensors.iter().map(|t| t.shape()).collect();
        let declared: Vec<&[usize]> = layer.param_shapes.iter().map(|s| s.as_slice()).collect();
        if shapes != declared {
            return Err(Error::shape(format!(
                "replacement shapes {shapes:?} do not match {declared:?}"
            )));
        }
        let mut next = self.clone();
        next.parameters.insert(layer_id.to_string(), tensors);
        Ok(next)
    }

    pub(crate) fn with_all_parameters(&self, parameters: BTreeMap<String, Vec<Tensor>>) -> Model {
        let mut next = self.clone();
        next.parameters = parameters;
        next
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Pre-softmax class scores.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.trace(image)?.pop().expect("trace has at least the input"))
    }

    /// All intermediate activations: index 0 is the input, index `k + 1` the
    /// output of layer `k`.
    pub fn trace(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(image)?;
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(image.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &acts[i];
            let y = match &layer.kind {
                LayerKind::Conv { stride, padding } => {
                    let p = &self.parameters[&layer.layer_id];
                    ops::conv2d(x, &p[0], &p[1], *stride, *padding)?
                }
                LayerKind::Dense => {
                    let p = &self.parameters[&layer.layer_id];
                    ops::dense(x, &p[0], &p[1])?
                }
                LayerKind::Relu => ops::relu_forward(x),
                LayerKind::MaxPool { window, stride } => ops::max_pool2d(x, *window, *stride)?,
                LayerKind::Flatten => x.clone().reshape(vec![x.len()])?,
                LayerKind::ResidualAdd { .. } => {
                    let skip = &acts[self.skip_index[i].expect("validated") + 1];
                    x.add(skip).map_err(|e| {
                        Error::shape(format!("residual `{}`: {e}", layer.layer_id))
                    })?
                }
            };
            acts.push(y);
        }
        Ok(acts)
    }

    /// Index into a trace of the output of the last conv layer.
    pub fn last_conv_activation(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .map(|i| i + 1)
    }

    /// Reverse pass from `seed` (gradient at the logits) through a recorded
    /// trace. Returns the gradient at every activation and, if requested,
    /// parameter gradients per layer.
    pub(crate) fn backward(
        &self,
        trace: &[Tensor],
        seed: Tensor,
        mode: ReluBackwardMode,
        reference_trace: Option<&[Tensor]>,
        want_params: bool,
    ) -> Result<Backward> {
        if mode == ReluBackwardMode::DeepLiftRescale && reference_trace.is_none() {
            return Err(Error::invalid("DeepLiftRescale requires a reference trace"));
        }
        let n = self.layers.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n + 1];
        grads[n] = Some(seed);
        let mut params = BTreeMap::new();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let up = grads[i + 1]
                .take()
                .unwrap_or_else(|| Tensor::zeros(trace[i + 1].shape()));
            let x = &trace[i];
            let down = match &layer.kind {
                LayerKind::Conv { stride, padding } => {
                    let p = &self.parameters[&layer.layer_id];
                    let (gx, gp) = ops::conv2d_backward(x, &p[0], &up, *stride, *padding, want_params)?;
                    if let Some((gk, gb)) = gp {
                        params.insert(layer.layer_id.clone(), vec![gk, gb]);
                    }
                    gx
                }
                LayerKind::Dense => {
                    let p = &self.parameters[&layer.layer_id];
                    let (gx, gp) = ops::dense_backward(x, &p[0], &up, want_params)?;
                    if let Some((gw, gb)) = gp {
                        params.insert(layer.layer_id.clone(), vec![gw, gb]);
                    }
                    gx
                }
                LayerKind::Relu => {
                    ops::relu_backward(&up, x, mode, reference_trace.map(|r| &r[i]))?
                }
                LayerKind::MaxPool { window, stride } => {
                    ops::max_pool2d_backward(&up, x, *window, *stride)?
                }
                LayerKind::Flatten => up.clone().reshape(x.shape().to_vec())?,
                LayerKind::ResidualAdd { .. } => {
                    let s = self.skip_index[i].expect("validated") + 1;
                    accumulate(&mut grads[s], &up);
                    up.clone()
                }
            };
            accumulate(&mut grads[i], &down);
            grads[i + 1] = Some(up);
        }
        Ok(Backward {
            activations: grads.into_iter().map(|g| g.expect("every activation visited")).collect(),
            parameters: params,
        })
    }

    pub(crate) fn class_seed(&self, class_index: usize) -> Result<Tensor> {
        if class_index >= self.num_classes {
            return Err(Error::InvalidClass {
                index: class_index,
                num_classes: self.num_classes,
            });
        }
        let mut seed = Tensor::zeros(&[self.num_classes]);
        seed.data_mut()[class_index] = 1.0;
        Ok(seed)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(t) => t.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

pub(crate) struct Backward {
    pub activations: Vec<Tensor>,
    pub parameters: BTreeMap<String, Vec<Tensor>>,
}

/// Gradient of one logit with respect to the input image.
pub fn grad_wrt_input(
    model: &Model,
    image: &Tensor,
    class_index: usize,
    mode: ReluBackwardMode,
    reference: Option<&Tensor>,
) -> Result<Tensor> {
    let seed = model.class_seed(class_index)?;
    let trace = model.trace(image)?;
    let reference_trace = match (mode, reference) {
        (ReluBackwardMode::DeepLiftRescale, Some(r)) => Some(model.trace(r)?),
        (ReluBackwardMode::DeepLiftRescale, None) => {
            return Err(Error::invalid("DeepLiftRescale requires a reference input"))
        }
        _ => None,
    };
    let mut back = model.backward(&trace, seed, mode, reference_trace.as_deref(), false)?;
    Ok(back.activations.swap_remove(0))
}

/// Central-difference estimate of the input gradient of one logit.
pub fn fd_gradient(model: &Model, image: &Tensor, class_index: usize, step: f64) -> Result<Tensor> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    model.class_seed(class_index)?;
    let mut probe = image.clone();
    let mut out = Vec::with_capacity(image.len());
    for k in 0..image.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let plus = model.forward(&probe)?.data()[class_index];
        probe.data_mut()[k] = orig - step;
        let minus = model.forward(&probe)?.data()[class_index];
        probe.data_mut()[k] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(Tensor::from_parts(image.shape().to_vec(), out))
}

/// Piecewise-linear region signature: ReLU masks and max-pool argmaxes.
/// Two inputs with equal signatures lie in the same linear region.
pub fn activation_signature(model: &Model, image: &Tensor) -> Result<Vec<u32>> {
    let trace = model.trace(image)?;
    let mut sig = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        match &layer.kind {
            LayerKind::Relu => sig.extend(trace[i].data().iter().map(|&v| (v > 0.0) as u32)),
            LayerKind::MaxPool { window, stride } => {
                let ones = Tensor::filled(trace[i + 1].shape(), 1.0);
                let routed = ops::max_pool2d_backward(&ones, &trace[i], *window, *stride)?;
                sig.extend(
                    routed
                        .data()
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(j, _)| j as u32),
                );
            }
            _ => {}
        }
    }
    Ok(sig)
}

/// Smallest |pre-activation| over every ReLU input in the network.
pub fn min_relu_margin(model: &Model, image: &Tensor) -> Result<f64> {
    let trace = model.trace(image)?;
    Ok(model
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind == LayerKind::Relu)
        .flat_map(|(i, _)| trace[i].data().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min))
}
