use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::nn::{InitScheme, LayerDescriptor, LayerKind, Model, Tensor};

/// Architecture ids accepted by [`build_architecture`].
pub const ARCHITECTURES: [&str; 3] = ["toy-seq-3", "toy-seq-5", "toy-res-4"];

fn relu(id: &str) -> LayerDescriptor {
    LayerDescriptor::plain(id, LayerKind::Relu)
}

fn pool(id: &str) -> LayerDescriptor {
    LayerDescriptor::plain(id, LayerKind::MaxPool { window: 2, stride: 2 })
}

fn conv3x3(id: &str, cin: usize, cout: usize) -> LayerDescriptor {
    LayerDescriptor::conv(id, cin, cout, 3, 1, 1)
}

fn layout(architecture_id: &str, image_size: usize, num_classes: usize) -> Result<Vec<LayerDescriptor>> {
    // two 2x2 pools in every architecture
    let flat = 8 * (image_size / 4) * (image_size / 4);
    let flatten = LayerDescriptor::plain("flatten", LayerKind::Flatten);
    let layers = match architecture_id {
        "toy-seq-3" => vec![
            conv3x3("conv1", 1, 4),
            relu("relu1"),
            pool("pool1"),
            conv3x3("conv2", 4, 8),
            relu("relu2"),
            pool("pool2"),
            conv3x3("conv3", 8, 8),
            relu("relu3"),
            flatten,
            LayerDescriptor::dense("fc", flat, num_classes),
        ],
        "toy-seq-5" => vec![
            conv3x3("conv1", 1, 4),
            relu("relu1"),
            conv3x3("conv2", 4, 4),
            relu("relu2"),
            pool("pool1"),
            conv3x3("conv3", 4, 8),
            relu("relu3"),
            conv3x3("conv4", 8, 8),
            relu("relu4"),
            pool("pool2"),
            conv3x3("conv5", 8, 8),
            relu("relu5"),
            flatten,
            LayerDescriptor::dense("fc", flat, num_classes),
        ],
        "toy-res-4" => vec![
            conv3x3("conv1", 1, 4),
            relu("relu1"),
            pool("pool1"),
            conv3x3("conv2", 4, 8),
            relu("relu2"),
            conv3x3("conv3", 8, 8),
            relu("relu3"),
            conv3x3("conv4", 8, 8),
            LayerDescriptor::plain(
                "skip",
                LayerKind::ResidualAdd {
                    skip_from: "relu2".into(),
                },
            ),
            relu("relu4"),
            pool("pool2"),
            flatten,
            LayerDescriptor::dense("fc", flat, num_classes),
        ],
        other => return Err(Error::UnknownArchitecture(other.to_string())),
    };
    Ok(layers)
}

pub(crate) fn draw_parameters(layer: &LayerDescriptor, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let bound = 1.0 / (layer.fan_in().max(1) as f64).sqrt();
    layer
        .param_shapes
        .iter()
        .zip(&layer.init_scheme)
        .map(|(shape, scheme)| {
            let mut t = Tensor::zeros(shape);
            if *scheme == InitScheme::UniformFanIn {
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            t
        })
        .collect()
}

/// Builds an untrained model with parameters drawn from each layer's
/// init scheme. Inputs are `[1, image_size, image_size]`.
pub fn build_architecture(
    architecture_id: &str,
    image_size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model> {
    if image_size < 8 || !image_size.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "image_size must be a multiple of 4 and at least 8, got {image_size}"
        )));
    }
    let layers = layout(architecture_id, image_size, num_classes)?;
    let mut params = BTreeMap::new();
    for layer in layers.iter().filter(|l| l.kind.has_parameters()) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[architecture_id, &layer.layer_id]));
        params.insert(layer.layer_id.clone(), draw_parameters(layer, &mut rng));
    }
    Model::new(
        architecture_id,
        layers,
        params,
        vec![1, image_size, image_size],
        num_classes,
        seed,
    )
}

/// Ids of the weight-bearing (conv and dense) layers, in network order.
pub fn list_parameter_layers(model: &Model) -> Vec<String> {
    model
        .layers()
        .iter()
        .filter(|l| l.kind.has_parameters())
        .map(|l| l.layer_id.clone())
        .collect()
}

/// Copy of `model` with one layer's weight and bias re-drawn from its init
/// scheme; every other layer keeps its parameters.
pub fn randomize_layer(model: &Model, layer_id: &str, seed: u64) -> Result<Model> {
    let layer = model
        .layers()
        .iter()
        .find(|l| l.layer_id == layer_id && l.kind.has_parameters())
        .ok_or_else(|| Error::UnknownLayer(layer_id.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.with_layer_parameters(layer_id, draw_parameters(layer, &mut rng))
}
