//! Toy architectures, independent single-layer randomization, synthetic
//! data, and model persistence.

mod architectures;
mod dataset;
mod format;

pub use architectures::{
    build_architecture, list_parameter_layers, randomize_layer, ARCHITECTURES,
};
pub use dataset::{generate_synthetic_dataset, LabeledDataset, Sample};
pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
