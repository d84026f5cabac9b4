//! The independent parameter randomization test: per-layer, per-image and
//! per-dataset sensitivity of each explainer.

mod sensitivity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, Execution};
use crate::explain::{explain, ExplainerConfig, ExplainerId, ModelTag};
use crate::metrics::{pearson, spearman, ssim_detailed, CorrelationResult, SsimParams};
use crate::nn::{Model, Tensor};
use crate::zoo::{list_parameter_layers, randomize_layer, LabeledDataset};

pub use sensitivity::{
    bootstrap_ci, dataset_sensitivity, image_sensitivity, is_sensitive_to_layer,
    is_sensitive_to_layer_with, layer_sensitivity, record_for, DatasetSensitivity,
    ImageSensitivity, SensitivityRecord, DATASET_THRESHOLD, LAYER_SSIM_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IprConfig {
    pub explainers: Vec<ExplainerId>,
    /// Layers to randomize; `None` means every parameter layer.
    pub critical_layers: Option<Vec<String>>,
    pub randomization_seed: u64,
    pub bootstrap_resamples: usize,
    pub bootstrap_level: f64,
    /// Use `ssim < 0.99` instead of `ssim <= 0.99` for the layer verdict.
    pub strict_layer_threshold: bool,
    /// Refuse models without a recorded training accuracy.
    pub require_trained: bool,
    pub ssim: SsimParams,
    pub explainer: ExplainerConfig,
}

impl Default for IprConfig {
    fn default() -> Self {
        IprConfig {
            explainers: ExplainerId::DEFAULT_SET.to_vec(),
            critical_layers: None,
            randomization_seed: 0,
            bootstrap_resamples: 1000,
            bootstrap_level: 0.90,
            strict_layer_threshold: false,
            require_trained: true,
            ssim: SsimParams::default(),
            explainer: ExplainerConfig::default(),
        }
    }
}

impl IprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.explainers.is_empty() {
            return Err(Error::Config("ipr.explainers must not be empty".into()));
        }
        let mut seen = self.explainers.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.explainers.len() {
            return Err(Error::Config("ipr.explainers contains duplicates".into()));
        }
        if let Some(layers) = &self.critical_layers {
            if layers.is_empty() {
                return Err(Error::Config("ipr.critical_layers must not be empty".into()));
            }
        }
        if !(self.bootstrap_level > 0.0 && self.bootstrap_level < 1.0) {
            return Err(Error::Config(format!(
                "ipr.bootstrap_level must be in (0, 1), got {}",
                self.bootstrap_level
            )));
        }
        if self.bootstrap_resamples < 100 {
            return Err(Error::Config("ipr.bootstrap_resamples must be >= 100".into()));
        }
        self.ssim.validate()?;
        self.explainer.validate()
    }
}

/// Replaces one layer's parameters: `(model, layer_id, seed) -> model`.
pub type Randomizer = dyn Fn(&Model, &str, u64) -> Result<Model> + Sync;

pub struct RunOptions<'a> {
    pub execution: Execution,
    pub randomizer: &'a Randomizer,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            execution: Execution::default(),
            randomizer: &randomize_layer,
        }
    }
}

/// Results of the test on one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IprRun {
    pub architecture_id: String,
    pub layers: Vec<String>,
    /// Explained class per image (the original model's prediction).
    pub classes: Vec<(String, usize)>,
    /// One entry per explainer, in configured order.
    pub datasets: Vec<DatasetSensitivity>,
    /// Explainer-major, then dataset image order.
    pub images: Vec<ImageSensitivity>,
}

impl IprRun {
    pub fn records(&self) -> impl Iterator<Item = &SensitivityRecord> {
        self.images.iter().flat_map(|i| i.per_layer.iter())
    }
}

fn resolve_layers(model: &Model, requested: &Option<Vec<String>>) -> Result<Vec<String>> {
    let all = list_parameter_layers(model);
    match requested {
        None => Ok(all),
        Some(list) => {
            if list.is_empty() {
                return Err(Error::Config("critical layer scope is empty".into()));
            }
            if let Some(bad) = list.iter().find(|l| !all.contains(l)) {
                return Err(Error::UnknownLayer(bad.clone()));
            }
            Ok(all.into_iter().filter(|l| list.contains(l)).collect())
        }
    }
}

fn wrap(explainer: ExplainerId, image_id: &str, tag: &ModelTag, e: Error) -> Error {
    Error::Explainer {
        explainer: explainer.name().to_string(),
        image_id: image_id.to_string(),
        model_tag: tag.to_string(),
        source: Box::new(e),
    }
}

pub fn run_ipr(model: &Model, dataset: &LabeledDataset, config: &IprConfig) -> Result<IprRun> {
    run_ipr_with(model, dataset, config, &RunOptions::default())
}

/// Every `(layer, image, explainer)` cell is evaluated independently with
/// `options.execution`; aggregation afterwards is sequential and ordered,
/// so the result does not depend on scheduling.
pub fn run_ipr_with(
    model: &Model,
    dataset: &LabeledDataset,
    config: &IprConfig,
    options: &RunOptions<'_>,
) -> Result<IprRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if config.require_trained && model.train_accuracy().is_none() {
        return Err(Error::invalid(format!(
            "model `{}` has no training record",
            model.architecture_id()
        )));
    }
    let exec = options.execution;
    let layers = resolve_layers(model, &config.critical_layers)?;

    let classes: Vec<usize> = map_indexed(exec, &dataset.images, |_, s| {
        model.forward(&s.tensor).map(|logits| logits.argmax())
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let pairs: Vec<(usize, ExplainerId)> = (0..dataset.len())
        .flat_map(|i| config.explainers.iter().map(move |&e| (i, e)))
        .collect();
    let map_for = |m: &Model, (i, e): (usize, ExplainerId), tag: ModelTag| -> Result<Tensor> {
        let sample = &dataset.images[i];
        explain(e, m, &sample.image_id, &sample.tensor, classes[i], &config.explainer, tag.clone())
            .map(|s| s.normalized)
            .map_err(|err| wrap(e, &sample.image_id, &tag, err))
    };
    let originals: Vec<Tensor> = map_indexed(exec, &pairs, |_, &p| map_for(model, p, ModelTag::Original))
        .into_iter()
        .collect::<Result<_>>()?;

    let randomized: Vec<Model> = map_indexed(exec, &layers, |_, id| {
        (options.randomizer)(model, id, derive_seed(config.randomization_seed, &[id]))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..layers.len())
        .flat_map(|l| (0..pairs.len()).map(move |p| (l, p)))
        .collect();
    let scores = map_indexed(exec, &cells, |_, &(l, p)| {
        let tag = ModelTag::Randomized(layers[l].clone());
        let map = map_for(&randomized[l], pairs[p], tag)?;
        ssim_detailed(&originals[p], &map, &config.ssim)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut images = Vec::with_capacity(pairs.len());
    let mut datasets = Vec::with_capacity(config.explainers.len());
    for (ei, &explainer) in config.explainers.iter().enumerate() {
        let mut per_image = Vec::with_capacity(dataset.len());
        for (i, sample) in dataset.images.iter().enumerate() {
            let p = i * config.explainers.len() + ei;
            let records = layers
                .iter()
                .enumerate()
                .map(|(l, id)| {
                    let score = scores[l * pairs.len() + p];
                    record_for(
                        &sample.image_id,
                        id,
                        explainer,
                        score.raw,
                        score.clamped,
                        config.strict_layer_threshold,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            per_image.push(image_sensitivity(records)?);
        }
        datasets.push(dataset_sensitivity(
            model.architecture_id(),
            &per_image,
            config.bootstrap_resamples,
            config.bootstrap_level,
            derive_seed(
                config.randomization_seed,
                &["bootstrap", model.architecture_id(), explainer.name()],
            ),
        )?);
        images.extend(per_image);
    }

    Ok(IprRun {
        architecture_id: model.architecture_id().to_string(),
        layers,
        classes: dataset
            .images
            .iter()
            .zip(&classes)
            .map(|(s, &c)| (s.image_id.clone(), c))
            .collect(),
        datasets,
        images,
    })
}

/// Pairwise correlations between explainers' S^I profiles across
/// architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrices {
    pub explainers: Vec<ExplainerId>,
    pub architectures: Vec<String>,
    pub spearman: Vec<Vec<CorrelationResult>>,
    pub pearson: Vec<Vec<CorrelationResult>>,
}

/// `profiles[e][a]` is the S^I of explainer `e` on architecture `a`.
pub fn cross_architecture_correlations(
    explainers: &[ExplainerId],
    architectures: &[String],
    profiles: &[Vec<f64>],
) -> Result<CorrelationMatrices> {
    if architectures.len() < 3 {
        return Err(Error::invalid(format!(
            "correlations need at least 3 architectures, got {}",
            architectures.len()
        )));
    }
    if profiles.len() != explainers.len() {
        return Err(Error::invalid("one S^I profile per explainer is required"));
    }
    for (e, row) in explainers.iter().zip(profiles) {
        if row.len() != architectures.len() {
            return Err(Error::invalid(format!(
                "explainer {e} has {} S^I values for {} architectures",
                row.len(),
                architectures.len()
            )));
        }
    }
    let build = |f: fn(&[f64], &[f64]) -> Result<CorrelationResult>| -> Result<Vec<Vec<CorrelationResult>>> {
        let k = explainers.len();
        let mut m: Vec<Vec<Option<CorrelationResult>>> = vec![vec![None; k]; k];
        for i in 0..k {
            for j in i..k {
                let r = if i == j {
                    let mut r = f(&profiles[i], &profiles[i])?;
                    r.coefficient = 1.0;
                    r.p_value = 0.0;
                    r
                } else {
                    f(&profiles[i], &profiles[j])?
                };
                m[i][j] = Some(r);
                m[j][i] = Some(r);
            }
        }
        Ok(m.into_iter().map(|row| row.into_iter().flatten().collect()).collect())
    };
    Ok(CorrelationMatrices {
        explainers: explainers.to_vec(),
        architectures: architectures.to_vec(),
        spearman: build(spearman)?,
        pearson: build(pearson)?,
    })
}
