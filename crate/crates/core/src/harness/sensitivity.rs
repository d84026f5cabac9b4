use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::stable_mean;
use crate::explain::ExplainerId;

/// A layer counts as influential when SSIM drops to this value or below.
pub const LAYER_SSIM_THRESHOLD: f64 = 0.99;
/// Minimum S^I for an explainer to pass on a dataset.
pub const DATASET_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub image_id: String,
    pub layer_id: String,
    pub explainer: ExplainerId,
    pub ssim_raw: f64,
    pub ssim: f64,
    pub layer_sensitivity: f64,
    pub sensitive_to_layer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSensitivity {
    pub image_id: String,
    pub explainer: ExplainerId,
    pub per_layer: Vec<SensitivityRecord>,
    #[serde(rename = "s_i")]
    pub score: f64,
    pub sensitive_to_image: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSensitivity {
    pub explainer: ExplainerId,
    pub architecture_id: String,
    #[serde(rename = "s_I")]
    pub score: f64,
    pub sensitive_to_dataset: bool,
    pub ci90: (f64, f64),
    pub num_images: usize,
    pub num_layers: usize,
}

fn check_unit(ssim: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ssim) {
        Ok(())
    } else {
        Err(Error::invalid(format!("SSIM {ssim} is outside [0, 1]")))
    }
}

pub fn layer_sensitivity(ssim: f64) -> Result<f64> {
    check_unit(ssim)?;
    Ok(1.0 - ssim)
}

pub fn is_sensitive_to_layer(ssim: f64) -> bool {
    ssim <= LAYER_SSIM_THRESHOLD
}

/// `strict` switches the verdict to `ssim < 0.99`.
pub fn is_sensitive_to_layer_with(ssim: f64, strict: bool) -> bool {
    if strict {
        ssim < LAYER_SSIM_THRESHOLD
    } else {
        is_sensitive_to_layer(ssim)
    }
}

pub fn record_for(
    image_id: &str,
    layer_id: &str,
    explainer: ExplainerId,
    ssim_raw: f64,
    ssim: f64,
    strict: bool,
) -> Result<SensitivityRecord> {
    Ok(SensitivityRecord {
        image_id: image_id.to_string(),
        layer_id: layer_id.to_string(),
        explainer,
        ssim_raw,
        ssim,
        layer_sensitivity: layer_sensitivity(ssim)?,
        sensitive_to_layer: is_sensitive_to_layer_with(ssim, strict),
    })
}

/// Mean layer sensitivity of one image; sensitive only if every layer is.
pub fn image_sensitivity(records: Vec<SensitivityRecord>) -> Result<ImageSensitivity> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("image sensitivity needs at least one layer record"))?;
    let (image_id, explainer) = (first.image_id.clone(), first.explainer);
    if let Some(r) = records
        .iter()
        .find(|r| r.image_id != image_id || r.explainer != explainer)
    {
        return Err(Error::invalid(format!(
            "mixed records: ({image_id}, {explainer}) and ({}, {})",
            r.image_id, r.explainer
        )));
    }
    let mut layers: Vec<&str> = records.iter().map(|r| r.layer_id.as_str()).collect();
    layers.sort_unstable();
    if layers.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate layer records for {image_id}")));
    }
    let values: Vec<f64> = records.iter().map(|r| r.layer_sensitivity).collect();
    Ok(ImageSensitivity {
        score: stable_mean(&values),
        sensitive_to_image: records.iter().all(|r| r.sensitive_to_layer),
        image_id,
        explainer,
        per_layer: records,
    })
}

/// Mean image sensitivity with its bootstrap interval.
pub fn dataset_sensitivity(
    architecture_id: &str,
    per_image: &[ImageSensitivity],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<DatasetSensitivity> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::invalid("dataset sensitivity needs at least one image"))?;
    if per_image.iter().any(|i| i.explainer != first.explainer) {
        return Err(Error::invalid("dataset sensitivity mixes explainers"));
    }
    let values: Vec<f64> = per_image.iter().map(|i| i.score).collect();
    let score = stable_mean(&values);
    let (lo, hi) = bootstrap_ci(&values, resamples, level, seed)?;
    Ok(DatasetSensitivity {
        explainer: first.explainer,
        architecture_id: architecture_id.to_string(),
        score,
        sensitive_to_dataset: score >= DATASET_THRESHOLD,
        // the percentile interval can miss the mean by a hair on tiny samples
        ci90: (lo.min(score), hi.max(score)),
        num_images: per_image.len(),
        num_layers: first.per_layer.len(),
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() || frac == 0.0 {
        sorted[i.min(sorted.len() - 1)]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one value"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("bootstrap level {level} is outside (0, 1)")));
    }
    if resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut sample = vec![0.0; n];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = values[rng.gen_range(0..n)];
            }
            stable_mean(&sample)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}
