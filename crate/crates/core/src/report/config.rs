use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::IprConfig;
use crate::nn::TrainConfig;
use crate::zoo::ARCHITECTURES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Images the explainers are evaluated on.
    pub num_images: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Size of the separate training set drawn from the same generator.
    pub train_images: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_images: 20,
            image_size: 16,
            num_classes: 2,
            seed: 0,
            train_images: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub architectures: Vec<String>,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub ipr: IprConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architectures: vec!["toy-seq-3".into(), "toy-res-4".into()],
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            ipr: IprConfig::default(),
            output_dir: PathBuf::from("ipr-out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::Config("architectures must not be empty".into()));
        }
        for (i, a) in self.architectures.iter().enumerate() {
            if !ARCHITECTURES.contains(&a.as_str()) {
                return Err(Error::UnknownArchitecture(a.clone()));
            }
            if self.architectures[..i].contains(a) {
                return Err(Error::Config(format!("architecture `{a}` listed twice")));
            }
        }
        let d = &self.dataset;
        if d.num_images == 0 || d.train_images == 0 {
            return Err(Error::Config("dataset.num_images and dataset.train_images must be >= 1".into()));
        }
        if d.image_size < 8 || !d.image_size.is_multiple_of(4) {
            return Err(Error::Config("dataset.image_size must be a multiple of 4 and >= 8".into()));
        }
        if d.image_size < self.ipr.ssim.window_size {
            return Err(Error::Config(format!(
                "dataset.image_size {} is smaller than the SSIM window {}",
                d.image_size, self.ipr.ssim.window_size
            )));
        }
        if !(2..=4).contains(&d.num_classes) {
            return Err(Error::Config("dataset.num_classes must be 2, 3 or 4".into()));
        }
        let grid = (self.ipr.explainer.lime_segments as f64).sqrt().round() as usize;
        if grid > d.image_size {
            return Err(Error::Config("ipr.explainer.lime_segments exceeds the image".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must not be empty".into()));
        }
        self.train.validate()?;
        self.ipr.validate()
    }
}

/// Parses and validates a JSON config. Parse errors quote the offending line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| {
        let line = e.line();
        let source = text.lines().nth(line.saturating_sub(1)).unwrap_or("").trim();
        Error::Config(format!(
            "line {line}, column {}: {e}\n  {line} | {source}",
            e.column()
        ))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
