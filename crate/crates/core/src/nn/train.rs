use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ReluBackwardMode, Tensor};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Minimum training-set accuracy; below it training is reported as failed.
    pub accuracy_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 10,
            seed: 1,
            accuracy_floor: 0.95,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            return Err(Error::Config("train.accuracy_floor must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Labelled examples borrowed for training.
pub struct Examples<'a> {
    pub images: &'a [Tensor],
    pub labels: &'a [usize],
}

pub fn accuracy(model: &Model, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in images.iter().zip(labels) {
        if model.forward(x)?.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

fn softmax_xent_grad(logits: &Tensor, label: usize) -> (f64, Tensor) {
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits.data()[label] - max);
    let mut g: Vec<f64> = exps.iter().map(|e| e / z).collect();
    g[label] -= 1.0;
    (loss, Tensor::from_parts(logits.shape().to_vec(), g))
}

/// Mini-batch SGD on softmax cross-entropy.
pub fn train(model: &Model, data: Examples<'_>, config: &TrainConfig) -> Result<Model> {
    train_with(model, data, config, Execution::default())
}

pub fn train_with(
    model: &Model,
    data: Examples<'_>,
    config: &TrainConfig,
    exec: Execution,
) -> Result<Model> {
    if data.images.is_empty() || data.images.len() != data.labels.len() {
        return Err(Error::invalid("training set must be non-empty with one label per image"));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::InvalidClass {
            index: bad,
            num_classes: model.num_classes(),
        });
    }
    if config.epochs == 0 {
        return Ok(model.clone());
    }
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.images.len()).collect();
    let mut current = model.clone();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads = map_indexed(exec, batch, |_, &idx| -> Result<BTreeMap<String, Vec<Tensor>>> {
                let trace = current.trace(&data.images[idx])?;
                let (_, seed) = softmax_xent_grad(trace.last().unwrap(), data.labels[idx]);
                Ok(current
                    .backward(&trace, seed, ReluBackwardMode::Standard, None, true)?
                    .parameters)
            });
            let mut total: Option<BTreeMap<String, Vec<Tensor>>> = None;
            for g in grads {
                let g = g?;
                match &mut total {
                    None => total = Some(g),
                    Some(acc) => {
                        for (k, ts) in g {
                            for (a, t) in acc.get_mut(&k).unwrap().iter_mut().zip(&ts) {
                                a.add_assign(t);
                            }
                        }
                    }
                }
            }
            let total = total.expect("batch is non-empty");
            let step = config.learning_rate / batch.len() as f64;
            let mut params = current.parameters().clone();
            for (k, ts) in params.iter_mut() {
                for (p, g) in ts.iter_mut().zip(&total[k]) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= step * gv;
                    }
                }
            }
            if params.values().flatten().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::TrainingFailed {
                    accuracy: 0.0,
                    floor: config.accuracy_floor,
                    epochs: config.epochs,
                });
            }
            current = current.with_all_parameters(params);
        }
    }
    let acc = accuracy(&current, data.images, data.labels)?;
    if acc < config.accuracy_floor {
        return Err(Error::TrainingFailed {
            accuracy: acc,
            floor: config.accuracy_floor,
            epochs: config.epochs,
        });
    }
    Ok(current.set_training(config.seed, Some(acc)))
}
