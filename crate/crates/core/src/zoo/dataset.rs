use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::pgm;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub tensor: Tensor,
}

/// Grayscale images in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Sample>,
    pub labels: Vec<usize>,
    pub generator_seed: u64,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.images.iter().map(|s| s.tensor.clone()).collect()
    }

    pub fn find(&self, image_id: &str) -> Option<&Sample> {
        self.images.iter().find(|s| s.image_id == image_id)
    }

    /// Writes one PGM per image plus `labels.csv` (image_id,label).
    pub fn export_pgm(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from("image_id,label\n");
        for (sample, label) in self.images.iter().zip(&self.labels) {
            let [_, h, w] = *sample.tensor.shape() else {
                unreachable!("dataset images are [1,H,W]")
            };
            pgm::write_pgm(&dir.join(format!("{}.pgm", sample.image_id)), w, h, sample.tensor.data())?;
            manifest.push_str(&format!("{},{}\n", sample.image_id, label));
        }
        let path = dir.join("labels.csv");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }
}

fn draw(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let fg = rng.gen_range(0.7..1.0);
    let mut img = vec![0.0; size * size];
    match class {
        // bars with period 4 and random phase: rows for class 0, columns for 1
        0 | 1 => {
            let phase = rng.gen_range(0..4);
            for y in 0..size {
                for x in 0..size {
                    let coord = if class == 0 { y } else { x };
                    if (coord + phase) % 4 < 2 {
                        img[y * size + x] = fg;
                    }
                }
            }
        }
        // filled disc
        2 => {
            let cx = s / 2.0 + rng.gen_range(-2.0..2.0);
            let cy = s / 2.0 + rng.gen_range(-2.0..2.0);
            let r = s / 4.0 + rng.gen_range(-1.0..1.0);
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        img[y * size + x] = fg;
                    }
                }
            }
        }
        // hollow square
        _ => {
            let half = size / 4 + rng.gen_range(0..2);
            let jitter = (size / 8).max(1) as isize;
            let cx = (size / 2) as isize + rng.gen_range(-jitter..=jitter);
            let cy = (size / 2) as isize + rng.gen_range(-jitter..=jitter);
            let (x0, x1) = (cx - half as isize, cx + half as isize - 1);
            let (y0, y1) = (cy - half as isize, cy + half as isize - 1);
            for y in y0.max(0)..=y1.min(size as isize - 1) {
                for x in x0.max(0)..=x1.min(size as isize - 1) {
                    if x == x0 || x == x1 || y == y0 || y == y1 {
                        img[y as usize * size + x as usize] = fg;
                    }
                }
            }
        }
    }
    for v in img.iter_mut() {
        let noise: f64 = rng.gen_range(-0.1..0.1);
        *v = (*v + noise).clamp(0.0, 1.0);
    }
    img
}

/// Procedural shape/stripe images. Class 0 horizontal bars, 1 vertical
/// bars, 2 filled disc, 3 hollow square; labels cycle so classes stay
/// balanced within one.
pub fn generate_synthetic_dataset(
    num_images: usize,
    image_size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_images == 0 {
        return Err(Error::invalid("num_images must be >= 1"));
    }
    if image_size < 8 {
        return Err(Error::invalid("image_size must be >= 8"));
    }
    if !(2..=4).contains(&num_classes) {
        return Err(Error::invalid("num_classes must be 2, 3 or 4"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(num_images);
    let mut labels = Vec::with_capacity(num_images);
    for i in 0..num_images {
        let label = i % num_classes;
        let data = draw(label, image_size, &mut rng);
        images.push(Sample {
            image_id: format!("img{i:04}"),
            tensor: Tensor::from_parts(vec![1, image_size, image_size], data),
        });
        labels.push(label);
    }
    Ok(LabeledDataset {
        images,
        labels,
        generator_seed: seed,
        num_classes,
    })
}
