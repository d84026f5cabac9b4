use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ExplainerConfig;
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::nn::{Model, Tensor};

const LASSO_TOLERANCE: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub sweeps: usize,
}

/// Weighted L1-regularized least squares with an unpenalized intercept,
/// solved by cyclic coordinate descent. Minimizes
/// `½ Σ w̃ᵢ (yᵢ − b − xᵢ·β)² + λ‖β‖₁` with weights normalized to sum to 1.
pub fn weighted_lasso(
    rows: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    l1_strength: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<LassoFit> {
    let n = rows.len();
    if n == 0 || targets.len() != n || weights.len() != n {
        return Err(Error::invalid("lasso inputs must be non-empty and equally long"));
    }
    let p = rows[0].len();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("lasso sample weights must have positive sum"));
    }
    let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let x_mean: Vec<f64> = (0..p)
        .map(|j| rows.iter().zip(&w).map(|(r, wi)| wi * r[j]).sum())
        .collect();
    let y_mean: f64 = targets.iter().zip(&w).map(|(y, wi)| wi * y).sum();
    // column-major centered design
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| rows.iter().map(|r| r[j] - x_mean[j]).collect())
        .collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().zip(&w).map(|(v, wi)| wi * v * v).sum())
        .collect();
    let mut residual: Vec<f64> = targets.iter().map(|y| y - y_mean).collect();
    let mut beta = vec![0.0; p];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let rho: f64 = cols[j]
                .iter()
                .zip(&residual)
                .zip(&w)
                .map(|((x, r), wi)| wi * x * r)
                .sum::<f64>()
                + norms[j] * beta[j];
            let updated = soft_threshold(rho, l1_strength) / norms[j];
            let change = updated - beta[j];
            if change != 0.0 {
                for (r, x) in residual.iter_mut().zip(&cols[j]) {
                    *r -= change * x;
                }
                beta[j] = updated;
                max_change = max_change.max(change.abs());
            }
        }
        if max_change < tolerance {
            break;
        }
    }
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LassoFit {
        intercept,
        coefficients: beta,
        sweeps,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Patch index of every pixel for a `grid × grid` partition of `h × w`.
fn patch_of(h: usize, w: usize, grid: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push((y * grid / h) * grid + x * grid / w);
        }
    }
    out
}

/// Surrogate coefficients, one per patch, for the class logit.
///
/// The perturbation stream depends only on `(config.seed, image_id)`, so the
/// same masks are used for an image no matter which model is explained.
pub fn lime_coefficients(
    model: &Model,
    image_id: &str,
    image: &Tensor,
    class_index: usize,
    config: &ExplainerConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    model.class_seed(class_index)?;
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape("LIME expects a [C,H,W] image"));
    };
    let segments = config.lime_segments;
    let grid = (segments as f64).sqrt().round() as usize;
    if grid > h || grid > w {
        return Err(Error::invalid(format!(
            "{segments} LIME segments do not fit a {h}x{w} image"
        )));
    }
    let patches = patch_of(h, w, grid);
    let baseline = config.baseline.image_like(image);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["lime", image_id]));

    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(config.lime_samples);
    masks.push(vec![1.0; segments]);
    while masks.len() < config.lime_samples {
        masks.push((0..segments).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect());
    }
    if masks.iter().all(|m| m == &masks[0]) {
        return Err(Error::DegenerateDesign(format!(
            "all {} perturbation masks are identical; increase lime_samples",
            masks.len()
        )));
    }

    let plane = h * w;
    let mut targets = Vec::with_capacity(masks.len());
    let mut weights = Vec::with_capacity(masks.len());
    for mask in &masks {
        let mut data = image.data().to_vec();
        for ch in 0..c {
            for (i, &p) in patches.iter().enumerate() {
                if mask[p] == 0.0 {
                    data[ch * plane + i] = baseline.data()[ch * plane + i];
                }
            }
        }
        let perturbed = Tensor::from_parts(image.shape().to_vec(), data);
        targets.push(model.forward(&perturbed)?.data()[class_index]);
        let kept: f64 = mask.iter().sum();
        // cosine similarity to the all-ones mask is sqrt(kept / segments)
        let distance = 1.0 - (kept / segments as f64).sqrt();
        weights.push((-(distance * distance) / config.lime_kernel_width.powi(2)).exp());
    }
    let fit = weighted_lasso(
        &masks,
        &targets,
        &weights,
        config.lime_l1_strength,
        LASSO_TOLERANCE,
        LASSO_MAX_SWEEPS,
    )?;
    Ok(fit.coefficients)
}

/// Each pixel (in every channel) gets its patch's surrogate coefficient.
pub fn explain_lime(
    model: &Model,
    image_id: &str,
    image: &Tensor,
    class_index: usize,
    config: &ExplainerConfig,
) -> Result<Tensor> {
    let coef = lime_coefficients(model, image_id, image, class_index, config)?;
    let [c, h, w] = *image.shape() else {
        unreachable!("checked in lime_coefficients")
    };
    let grid = (config.lime_segments as f64).sqrt().round() as usize;
    let patches = patch_of(h, w, grid);
    let plane: Vec<f64> = patches.iter().map(|&p| coef[p]).collect();
    let data = (0..c).flat_map(|_| plane.iter().copied()).collect();
    Ok(Tensor::from_parts(image.shape().to_vec(), data))
}
