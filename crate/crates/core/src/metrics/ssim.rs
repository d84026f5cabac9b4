use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::stable_mean;
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("ssim.{m}")));
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return fail("window_size must be odd and >= 3");
        }
        for (name, v) in [
            ("window_sigma", self.window_sigma),
            ("k1", self.k1),
            ("k2", self.k2),
            ("dynamic_range", self.dynamic_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(&format!("{name} must be > 0"));
            }
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.window_sigma.powi(2))).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimScore {
    /// Mean SSIM before clamping, in `[-1, 1]`.
    pub raw: f64,
    pub clamped: f64,
}

fn plane(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        ref s => Err(Error::shape(format!("SSIM needs a single-channel image, got {s:?}"))),
    }
}

/// Valid-position separable filter of an `h × w` plane.
fn filter(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * data[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM averaged over valid window positions.
pub fn ssim_detailed(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<SsimScore> {
    params.validate()?;
    let (h, w) = plane(a)?;
    if plane(b)? != (h, w) {
        return Err(Error::shape(format!(
            "SSIM inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if h < params.window_size || w < params.window_size {
        return Err(Error::shape(format!(
            "{h}x{w} image is smaller than the {} window",
            params.window_size
        )));
    }
    let taps = params.taps();
    let (da, db) = (a.data(), b.data());
    let sq = |d: &[f64]| d.iter().map(|v| v * v).collect::<Vec<_>>();
    let cross: Vec<f64> = da.iter().zip(db).map(|(x, y)| x * y).collect();
    let mu_a = filter(da, h, w, &taps);
    let mu_b = filter(db, h, w, &taps);
    let ea2 = filter(&sq(da), h, w, &taps);
    let eb2 = filter(&sq(db), h, w, &taps);
    let eab = filter(&cross, h, w, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let values: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = ea2[i] - ma * ma;
            let var_b = eb2[i] - mb * mb;
            let cov = eab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .collect();
    let raw = stable_mean(&values);
    Ok(SsimScore {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    ssim_detailed(a, b, params).map(|s| s.clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimilarityBucket {
    Excellent,
    Good,
    Fair,
    Poor,
    Bad,
}

/// Perceived similarity for an SSIM value in `[0, 1]`.
pub fn perceived_similarity_bucket(s: f64) -> Result<SimilarityBucket> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("SSIM {s} is outside [0, 1]")));
    }
    Ok(if s >= 0.99 {
        SimilarityBucket::Excellent
    } else if s >= 0.95 {
        SimilarityBucket::Good
    } else if s >= 0.88 {
        SimilarityBucket::Fair
    } else if s >= 0.5 {
        SimilarityBucket::Poor
    } else {
        SimilarityBucket::Bad
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::SsimParams;

    /// Direct per-window SSIM: builds the 2-D window explicitly and uses
    /// two-pass (mean first, then centered moments) statistics.
    pub fn direct_ssim(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams) -> f64 {
        let n = p.window_size;
        let c = (n / 2) as f64;
        let mut win = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                win[i * n + j] = (-d2 / (2.0 * p.window_sigma * p.window_sigma)).exp();
            }
        }
        let z: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= z);
        let c1 = (p.k1 * p.dynamic_range).powi(2);
        let c2 = (p.k2 * p.dynamic_range).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - n {
            for x in 0..=w - n {
                let at = |d: &[f64], i: usize, j: usize| d[(y + i) * w + x + j];
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        ma += win[i * n + j] * at(a, i, j);
                        mb += win[i * n + j] * at(b, i, j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                        va += win[i * n + j] * da * da;
                        vb += win[i * n + j] * db * db;
                        cov += win[i * n + j] * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }
}
