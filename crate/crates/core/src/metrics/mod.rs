//! Map similarity and correlation statistics.

mod correlation;
mod ssim;

pub use correlation::{pearson, significance_stars, spearman, CorrelationMethod, CorrelationResult};
pub use ssim::{perceived_similarity_bucket, ssim, ssim_detailed, SimilarityBucket, SsimParams, SsimScore};
