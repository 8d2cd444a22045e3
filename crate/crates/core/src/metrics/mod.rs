//! Gesture realism, beat alignment and diversity metrics.

mod beat;
mod diversity;
mod extractor;
mod fgd;

pub use beat::{
    angular_speed, audio_beats, beat_consistency, beat_consistency_at, kinematic_beats, BeatConfig,
};
pub use diversity::{diversity, DEFAULT_PAIRS};
pub use extractor::{ExtractorConfig, FeatureExtractor};
pub use fgd::{
    fgd, fgd_from_latents, frechet_distance, matrix_sqrt_psd, GaussianSummary, COVARIANCE_JITTER,
};

use serde::{Deserialize, Serialize};

/// The evaluation report written by `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fgd: f64,
    pub bc: f64,
    pub diversity: f64,
    pub clips: usize,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub corpus_hash: String,
    pub extractor_hash: String,
}
