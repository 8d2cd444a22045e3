//! Co-speech gesture generation from audio, text and seed motion.
//!
//! Audio Mel patches are reprogrammed into a frozen word-embedding space and
//! fused with the transcript; audio windows and seed poses meet in a
//! spatiotemporal graph encoder over the skeleton; a bidirectional GRU
//! decodes unit direction vectors per joint, trained against a recurrent
//! discriminator. The crate also ships the synthetic corpus, the dataset
//! loader and the evaluation metrics.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod gan;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pose;
pub mod reprogram;
pub mod train;

pub use config::{HopConfig, VocabConfig};
pub use corpus::{synthesize_corpus, Corpus, SyntheticCorpusSpec};
pub use dataset::{load_clips, ClipRecord, FeatureBuilder};
pub use error::{HopError, Result};
pub use model::{Batch, ClipFeatures, HopModel};
pub use pose::{PoseSequence, Skeleton};
pub use train::{LossRecord, TrainConfig, Trainer};
