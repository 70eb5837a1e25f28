//! Corruption and augmentation operators for manufacturing noisy
//! hypotheses, plus dense top-k extraction and subword resplitting.

mod config;
mod dense;
mod features;
mod subword;
mod tokens;

pub use config::CorruptionConfig;
pub use dense::{extract_dense_topk, DenseTopK};
pub use features::{mix_windows, mixup, spec_augment, FeatureMatrix, MixupBuffer, SpecAugmentConfig};
pub use subword::{SubwordModel, WORD_MARKER};
pub use tokens::{substitute_tokens, topk_sample_hypothesis};
