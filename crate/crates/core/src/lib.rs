//! CTC decoding with external language-model and denoising-language-model
//! fusion, with exact reference kernels and evaluation tooling.
//!
//! All scores are natural-log probabilities. The CTC blank is the last
//! column of a lattice, one past the vocabulary.

pub mod augment;
pub mod channel;
pub mod ctc;
pub mod decoders;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod math;
pub mod metrics;
pub mod nbest;
pub mod scorers;
pub mod search;
pub mod testing;
pub mod vocab;

pub use error::{Error, Result};
pub use lattice::PosteriorLattice;
pub use nbest::{Channel, ChannelScores, NBestList, Scales, ScoredHyp};
pub use vocab::{Token, Vocabulary};
