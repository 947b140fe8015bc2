//! Visually grounded speech models for keyword detection, spotting and
//! localisation in untranscribed speech, including cross-lingually.
//!
//! The crate covers the whole desk-scale pipeline: corpus manifests and
//! Praat alignments ([`corpus`]), a deterministic synthetic corpus
//! generator ([`toygen`]), MFCC extraction and masking augmentation
//! ([`features`]), bag-of-words and visual-tagger supervision
//! ([`supervision`]), the four convolutional architectures ([`model`]),
//! training with dev-set model selection and warm starting ([`train`]),
//! the four localisation methods ([`localise`]), and the evaluation suite
//! ([`eval`]). The `vgsloc` binary drives everything from JSON experiment
//! configs.

pub mod corpus;
pub mod error;
pub mod features;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod supervision;
pub mod toygen;

pub mod eval;
pub mod exp;
pub mod localise;
pub mod train;

pub use error::{Error, Result};
