//! Weakly supervised phrase grounding over precomputed region proposals.
//!
//! Given an image's proposal set (boxes, visual features, classifier
//! distributions) and a natural-language query, the model attends over
//! proposals to localize the mentioned object. Training uses no
//! region-query labels: it is driven by reconstructing the query from
//! attention-pooled visual features (language consistency), regressing
//! gated proposals' own location parameters (visual consistency), and an
//! external-knowledge gate that scores each proposal's predicted class
//! name against the query's noun words.

pub mod autodiff;
pub mod nn;
pub mod error;

pub use error::{Error, Result};
