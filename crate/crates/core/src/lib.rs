//! Geography-aware speech decoding toolkit.
//!
//! A province-level language model is selected from the user's location and
//! interpolated with a baseline model on the fly, during first-pass WFST
//! decoding and again in n-best rescoring.

pub mod ngram;
pub mod wfst;
pub mod evalkit;
pub mod georegistry;
pub mod graph;
pub mod decoder;
pub mod rescore;
pub mod amsim;
pub mod geoam_toy;
pub mod pipeline;
