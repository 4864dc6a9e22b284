//! Preprocessing: alignment tables, audio segmentation, MFCC extraction,
//! padded segment stacks, synthetic data, and manifest-driven dataset prep.

pub mod alignment;
pub mod audio;
pub mod dataset;
pub mod mfcc;
pub mod segments;
pub mod synth;
