//! Training, evaluation, cross-validation, ablation, gradient checking, and
//! checkpointing.

pub mod ablate;
pub mod checkpoint;
pub mod eval;
pub mod gradcheck;
pub mod kfold;
pub mod optim;
pub mod train;
