//! Cross-modal projection into the word-vector space, zero-shot scoring,
//! and the optimizer, schedule and loss shared by both training phases.

pub mod optim;
pub mod projection;
pub mod train;

pub use optim::{adamw_step, bce_loss, bce_with_grad, lr_at, OptimizerState, TrainConfig};
pub use projection::{
    argmax_class, classify, label_matrix, score, ProjectionConfig, ProjectionParams, ScorePair,
};
pub use train::{class_aps, hold_out_classes, train_projection, ProjectionEpoch, SelectionReport};
