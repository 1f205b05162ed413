//! Reverse-mode autodiff engine and the two reconstruction networks.
//!
//! The engine records forward operations on a [`Tape`] and replays them in
//! reverse to accumulate gradients. Everything is plain `f64`; there is no
//! SIMD or GPU path. Networks rebuild their graph every step, so parameters
//! live outside the tape as [`Tensor`] values and are re-registered as leaves
//! each forward pass.

mod adam;
mod checkpoint;
mod msnn;
mod rfb;
mod tape;
mod train;

pub use adam::{AdamState, OptimConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
pub use msnn::{
    msnn_loss, split_density_on_tape, MsModel, MsOutput, SensingTables, SplitMasks, MSNN_ALPHA,
    SPLIT_TRACE_FLOOR,
};
pub use rfb::{
    rfb_loss, reconstruct_from_output, RfbModel, RfbOutput, IM_COLUMNS, RE_COLUMNS, RFB_CLASSES,
    RFB_DROPOUT, RFB_FEATURES, RFB_NOISE_SIGMA, RFB_TRUNK,
};
pub use tape::{
    BatchNormState, Gradients, NodeId, Tape, Tensor, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM,
    LEAKY_SLOPE,
};
pub use train::{
    evaluate_msnn, evaluate_rfb, msnn_reconstruct_one, msnn_validation_loss, rfb_reconstruct_one,
    rfb_validation_loss, train_msnn, train_msnn_with, train_rfb, train_rfb_with, EpochStats,
    MsEval, MsSample, RfbEval, RfbSample, TrainConfig, TrainReport,
};
