//! Dense classifier with exact gradients, Nesterov SGD and a cosine schedule.

mod grad;
pub mod io;
mod network;
mod optim;
mod train;

pub use grad::{grad, loss, Batches};

pub use network::{
    accumulate, backward, forward, forward_with, log_sigmoid, log_softmax_row, logsumexp, sigmoid, softmax,
    softmax_row, Activation, Batch, BranchHead, ForwardPass, NetworkParams, SegmentedBatch,
};

pub use optim::{cosine_lr, sgd_step, OptimizerState, SgdConfig};
pub use train::{run_sgd, train_classifier, TrainHistory, TrainSettings};
