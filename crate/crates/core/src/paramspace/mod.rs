//! Minimal dense-network engine over flat parameter vectors.

mod layout;
mod network;
mod optim;
mod vector;

pub use layout::{Activation, ClassId, NetworkSpec, ParamLayout, Segment, HEAD_BIAS, HEAD_WEIGHT};
pub use network::{
    build_network, build_network_for_classes, evaluate, evaluate_accuracy, expand_head, features,
    forward, loss_and_grad, per_example_grads, Batch, Evaluation, HeadInit,
};
pub use optim::{adam_step, sgd_step, OptimizerKind, OptimizerState, TrainConfig};
pub use vector::{GradientVector, ParamVector};

#[allow(unused_imports)]
pub(crate) use vector::dot;
