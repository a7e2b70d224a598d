//! Micro classifiers with hand-derived gradients: softmax regression and a
//! one-hidden-layer MLP.

mod math;
mod params;
mod train;

pub use math::{Forward, LossGrad};
pub use params::{init_params, Activation, Architecture, ModelParams, PARAMS_FORMAT_VERSION};
pub use train::{
    argmax, evaluate, features, predict, train, train_from, FeatureMap, LossTrace, Sgd,
    TrainConfig, TrainOutcome,
};
