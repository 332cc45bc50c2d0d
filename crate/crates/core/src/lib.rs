//! Spline-parameterised Kolmogorov-Arnold networks that grow by stacking
//! residual blocks when the validation curves signal overfitting, plus the
//! synthetic volumetric data and segmentation metrics used to train and
//! evaluate them.

// Validation uses `!(a < b)` on floats on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod controller;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod spline;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use controller::{
    detect_accuracy_decline, detect_plateau, next_hyperparameters, run_progressive_training, should_add_block,
    HyperParams, ModelConfig, StackingPolicy, TrainingHistory, TrainingOutcome,
};
pub use error::{Error, Result};
pub use metrics::{dice, hausdorff, miou, voxel_accuracy, BinaryMask};
pub use network::{GradientSet, KanBlock, KanLayer, ProKanNetwork};
pub use spline::{bspline_basis, make_uniform_knots, KnotVector, SplineFunction};
pub use training::{LossConfig, OptimizerState, Sample};
