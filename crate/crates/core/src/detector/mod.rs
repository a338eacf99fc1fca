//! A toy single-stage voxel detector.
//!
//! Per occupied voxel, a shared two-layer tanh perceptron embeds each
//! (sampled) point in voxel-center-relative coordinates, an elementwise max
//! pools the embeddings into a voxel feature, and a two-layer head maps the
//! feature concatenated with the normalized voxel-center position to class
//! logits and box outputs. The whole network can be built on autodiff nodes
//! so loss gradients flow to every input point coordinate.

mod arch;
mod infer;
mod loss;
mod network;
mod snapshot;
mod train;

pub use arch::{ArchConfig, DetectorParams, BOX_OUTPUTS, N_LOGITS, POINT_CHANNELS};
pub use infer::{infer, infer_on_voxel_set, VoxelizeOpts};
pub use loss::{
    build_location_loss, build_total_loss, class_diagonal, encode_box_targets, fold_yaw,
    positive_targets, BuiltLoss, LossOpts, TargetRow,
};
pub use network::{
    build_forward_graph, encode_voxel, forward_values, GraphForward, Prediction, PredictionRow,
};
pub use snapshot::{load_snapshot, loss_curve_csv, save_snapshot};
pub use train::{
    train, train_on_prepared, train_on_prepared_with, DetectorSnapshot, GraphReuse, LossCurve,
    LossRow, LrSchedule, OptimizerKind, Stage, TrainConfig,
};

pub use crate::metrics::Detection;
