//! MLP student, cross-entropy and teacher-guided objectives, training.

pub mod model;
pub mod train;

pub use model::{ce_loss, Architecture, Dense, ForwardCache, MlpStudent, STUDENT_MAGIC};
pub use train::{
    batch_loss_grad, geometry_point, tgt_step, train, GeometryPoint, GeometryTrace, LossBreakdown, Probe, Sgd,
    TrainConfig, TrainOutcome, TrainSet,
};

#[cfg(test)]
mod tests;
