//! Laboratory for domain-sensitivity collapse in single-domain students.
//!
//! The crate bundles the pieces needed to induce the collapse in a small
//! supervised network, repair it with a teacher-guided auxiliary loss, score
//! out-of-distribution inputs post hoc, and check the geometric failure
//! bounds numerically:
//!
//! * [`specmath`]: covariance splits, Jacobi eigensolver, effective rank,
//!   participation ratio, projectors and null-space energies.
//! * [`scorers`]: MSP, energy, Mahalanobis, kNN, ViM, ReAct, SCALE, NCI,
//!   whitening and teacher-space Mahalanobis, all oriented "higher = ID".
//! * [`metrics`]: FPR at a target TPR, AUROC, AUPR and 1-D Wasserstein-1.
//! * [`residual`]: class-suppressed teacher residuals and the cosine
//!   domain loss.
//! * [`student`]: the MLP student with manual backprop and its training loop.
//! * [`synthgen`]: synthetic single-domain data, the frozen synthetic
//!   teacher and the linear toy.
//! * [`bounds`]: plug-in estimates of the distance and logit failure bounds.
//! * [`harness`]: config parsing, the experiment grid and report emission.

pub mod bounds;
pub mod container;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod residual;
pub mod rng;
pub mod scorers;
pub mod specmath;
pub mod student;
pub mod synthgen;

pub use error::{DscError, Result};
pub use specmath::{FeatureMatrix, Matrix, Projector, SpectralSummary};
