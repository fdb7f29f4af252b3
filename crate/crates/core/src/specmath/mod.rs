//! Symmetric linear algebra and representation-geometry diagnostics:
//! covariance splits, eigendecomposition, rank measures, projectors and
//! subspace energies.

mod covariance;
mod eig;
mod features;
mod matrix;
mod projector;
mod spectrum;

pub use covariance::{class_means, covariance_split, mean_rows, scatter_about, CovarianceSplit};
pub use eig::{sym_eig, SymEig, MAX_EIG_DIM};
pub use features::{FeatureMatrix, FEATURES_MAGIC};
pub use matrix::{dot, norm, norm_sq, Matrix};
pub use projector::{
    class_subspace, cross_term, nullspace_audit, orthogonal_energy, NullspaceAudit, OrthogonalEnergy, Projector,
};
pub use spectrum::{
    clamp_spectrum, default_k_list, effective_rank, participation_ratio, spectral_summary, variance_fraction,
    SpectralSummary, CLAMP_RTOL,
};
