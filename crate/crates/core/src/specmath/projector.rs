use super::covariance::CovarianceSplit;
use super::eig::sym_eig;
use super::matrix::{dot, norm_sq, Matrix};
use crate::error::{DscError, Result};

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Orthogonal projector `P = BBᵀ` onto the span of an orthonormal basis,
/// together with its complement `P_⊥ = I − P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// `d×k`, orthonormal columns.
    basis: Matrix,
}

impl Projector {
    pub fn from_basis(basis: Matrix) -> Result<Self> {
        let k = basis.cols();
        let gram = basis.transpose().matmul(&basis)?;
        let err = gram.sub(&Matrix::identity(k))?.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if err > ORTHONORMAL_TOL {
            return Err(DscError::invalid(format!("projector basis is not orthonormal (err {err:.2e})")));
        }
        Ok(Projector { basis })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    /// Coordinates `Bᵀz` in the subspace basis.
    pub fn coords(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.basis.tr_mat_vec(z)
    }

    /// `Pz`
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        let c = self.coords(z)?;
        self.basis.mat_vec(&c)
    }

    /// `P_⊥z`
    pub fn complement(&self, z: &[f64]) -> Result<Vec<f64>> {
        let p = self.project(z)?;
        Ok(z.iter().zip(&p).map(|(a, b)| a - b).collect())
    }

    /// `‖P_⊥z‖²`
    pub fn complement_energy(&self, z: &[f64]) -> Result<f64> {
        Ok(norm_sq(&self.complement(z)?))
    }

    /// Dense `d×d` matrix of `P`.
    pub fn matrix(&self) -> Matrix {
        self.basis.matmul(&self.basis.transpose()).expect("basis shapes agree")
    }

    /// Dense `d×d` matrix of `P_⊥`.
    pub fn complement_matrix(&self) -> Matrix {
        Matrix::identity(self.ambient_dim()).sub(&self.matrix()).expect("square")
    }
}

/// Top-`k` eigenvectors of the total covariance.
pub fn class_subspace(split: &CovarianceSplit, k: usize) -> Result<Projector> {
    let d = split.dim();
    if k == 0 || k > d {
        return Err(DscError::invalid(format!("subspace dimension {k} outside [1, {d}]")));
    }
    let eig = sym_eig(&split.sigma_total)?;
    Projector::from_basis(eig.vectors.leading_cols(k))
}

/// Per-row `‖P_⊥z‖²` and their mean (the tail-energy plug-in).
#[derive(Debug, Clone)]
pub struct OrthogonalEnergy {
    pub per_row: Vec<f64>,
    pub mean: f64,
}

pub fn orthogonal_energy(feats: &Matrix, p: &Projector) -> Result<OrthogonalEnergy> {
    if feats.cols() != p.ambient_dim() {
        return Err(DscError::DimensionMismatch { expected: p.ambient_dim(), got: feats.cols() });
    }
    let per_row = (0..feats.rows())
        .map(|i| p.complement_energy(feats.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let mean = if per_row.is_empty() { 0.0 } else { per_row.iter().sum::<f64>() / per_row.len() as f64 };
    Ok(OrthogonalEnergy { per_row, mean })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullspaceAudit {
    pub id_mean: f64,
    pub ood_mean: f64,
    pub separated: bool,
}

/// Compare mean null-space energy of ID and OOD features.
pub fn nullspace_audit(id: &Matrix, ood: &Matrix, p: &Projector) -> Result<NullspaceAudit> {
    if id.rows() == 0 || ood.rows() == 0 {
        return Err(DscError::invalid("nullspace_audit needs nonempty ID and OOD sets"));
    }
    let id_mean = orthogonal_energy(id, p)?.mean;
    let ood_mean = orthogonal_energy(ood, p)?.mean;
    Ok(NullspaceAudit { id_mean, ood_mean, separated: ood_mean > id_mean })
}

/// `⟨Pz, P_⊥z⟩`, zero up to round-off.
pub fn cross_term(p: &Projector, z: &[f64]) -> Result<f64> {
    Ok(dot(&p.project(z)?, &p.complement(z)?))
}
