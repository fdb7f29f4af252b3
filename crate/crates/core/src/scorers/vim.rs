use super::head::{logsumexp, Head};
use super::ScoreVector;
use crate::error::{DscError, Result};
use crate::specmath::{mean_rows, norm, scatter_about, sym_eig, Matrix, Projector};

/// Virtual-logit state: principal subspace of centered train features and
/// the scale `α` matching residual norms to max-logits.
#[derive(Debug, Clone, PartialEq)]
pub struct VimState {
    pub mean: Vec<f64>,
    pub principal: Projector,
    pub alpha: f64,
    pub head: Head,
}

pub fn fit_vim(train: &Matrix, head: &Head, subspace_dim: usize) -> Result<VimState> {
    let d = train.cols();
    if subspace_dim == 0 || subspace_dim >= d {
        return Err(DscError::invalid(format!("ViM subspace_dim {subspace_dim} must lie in [1, {d})")));
    }
    let mean = mean_rows(train);
    let eig = sym_eig(&scatter_about(train, &mean))?;
    let principal = Projector::from_basis(eig.vectors.leading_cols(subspace_dim))?;

    let mut sum_max_logit = 0.0;
    let mut sum_residual = 0.0;
    for i in 0..train.rows() {
        let l = head.logits(train.row(i))?;
        sum_max_logit += l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        sum_residual += residual_norm(&principal, &mean, train.row(i))?;
    }
    let n = train.rows() as f64;
    let mean_residual = sum_residual / n;
    if mean_residual <= 0.0 {
        return Err(DscError::Degenerate("features fully inside subspace; ViM undefined".into()));
    }
    Ok(VimState { mean, principal, alpha: (sum_max_logit / n) / mean_residual, head: head.clone() })
}

fn residual_norm(p: &Projector, mean: &[f64], z: &[f64]) -> Result<f64> {
    let centered: Vec<f64> = z.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(norm(&p.complement(&centered)?))
}

impl VimState {
    /// `logsumexp(ℓ) − α·‖(I−P)(z − mean)‖` with explicit logits.
    pub fn score_with_logits(&self, feats: &Matrix, logits: &Matrix) -> Result<ScoreVector> {
        if logits.rows() != feats.rows() {
            return Err(DscError::DimensionMismatch { expected: feats.rows(), got: logits.rows() });
        }
        let scores = (0..feats.rows())
            .map(|i| Ok(logsumexp(logits.row(i)) - self.alpha * residual_norm(&self.principal, &self.mean, feats.row(i))?))
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::new(scores)
    }

    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        let logits = self.head.logits_matrix(feats)?;
        self.score_with_logits(feats, &logits)
    }
}
