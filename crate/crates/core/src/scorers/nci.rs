use super::head::{argmax, Head};
use super::ScoreVector;
use crate::error::{DscError, Result};
use crate::specmath::{dot, mean_rows, norm, Matrix};

pub const DEFAULT_NCI_GAMMA: f64 = 0.1;

/// Alignment of the centred feature with the predicted class weight, plus
/// a norm term relative to the mean training norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NciState {
    pub mean: Vec<f64>,
    pub mean_norm: f64,
    pub gamma: f64,
    pub head: Head,
}

pub fn fit_nci(train: &Matrix, head: &Head, gamma: f64) -> Result<NciState> {
    if head.dim() != train.cols() {
        return Err(DscError::DimensionMismatch { expected: head.dim(), got: train.cols() });
    }
    let mean_norm = (0..train.rows()).map(|i| norm(train.row(i))).sum::<f64>() / train.rows().max(1) as f64;
    if !(mean_norm > 0.0) {
        return Err(DscError::Degenerate("NCI needs nonzero training feature norms".into()));
    }
    Ok(NciState { mean: mean_rows(train), mean_norm, gamma, head: head.clone() })
}

impl NciState {
    pub fn score_one(&self, z: &[f64], predicted: usize) -> f64 {
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let w = self.head.w.row(predicted);
        let denom = norm(&centered) * norm(w);
        let cos = if denom > 0.0 { dot(&centered, w) / denom } else { 0.0 };
        cos + self.gamma * norm(z) / self.mean_norm
    }

    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        let scores = (0..feats.rows())
            .map(|i| {
                let l = self.head.logits(feats.row(i))?;
                Ok(self.score_one(feats.row(i), argmax(&l)))
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::new(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> NciState {
        // Train rows (1,1) and (1,-1): mean (1,0), mean norm √2.
        let train = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let head = Head::new(Matrix::from_rows(&[vec![0.0, 3.0], vec![0.0, -1.0]]).unwrap(), vec![0.0, 0.0]).unwrap();
        fit_nci(&train, &head, DEFAULT_NCI_GAMMA).unwrap()
    }

    #[test]
    fn parallel_with_mean_norm() {
        let st = state();
        // z − μ = (0, 1) ∥ w_0 and ‖z‖ = √2 = mean norm.
        let s = st.score_one(&[1.0, 1.0], 0);
        assert!((s - (1.0 + DEFAULT_NCI_GAMMA)).abs() < 1e-12);
    }

    #[test]
    fn at_mean_cosine_vanishes() {
        let st = state();
        let s = st.score_one(&[1.0, 0.0], 0);
        assert!((s - DEFAULT_NCI_GAMMA / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn antiparallel() {
        let st = state();
        let z = [1.0, -1.0];
        let s = st.score_one(&z, 0);
        assert!((s - (-1.0 + DEFAULT_NCI_GAMMA)).abs() < 1e-12);
        // score() picks ŷ = argmax logits, here class 1 whose weight is parallel.
        let via_head = st.score(&Matrix::from_rows(&[z.to_vec()]).unwrap()).unwrap();
        assert!((via_head.as_slice()[0] - (1.0 + DEFAULT_NCI_GAMMA)).abs() < 1e-12);
    }
}
