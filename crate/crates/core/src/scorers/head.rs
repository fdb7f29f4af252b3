use crate::error::{DscError, Result};
use crate::specmath::{dot, Matrix};

/// Linear classifier head `ℓ = Wz + b`, `W` is `C×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Head {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(DscError::DimensionMismatch { expected: w.rows(), got: b.len() });
        }
        Ok(Head { w, b })
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(DscError::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        Ok((0..self.num_classes()).map(|c| dot(self.w.row(c), z) + self.b[c]).collect())
    }

    /// Logits for every row, `m×C`.
    pub fn logits_matrix(&self, feats: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(feats.rows(), self.num_classes());
        for i in 0..feats.rows() {
            let l = self.logits(feats.row(i))?;
            out.row_mut(i).copy_from_slice(&l);
        }
        Ok(out)
    }
}

/// `log Σ exp(x)` with max subtraction.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
