use super::ScoreVector;
use crate::error::{DscError, Result};
use crate::specmath::{class_means, scatter_about, sym_eig, FeatureMatrix, Matrix};

/// Default shrinkage as a multiple of the pooled covariance's mean eigenvalue.
pub const DEFAULT_SHRINK_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shrinkage {
    /// `1e-3 ×` mean eigenvalue of the covariance being inverted.
    Auto,
    Fixed(f64),
}

/// `(Σ + λI)^{-1}` stored as eigenvectors and inverted shifted eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub eigenvectors: Matrix,
    pub inv_eigenvalues: Vec<f64>,
    pub shrink: f64,
}

impl Precision {
    pub fn from_covariance(cov: &Matrix, shrink: Shrinkage) -> Result<Self> {
        let eig = sym_eig(cov)?;
        let clamped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        let lambda = match shrink {
            Shrinkage::Fixed(l) if l > 0.0 && l.is_finite() => l,
            Shrinkage::Fixed(l) => return Err(DscError::invalid(format!("shrinkage must be positive, got {l}"))),
            Shrinkage::Auto => {
                let mean = clamped.iter().sum::<f64>() / clamped.len().max(1) as f64;
                let l = DEFAULT_SHRINK_FACTOR * mean;
                if l > 0.0 {
                    l
                } else {
                    f64::MIN_POSITIVE.sqrt()
                }
            }
        };
        Ok(Precision {
            eigenvectors: eig.vectors,
            inv_eigenvalues: clamped.iter().map(|&l| 1.0 / (l + lambda)).collect(),
            shrink: lambda,
        })
    }

    /// `vᵀ(Σ + λI)^{-1}v`
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let d = v.len();
        let q = &self.eigenvectors;
        let mut total = 0.0;
        for (k, &inv) in self.inv_eigenvalues.iter().enumerate() {
            let mut proj = 0.0;
            for (i, &vi) in v.iter().enumerate().take(d) {
                proj += q[(i, k)] * vi;
            }
            total += inv * proj * proj;
        }
        total
    }

    /// Smallest eigenvalue of `Σ + λI`.
    pub fn min_shifted_eigenvalue(&self) -> f64 {
        self.inv_eigenvalues.iter().fold(f64::INFINITY, |m, &x| m.min(1.0 / x))
    }
}

/// Class-conditional Mahalanobis statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MdsState {
    /// `C×d`
    pub means: Matrix,
    /// One tied precision, or one per class.
    pub precisions: Vec<Precision>,
    /// Classes fitted from a single sample.
    pub singleton_classes: Vec<usize>,
}

impl MdsState {
    pub fn per_class(&self) -> bool {
        self.precisions.len() > 1
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `min_c (z−μ_c)ᵀ(Σ_c+λI)^{-1}(z−μ_c)`
    pub fn min_distance(&self, z: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let mut diff = vec![0.0; z.len()];
        for c in 0..self.means.rows() {
            for ((o, &a), &m) in diff.iter_mut().zip(z).zip(self.means.row(c)) {
                *o = a - m;
            }
            let p = if self.per_class() { &self.precisions[c] } else { &self.precisions[0] };
            best = best.min(p.quad_form(&diff));
        }
        best
    }

    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        if feats.cols() != self.dim() {
            return Err(DscError::DimensionMismatch { expected: self.dim(), got: feats.cols() });
        }
        ScoreVector::new((0..feats.rows()).map(|i| -self.min_distance(feats.row(i))).collect())
    }
}

/// Fits class means plus a pooled (tied) within-class covariance, or one
/// covariance per class when `per_class` is set.
pub fn fit_mds(train: &FeatureMatrix, shrink: Shrinkage, per_class: bool) -> Result<MdsState> {
    let (means, counts) = class_means(train)?;
    let singleton_classes = counts.iter().enumerate().filter(|(_, &n)| n == 1).map(|(c, _)| c).collect();
    let d = train.d();
    let precisions = if per_class {
        (0..train.num_classes())
            .map(|c| {
                let idx: Vec<usize> = (0..train.n()).filter(|&i| train.labels()[i] == c).collect();
                let rows = train.data().select_rows(&idx);
                Precision::from_covariance(&scatter_about(&rows, means.row(c)), shrink)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut pooled = Matrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for i in 0..train.n() {
            let l = train.labels()[i];
            for ((o, &a), &m) in diff.iter_mut().zip(train.row(i)).zip(means.row(l)) {
                *o = a - m;
            }
            for a in 0..d {
                for b in a..d {
                    pooled[(a, b)] += diff[a] * diff[b];
                }
            }
        }
        let inv = 1.0 / train.n() as f64;
        for a in 0..d {
            for b in a..d {
                pooled[(a, b)] *= inv;
                pooled[(b, a)] = pooled[(a, b)];
            }
        }
        vec![Precision::from_covariance(&pooled, shrink)?]
    };
    Ok(MdsState { means, precisions, singleton_classes })
}

/// ZCA-whitening score: single-class Mahalanobis about the global mean.
pub fn fit_whiten(train: &Matrix, shrink: Shrinkage) -> Result<MdsState> {
    if train.rows() < 2 {
        return Err(DscError::invalid("whitening needs at least two rows"));
    }
    let single = FeatureMatrix::unlabeled(train.clone())?;
    fit_mds(&single, shrink, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_corners() -> FeatureMatrix {
        // Four corners of [-1,1]²: mean 0, covariance I.
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        FeatureMatrix::unlabeled(m).unwrap()
    }

    #[test]
    fn score_zero_at_mean() {
        let st = fit_mds(&square_corners(), Shrinkage::Auto, false).unwrap();
        let s = st.score(&Matrix::zeros(1, 2)).unwrap();
        assert_eq!(s.as_slice()[0], 0.0);
    }

    #[test]
    fn shrunk_identity_formula() {
        // (I + 0.5 I)^{-1} applied to (3,0): 9 / 1.5 = 6.
        let st = fit_mds(&square_corners(), Shrinkage::Fixed(0.5), false).unwrap();
        let s = st.score(&Matrix::from_rows(&[vec![3.0, 0.0]]).unwrap()).unwrap();
        assert!((s.as_slice()[0] + 6.0).abs() < 1e-12);
    }

    #[test]
    fn class_mean_scores_highest() {
        let m = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![-1.0, -0.5],
            vec![5.0, 5.0],
            vec![6.0, 5.5],
            vec![4.0, 4.5],
        ])
        .unwrap();
        let fm = FeatureMatrix::new(m.clone(), vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let st = fit_mds(&fm, Shrinkage::Auto, false).unwrap();
        let s = st.score(&m).unwrap();
        assert!(s.as_slice()[0] >= s.as_slice()[1] && s.as_slice()[0] >= s.as_slice()[2]);
        assert!(s.as_slice()[3] <= 0.0);
    }

    #[test]
    fn shrinkage_floor_holds() {
        let st = fit_mds(&square_corners(), Shrinkage::Fixed(0.25), false).unwrap();
        assert!(st.precisions[0].min_shifted_eigenvalue() >= 0.25 - 1e-12);
        assert!(fit_mds(&square_corners(), Shrinkage::Fixed(0.0), false).is_err());
    }

    #[test]
    fn per_class_mode_and_singletons() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let fm = FeatureMatrix::new(m, vec![0, 0, 1], 2).unwrap();
        let st = fit_mds(&fm, Shrinkage::Auto, true).unwrap();
        assert!(st.per_class());
        assert_eq!(st.singleton_classes, vec![1]);
        let pooled = fit_mds(&fm, Shrinkage::Auto, false).unwrap();
        assert_eq!(pooled.precisions.len(), 1);
    }

    #[test]
    fn whitening_equals_single_class_mds() {
        let m = Matrix::from_rows(&[vec![0.3, 1.0, -2.0], vec![1.5, -0.5, 0.0], vec![-1.0, 0.2, 0.7], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let w = fit_whiten(&m, Shrinkage::Auto).unwrap();
        let mds = fit_mds(&FeatureMatrix::unlabeled(m.clone()).unwrap(), Shrinkage::Auto, false).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.1, 0.0, 0.4]]).unwrap();
        let (a, b) = (w.score(&q).unwrap(), mds.score(&q).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn isotropic_limit_is_negative_squared_distance() {
        let st = fit_whiten(square_corners().data(), Shrinkage::Fixed(1e-12)).unwrap();
        let q = Matrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
        assert!((st.score(&q).unwrap().as_slice()[0] + 4.25).abs() < 1e-9);
    }
}
