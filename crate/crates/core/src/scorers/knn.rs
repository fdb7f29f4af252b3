use rayon::prelude::*;

use super::ScoreVector;
use crate::error::{DscError, Result};
use crate::specmath::{norm, Matrix};

/// Exact brute-force k-th-neighbour distance store.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnState {
    pub store: Matrix,
    pub k: usize,
    pub normalize: bool,
}

fn unit(row: &[f64]) -> Vec<f64> {
    let n = norm(row);
    if n > 0.0 {
        row.iter().map(|x| x / n).collect()
    } else {
        row.to_vec()
    }
}

pub fn fit_knn(train: &Matrix, k: usize, normalize: bool) -> Result<KnnState> {
    if k == 0 || k > train.rows() {
        return Err(DscError::invalid(format!("kNN k={k} must lie in [1, {}]", train.rows())));
    }
    let store = if normalize {
        let mut s = Matrix::zeros(train.rows(), train.cols());
        for i in 0..train.rows() {
            s.row_mut(i).copy_from_slice(&unit(train.row(i)));
        }
        s
    } else {
        train.clone()
    };
    Ok(KnnState { store, k, normalize })
}

impl KnnState {
    /// Distance from `z` to its k-th nearest stored row.
    pub fn kth_distance(&self, z: &[f64]) -> f64 {
        let q = if self.normalize { unit(z) } else { z.to_vec() };
        let mut d2: Vec<f64> = (0..self.store.rows())
            .map(|i| self.store.row(i).iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let (_, kth, _) = d2.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        kth.sqrt()
    }

    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        if feats.cols() != self.store.cols() {
            return Err(DscError::DimensionMismatch { expected: self.store.cols(), got: feats.cols() });
        }
        let scores: Vec<f64> = (0..feats.rows()).into_par_iter().map(|i| -self.kth_distance(feats.row(i))).collect();
        ScoreVector::new(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_match_scores_zero() {
        let train = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let st = fit_knn(&train, 1, false).unwrap();
        assert_eq!(st.score(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap().as_slice()[0], 0.0);
    }

    #[test]
    fn one_dimensional_example() {
        let train = Matrix::from_rows(&[vec![0.0], vec![10.0]]).unwrap();
        let st = fit_knn(&train, 1, false).unwrap();
        assert_eq!(st.kth_distance(&[1.0]), 1.0);
        assert!(fit_knn(&train, 3, false).is_err());
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let train = Matrix::from_rows(
            &(0..200).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>(),
        )
        .unwrap();
        let queries: Vec<Vec<f64>> = (0..50).map(|_| (0..8).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let st = fit_knn(&train, 5, false).unwrap();
        let got = st.score(&Matrix::from_rows(&queries).unwrap()).unwrap();
        for (q, s) in queries.iter().zip(got.as_slice()) {
            let mut all: Vec<f64> = (0..200)
                .map(|i| train.row(i).iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(-all[4], *s);
        }
    }

    #[test]
    fn normalization_uses_directions() {
        let train = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 5.0]]).unwrap();
        let st = fit_knn(&train, 1, true).unwrap();
        assert!(st.kth_distance(&[10.0, 0.0]).abs() < 1e-15);
    }
}
