use super::features::FeatureMatrix;
use super::matrix::Matrix;
use crate::error::{DscError, Result};

/// Empirical split `Σ = Σ_between + Σ_within` with priors `p_c = n_c / n`.
#[derive(Debug, Clone)]
pub struct CovarianceSplit {
    pub sigma_total: Matrix,
    pub sigma_between: Matrix,
    pub sigma_within: Matrix,
    /// `C×d`, row `c` is the mean of class `c`.
    pub class_means: Matrix,
    pub global_mean: Vec<f64>,
    pub class_priors: Vec<f64>,
}

impl CovarianceSplit {
    pub fn num_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }

    /// `‖Σ − Σ_b − Σ_w‖_F / ‖Σ‖_F`, or the absolute residual when `Σ = 0`.
    pub fn additivity_residual(&self) -> f64 {
        let resid = self
            .sigma_total
            .sub(&self.sigma_between)
            .and_then(|m| m.sub(&self.sigma_within))
            .map(|m| m.frobenius_norm())
            .unwrap_or(f64::INFINITY);
        let scale = self.sigma_total.frobenius_norm();
        if scale > 0.0 {
            resid / scale
        } else {
            resid
        }
    }
}

/// Column means, accumulated as offsets from the first row so that
/// repeated rows average to themselves exactly.
pub fn mean_rows(m: &Matrix) -> Vec<f64> {
    if m.rows() == 0 {
        return vec![0.0; m.cols()];
    }
    let pivot = m.row(0);
    let mut acc = vec![0.0; m.cols()];
    for i in 1..m.rows() {
        for ((a, &x), &p) in acc.iter_mut().zip(m.row(i)).zip(pivot) {
            *a += x - p;
        }
    }
    let inv = 1.0 / m.rows() as f64;
    pivot.iter().zip(&acc).map(|(&p, &a)| p + a * inv).collect()
}

/// Per-class means, `C×d`. Errors if a class has no rows.
pub fn class_means(feats: &FeatureMatrix) -> Result<(Matrix, Vec<usize>)> {
    let (c, d) = (feats.num_classes(), feats.d());
    let mut pivots: Vec<Option<usize>> = vec![None; c];
    let mut sums = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (i, &l) in feats.labels().iter().enumerate() {
        counts[l] += 1;
        let p = *pivots[l].get_or_insert(i);
        let pivot = feats.row(p);
        for ((acc, &x), &q) in sums.row_mut(l).iter_mut().zip(feats.row(i)).zip(pivot) {
            *acc += x - q;
        }
    }
    for (k, &n_k) in counts.iter().enumerate() {
        let Some(p) = pivots[k] else {
            return Err(DscError::EmptyClass(k));
        };
        let inv = 1.0 / n_k as f64;
        let pivot = feats.row(p).to_vec();
        sums.row_mut(k).iter_mut().zip(&pivot).for_each(|(x, &q)| *x = q + *x * inv);
    }
    Ok((sums, counts))
}

/// Accumulate `w·(v vᵀ)` into the upper triangle of `acc`.
fn add_outer_upper(acc: &mut Matrix, v: &[f64], w: f64) {
    let d = v.len();
    for a in 0..d {
        let va = w * v[a];
        if va == 0.0 {
            continue;
        }
        for b in a..d {
            acc[(a, b)] += va * v[b];
        }
    }
}

fn mirror_upper(m: &mut Matrix) {
    let d = m.rows();
    for a in 0..d {
        for b in (a + 1)..d {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Covariance of the rows of `m` about `center`, normalized by `n`.
pub fn scatter_about(m: &Matrix, center: &[f64]) -> Matrix {
    let d = m.cols();
    let mut acc = Matrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for i in 0..m.rows() {
        for ((o, &x), &c) in diff.iter_mut().zip(m.row(i)).zip(center) {
            *o = x - c;
        }
        add_outer_upper(&mut acc, &diff, 1.0);
    }
    let inv = 1.0 / m.rows().max(1) as f64;
    acc.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
    mirror_upper(&mut acc);
    acc
}

pub fn covariance_split(feats: &FeatureMatrix) -> Result<CovarianceSplit> {
    let n = feats.n();
    if n < 2 {
        return Err(DscError::invalid("covariance_split needs at least two rows"));
    }
    let d = feats.d();
    let (means, counts) = class_means(feats)?;
    let global_mean = mean_rows(feats.data());
    let priors: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();

    let sigma_total = scatter_about(feats.data(), &global_mean);

    let mut between = Matrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for (c, &p) in priors.iter().enumerate() {
        for ((o, &x), &g) in diff.iter_mut().zip(means.row(c)).zip(&global_mean) {
            *o = x - g;
        }
        add_outer_upper(&mut between, &diff, p);
    }
    mirror_upper(&mut between);

    let mut within = Matrix::zeros(d, d);
    for (i, &l) in feats.labels().iter().enumerate() {
        for ((o, &x), &m) in diff.iter_mut().zip(feats.row(i)).zip(means.row(l)) {
            *o = x - m;
        }
        add_outer_upper(&mut within, &diff, 1.0);
    }
    let inv = 1.0 / n as f64;
    within.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
    mirror_upper(&mut within);

    Ok(CovarianceSplit {
        sigma_total,
        sigma_between: between,
        sigma_within: within,
        class_means: means,
        global_mean,
        class_priors: priors,
    })
}
