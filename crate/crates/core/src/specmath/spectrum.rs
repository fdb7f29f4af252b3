use std::collections::BTreeMap;

use super::covariance::CovarianceSplit;
use super::eig::sym_eig;
use super::matrix::Matrix;
use crate::error::{DscError, Result};

/// Eigenvalues below this fraction of `λ_max` are treated as zero.
pub const CLAMP_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SpectralSummary {
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    pub r_eff: f64,
    pub pr: f64,
    /// `k → Σ_{i≤k} λ_i / Σ λ_i`, with `k` capped at `d`.
    pub rho_k: BTreeMap<usize, f64>,
    pub rho_within: f64,
}

impl SpectralSummary {
    pub fn rho(&self, k: usize) -> Option<f64> {
        self.rho_k.get(&k).copied()
    }
}

/// Sort descending and zero out anything below `1e-12·λ_max`.
pub fn clamp_spectrum(eigs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = eigs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let lmax = v.first().copied().unwrap_or(0.0).max(0.0);
    let floor = CLAMP_RTOL * lmax;
    for x in v.iter_mut() {
        if *x < floor || *x < 0.0 {
            *x = 0.0;
        }
    }
    v
}

/// `(Σλ)² / Σλ²`
pub fn participation_ratio(eigs: &[f64]) -> f64 {
    let s: f64 = eigs.iter().sum();
    let s2: f64 = eigs.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        return 0.0;
    }
    s * s / s2
}

/// `exp(−Σ λ̂ log λ̂)` with `λ̂ = λ/Σλ` and `0·log 0 = 0`.
pub fn effective_rank(eigs: &[f64]) -> f64 {
    let s: f64 = eigs.iter().sum();
    if s == 0.0 {
        return 0.0;
    }
    let entropy: f64 = eigs
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| {
            let p = l / s;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}

/// Cumulative variance fraction of the top `k` eigenvalues.
pub fn variance_fraction(eigs: &[f64], k: usize) -> f64 {
    let s: f64 = eigs.iter().sum();
    if s == 0.0 {
        return 0.0;
    }
    let k = k.min(eigs.len());
    // The full sum is the same expression, so rho_d is exactly 1.
    if k == eigs.len() {
        return 1.0;
    }
    eigs[..k].iter().sum::<f64>() / s
}

/// Default `k` list: `C−1`, 64 and `d`.
pub fn default_k_list(num_classes: usize, d: usize) -> Vec<usize> {
    let mut ks = vec![num_classes.saturating_sub(1).max(1), 64, d];
    ks.sort_unstable();
    ks.dedup();
    ks
}

pub fn spectral_summary(split: &CovarianceSplit, k_list: &[usize]) -> Result<SpectralSummary> {
    let trace = split.sigma_total.trace();
    if !(trace.is_finite()) || !split.sigma_total.all_finite() {
        return Err(DscError::Degenerate("degenerate covariance: non-finite entries".into()));
    }
    if trace <= 0.0 {
        return Err(DscError::Degenerate("degenerate covariance: zero trace".into()));
    }
    let eig = sym_eig(&split.sigma_total)?;
    let eigenvalues = clamp_spectrum(&eig.values);
    let rho_k = k_list.iter().map(|&k| (k, variance_fraction(&eigenvalues, k))).collect();
    Ok(SpectralSummary {
        r_eff: effective_rank(&eigenvalues),
        pr: participation_ratio(&eigenvalues),
        rho_k,
        rho_within: split.sigma_within.trace() / trace,
        eigenvalues,
        eigenvectors: eig.vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specmath::{covariance_split, FeatureMatrix};
    use proptest::prelude::*;

    fn oracle_entropy_rank(eigs: &[f64]) -> f64 {
        let s: f64 = eigs.iter().sum();
        let mut h = 0.0;
        for &l in eigs {
            if l > 0.0 {
                h -= (l / s) * (l / s).ln();
            }
        }
        h.exp()
    }

    #[test]
    fn isotropic_is_full_rank() {
        let eigs = vec![1.0; 10];
        assert!((effective_rank(&eigs) - 10.0).abs() < 1e-12);
        assert_eq!(participation_ratio(&eigs), 10.0);
    }

    #[test]
    fn rank_one() {
        let mut eigs = vec![0.0; 7];
        eigs[0] = 1.0;
        assert_eq!(effective_rank(&eigs), 1.0);
        assert_eq!(participation_ratio(&eigs), 1.0);
    }

    #[test]
    fn three_eigenvalue_case() {
        let eigs = [0.5, 0.25, 0.25];
        // (Σλ)²/Σλ² = 1 / 0.375
        assert!((participation_ratio(&eigs) - 1.0 / 0.375).abs() < 1e-14);
        // H = 0.5 ln 2 + 2·0.25 ln 4 = 1.5 ln 2, so r_eff = 2^1.5
        assert!((effective_rank(&eigs) - 2f64.powf(1.5)).abs() < 1e-12);
        assert!((effective_rank(&eigs) - 2.828).abs() < 1e-3);
    }

    #[test]
    fn clamps_round_off_negatives() {
        let v = clamp_spectrum(&[1.0, -1e-17, 1e-14, 0.5]);
        assert_eq!(v, vec![1.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn zero_trace_rejected() {
        let fm = FeatureMatrix::new(Matrix::zeros(4, 3), vec![0, 1, 0, 1], 2).unwrap();
        let split = covariance_split(&fm).unwrap();
        let err = spectral_summary(&split, &[1]).unwrap_err();
        assert!(err.to_string().contains("degenerate covariance"));
    }

    proptest! {
        #[test]
        fn formulas_match_oracle_and_bounds(eigs in prop::collection::vec(0.0f64..10.0, 1..40)) {
            prop_assume!(eigs.iter().sum::<f64>() > 1e-6);
            let clamped = clamp_spectrum(&eigs);
            let d = eigs.len() as f64;
            let r = effective_rank(&clamped);
            let pr = participation_ratio(&clamped);
            prop_assert!((r - oracle_entropy_rank(&clamped)).abs() <= 1e-10 * r.max(1.0));
            prop_assert!(r >= 1.0 - 1e-12 && r <= d + 1e-9);
            prop_assert!(pr >= 1.0 - 1e-12 && pr <= d + 1e-9);
            let mut last = 0.0;
            for k in 1..=eigs.len() {
                let rho = variance_fraction(&clamped, k);
                prop_assert!(rho + 1e-15 >= last);
                last = rho;
            }
            prop_assert_eq!(variance_fraction(&clamped, eigs.len()), 1.0);
        }
    }
}
