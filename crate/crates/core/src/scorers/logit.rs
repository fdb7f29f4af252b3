use super::head::logsumexp;
use super::ScoreVector;
use crate::error::{DscError, Result};
use crate::specmath::Matrix;

fn check_logits(logits: &Matrix) -> Result<()> {
    if !logits.all_finite() {
        return Err(DscError::invalid("non-finite logits"));
    }
    Ok(())
}

/// Maximum softmax probability of a single logit vector.
pub fn msp(l: &[f64]) -> f64 {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1.0 / l.iter().map(|v| (v - m).exp()).sum::<f64>()
}

/// Negated energy `T·logsumexp(ℓ/T)`.
pub fn energy(l: &[f64], temperature: f64) -> f64 {
    if temperature == 1.0 {
        return logsumexp(l);
    }
    let scaled: Vec<f64> = l.iter().map(|v| v / temperature).collect();
    temperature * logsumexp(&scaled)
}

pub fn score_msp(logits: &Matrix) -> Result<ScoreVector> {
    check_logits(logits)?;
    if logits.cols() < 2 {
        return Err(DscError::invalid("MSP needs at least two classes"));
    }
    ScoreVector::new((0..logits.rows()).map(|i| msp(logits.row(i))).collect())
}

pub fn score_energy(logits: &Matrix, temperature: f64) -> Result<ScoreVector> {
    check_logits(logits)?;
    if !(temperature > 0.0) {
        return Err(DscError::invalid("energy temperature must be positive"));
    }
    ScoreVector::new((0..logits.rows()).map(|i| energy(logits.row(i), temperature)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specmath::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(l: &[f64]) -> Matrix {
        Matrix::from_vec(1, l.len(), l.to_vec()).unwrap()
    }

    #[test]
    fn msp_examples() {
        assert!((score_msp(&one(&[0.3; 4])).unwrap().as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((score_msp(&one(&[100.0, 0.0, 0.0])).unwrap().as_slice()[0] - 1.0).abs() < 1e-10);
        let direct = 3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp());
        let got = score_msp(&one(&[1.0, 2.0, 3.0])).unwrap().as_slice()[0];
        assert!((got - direct).abs() < 1e-15);
        assert!((got - 0.66524).abs() < 1e-5);
        assert!(score_msp(&one(&[f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn energy_examples() {
        assert!((score_energy(&one(&[0.0; 3]), 1.0).unwrap().as_slice()[0] - 3f64.ln()).abs() < 1e-15);
        assert_eq!(score_energy(&one(&[-4.25]), 1.0).unwrap().as_slice()[0], -4.25);
        let direct = 2.0 * (0.5f64.exp() + 1f64.exp()).ln();
        assert!((score_energy(&one(&[1.0, 2.0]), 2.0).unwrap().as_slice()[0] - direct).abs() < 1e-14);
        assert!(score_energy(&one(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn lipschitz_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for _ in 0..1000 {
            let c = rng.random_range(2..8);
            let a: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(-2.0..2.0)).collect();
            let dist = norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            assert!((energy(&a, 1.0) - energy(&b, 1.0)).abs() <= dist * (1.0 + 1e-9));
            assert!((msp(&a) - msp(&b)).abs() <= 2.0 * dist * (1.0 + 1e-9));
        }
    }
}
