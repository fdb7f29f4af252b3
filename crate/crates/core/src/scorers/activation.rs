//! Activation-shaping scorers: ReAct truncation and SCALE-style rescaling.

use super::head::{logsumexp, Head};
use super::ScoreVector;
use crate::error::{DscError, Result};
use crate::specmath::Matrix;

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    percentile_sorted(&s, p)
}

fn percentile_sorted(s: &[f64], p: f64) -> f64 {
    if s.len() == 1 {
        return s[0];
    }
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    let frac = pos - lo as f64;
    s[lo] + frac * (s[hi] - s[lo])
}

fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 100.0) {
        return Err(DscError::invalid(format!("percentile must lie in (0, 100), got {p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClampThreshold {
    Global(f64),
    PerDim(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactState {
    pub threshold: ClampThreshold,
    pub percentile: f64,
    pub head: Head,
}

/// Clamp threshold from the `p`-th percentile of every training activation
/// entry, or per dimension when `per_dim` is set.
pub fn fit_react(train: &Matrix, head: &Head, p: f64, per_dim: bool) -> Result<ReactState> {
    check_percentile(p)?;
    if train.rows() == 0 {
        return Err(DscError::invalid("ReAct needs training activations"));
    }
    let threshold = if per_dim {
        ClampThreshold::PerDim((0..train.cols()).map(|j| percentile(&train.col(j), p)).collect())
    } else {
        ClampThreshold::Global(percentile(train.as_slice(), p))
    };
    Ok(ReactState { threshold, percentile: p, head: head.clone() })
}

impl ReactState {
    pub fn clamp(&self, z: &[f64]) -> Vec<f64> {
        match &self.threshold {
            ClampThreshold::Global(c) => z.iter().map(|&x| x.min(*c)).collect(),
            ClampThreshold::PerDim(cs) => z.iter().zip(cs).map(|(&x, &c)| x.min(c)).collect(),
        }
    }

    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        let scores = (0..feats.rows())
            .map(|i| Ok(logsumexp(&self.head.logits(&self.clamp(feats.row(i)))?)))
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::new(scores)
    }
}

/// Percentile-ratio rescaling: `s = Σ z / Σ_{z_j ≥ q_p(z)} z_j`, then the
/// energy of `W·(z·e^{s−1}) + b`. Activations are rectified first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleState {
    pub percentile: f64,
    pub head: Head,
}

pub fn scale_ratio(z: &[f64], p: f64) -> Result<f64> {
    let rect: Vec<f64> = z.iter().map(|&x| x.max(0.0)).collect();
    let q = percentile(&rect, p);
    let total: f64 = rect.iter().sum();
    let kept: f64 = rect.iter().filter(|&&x| x >= q).sum();
    if kept <= 0.0 {
        return Err(DscError::Degenerate("degenerate activation profile".into()));
    }
    Ok(total / kept)
}

pub fn fit_scale(head: &Head, p: f64) -> Result<ScaleState> {
    check_percentile(p)?;
    Ok(ScaleState { percentile: p, head: head.clone() })
}

impl ScaleState {
    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        let scores = (0..feats.rows())
            .map(|i| {
                let z = feats.row(i);
                let factor = (scale_ratio(z, self.percentile)? - 1.0).exp();
                let scaled: Vec<f64> = z.iter().map(|&x| x.max(0.0) * factor).collect();
                Ok(logsumexp(&self.head.logits(&scaled)?))
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::new(scores)
    }
}
