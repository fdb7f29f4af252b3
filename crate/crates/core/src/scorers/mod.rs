//! Post-hoc OOD scorers with a uniform fit-then-score contract.
//!
//! Every score is oriented so that larger values mean "more
//! in-distribution". Fitted scorers are immutable and `Sync`; scoring is
//! per-row, so splitting a batch across threads gives identical output.

mod activation;
mod bundle;
mod head;
mod knn;
mod logit;
mod mds;
mod nci;
mod vim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use activation::{fit_react, fit_scale, percentile, scale_ratio, ClampThreshold, ReactState, ScaleState};
pub use bundle::SCORER_MAGIC;
pub use head::{argmax, logsumexp, softmax, Head};
pub use knn::{fit_knn, KnnState};
pub use logit::{energy, msp, score_energy, score_msp};
pub use mds::{fit_mds, fit_whiten, MdsState, Precision, Shrinkage, DEFAULT_SHRINK_FACTOR};
pub use nci::{fit_nci, NciState, DEFAULT_NCI_GAMMA};
pub use vim::{fit_vim, VimState};

use crate::error::{DscError, Result};
use crate::specmath::{FeatureMatrix, Matrix};

/// Scores for `m` inputs, higher = more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(DscError::Numerical(format!("non-finite score at row {i}")));
        }
        Ok(ScoreVector(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len().max(1) as f64
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScorerKind {
    Msp,
    Ebo,
    Mds,
    Knn,
    Vim,
    React,
    Scale,
    Nci,
    Whiten,
    TeacherMds,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 10] = [
        ScorerKind::Msp,
        ScorerKind::Ebo,
        ScorerKind::Mds,
        ScorerKind::Knn,
        ScorerKind::Vim,
        ScorerKind::React,
        ScorerKind::Scale,
        ScorerKind::Nci,
        ScorerKind::Whiten,
        ScorerKind::TeacherMds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::Msp => "msp",
            ScorerKind::Ebo => "ebo",
            ScorerKind::Mds => "mds",
            ScorerKind::Knn => "knn",
            ScorerKind::Vim => "vim",
            ScorerKind::React => "react",
            ScorerKind::Scale => "scale",
            ScorerKind::Nci => "nci",
            ScorerKind::Whiten => "whiten",
            ScorerKind::TeacherMds => "teacher_mds",
        }
    }

    pub(crate) fn tag(self) -> u32 {
        ScorerKind::ALL.iter().position(|&k| k == self).expect("listed") as u32
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        ScorerKind::ALL.get(tag as usize).copied()
    }

    /// Scored on teacher features rather than student features.
    pub fn uses_teacher_space(self) -> bool {
        self == ScorerKind::TeacherMds
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = DscError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        let alias = match norm.as_str() {
            "energy" => "ebo",
            "mahalanobis" => "mds",
            "teacher" | "teacher-mds" => "teacher_mds",
            other => other,
        };
        ScorerKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == alias)
            .ok_or_else(|| DscError::invalid(format!("unknown scorer `{s}`")))
    }
}

/// Hyper-parameters shared by the fitting routines.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerConfig {
    pub energy_temperature: f64,
    pub mds_shrink: Shrinkage,
    pub mds_per_class: bool,
    pub knn_k: usize,
    pub knn_normalize: bool,
    /// `None` means `C − 1`.
    pub vim_dim: Option<usize>,
    pub react_percentile: f64,
    pub react_per_dim: bool,
    pub scale_percentile: f64,
    pub nci_gamma: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            energy_temperature: 1.0,
            mds_shrink: Shrinkage::Auto,
            mds_per_class: false,
            knn_k: 10,
            knn_normalize: true,
            vim_dim: None,
            react_percentile: 90.0,
            react_per_dim: false,
            scale_percentile: 85.0,
            nci_gamma: DEFAULT_NCI_GAMMA,
        }
    }
}

/// Training-time inputs a scorer may need.
pub struct FitInputs<'a> {
    /// Student features on ID training data, with labels.
    pub train: &'a FeatureMatrix,
    pub head: &'a Head,
    /// Teacher features on the same training rows (teacher-space scorers).
    pub teacher_train: Option<&'a FeatureMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedScorer {
    Msp { head: Head },
    Energy { head: Head, temperature: f64 },
    Mds(MdsState),
    Knn(KnnState),
    Vim(VimState),
    React(ReactState),
    Scale(ScaleState),
    Nci(NciState),
    Whiten(MdsState),
    TeacherMds(MdsState),
}

impl FittedScorer {
    pub fn fit(kind: ScorerKind, inputs: &FitInputs<'_>, cfg: &ScorerConfig) -> Result<Self> {
        let train = inputs.train;
        let head = inputs.head;
        if head.dim() != train.d() {
            return Err(DscError::DimensionMismatch { expected: train.d(), got: head.dim() });
        }
        Ok(match kind {
            ScorerKind::Msp => FittedScorer::Msp { head: head.clone() },
            ScorerKind::Ebo => {
                if !(cfg.energy_temperature > 0.0) {
                    return Err(DscError::invalid("energy temperature must be positive"));
                }
                FittedScorer::Energy { head: head.clone(), temperature: cfg.energy_temperature }
            }
            ScorerKind::Mds => FittedScorer::Mds(fit_mds(train, cfg.mds_shrink, cfg.mds_per_class)?),
            ScorerKind::Knn => FittedScorer::Knn(fit_knn(train.data(), cfg.knn_k, cfg.knn_normalize)?),
            ScorerKind::Vim => {
                let dim = cfg.vim_dim.unwrap_or(head.num_classes().saturating_sub(1).max(1));
                FittedScorer::Vim(fit_vim(train.data(), head, dim)?)
            }
            ScorerKind::React => {
                FittedScorer::React(fit_react(train.data(), head, cfg.react_percentile, cfg.react_per_dim)?)
            }
            ScorerKind::Scale => FittedScorer::Scale(fit_scale(head, cfg.scale_percentile)?),
            ScorerKind::Nci => FittedScorer::Nci(fit_nci(train.data(), head, cfg.nci_gamma)?),
            ScorerKind::Whiten => FittedScorer::Whiten(fit_whiten(train.data(), cfg.mds_shrink)?),
            ScorerKind::TeacherMds => {
                let teacher = inputs
                    .teacher_train
                    .ok_or_else(|| DscError::invalid("teacher-space MDS needs teacher training features"))?;
                FittedScorer::TeacherMds(fit_mds(teacher, cfg.mds_shrink, cfg.mds_per_class)?)
            }
        })
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            FittedScorer::Msp { .. } => ScorerKind::Msp,
            FittedScorer::Energy { .. } => ScorerKind::Ebo,
            FittedScorer::Mds(_) => ScorerKind::Mds,
            FittedScorer::Knn(_) => ScorerKind::Knn,
            FittedScorer::Vim(_) => ScorerKind::Vim,
            FittedScorer::React(_) => ScorerKind::React,
            FittedScorer::Scale(_) => ScorerKind::Scale,
            FittedScorer::Nci(_) => ScorerKind::Nci,
            FittedScorer::Whiten(_) => ScorerKind::Whiten,
            FittedScorer::TeacherMds(_) => ScorerKind::TeacherMds,
        }
    }

    /// Score rows of `feats`: student features, or teacher features for
    /// [`ScorerKind::TeacherMds`].
    pub fn score(&self, feats: &Matrix) -> Result<ScoreVector> {
        match self {
            FittedScorer::Msp { head } => score_msp(&head.logits_matrix(feats)?),
            FittedScorer::Energy { head, temperature } => score_energy(&head.logits_matrix(feats)?, *temperature),
            FittedScorer::Mds(st) | FittedScorer::Whiten(st) | FittedScorer::TeacherMds(st) => st.score(feats),
            FittedScorer::Knn(st) => st.score(feats),
            FittedScorer::Vim(st) => st.score(feats),
            FittedScorer::React(st) => st.score(feats),
            FittedScorer::Scale(st) => st.score(feats),
            FittedScorer::Nci(st) => st.score(feats),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ScorerKind::ALL {
            assert_eq!(k.name().parse::<ScorerKind>().unwrap(), k);
            assert_eq!(ScorerKind::from_tag(k.tag()), Some(k));
        }
        assert_eq!("Energy".parse::<ScorerKind>().unwrap(), ScorerKind::Ebo);
        assert!("odin".parse::<ScorerKind>().is_err());
    }

    #[test]
    fn score_vector_rejects_nan() {
        assert!(ScoreVector::new(vec![0.0, f64::NAN]).is_err());
    }
}
