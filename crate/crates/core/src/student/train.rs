//! Cross-entropy and teacher-guided SGD steps and the epoch loop.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{DscError, Result};
use crate::metrics::fpr_at_tpr;
use crate::residual::{
    batch_prototype_update, cosine_domain_loss, teacher_stats, PrototypeMode, TeacherStats, DEFAULT_PROJECTOR_EPS,
};
use crate::rng::{stage, stream};
use crate::scorers::{fit_mds, Shrinkage};
use crate::specmath::{covariance_split, spectral_summary, FeatureMatrix, Matrix};

use super::model::{ce_loss, MlpStudent};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_tgt: f64,
    pub lr: f64,
    pub momentum: f64,
    /// Decoupled: `θ ← θ(1 − lr·wd) − lr·v`.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub prototype_mode: PrototypeMode,
    pub ema_momentum: f64,
    pub projector_eps: f64,
    /// 0 disables the geometry trace.
    pub record_geometry_every: usize,
    /// Stop domain-head gradients at the trunk (ablation).
    pub detach_domain: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_tgt: 1.0,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-3,
            batch_size: 64,
            epochs: 60,
            seed: 0,
            prototype_mode: PrototypeMode::Precomputed,
            ema_momentum: 0.9,
            projector_eps: DEFAULT_PROJECTOR_EPS,
            record_geometry_every: 10,
            detach_domain: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(DscError::invalid("learning rate must be finite and nonnegative"));
        }
        if !(self.lambda_tgt >= 0.0 && self.lambda_tgt.is_finite()) {
            return Err(DscError::invalid("lambda_tgt must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(DscError::invalid("momentum must lie in [0, 1) and weight decay be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(DscError::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    /// Mean cosine domain loss; 0 when no targets were given.
    pub domain: f64,
}

/// Mean batch loss and its gradient. With `targets` the domain term is
/// evaluated; it enters the gradient only when `lambda > 0`.
pub fn batch_loss_grad(
    student: &MlpStudent,
    inputs: &Matrix,
    labels: &[usize],
    idx: &[usize],
    targets: Option<&[Vec<f64>]>,
    lambda: f64,
    detach_domain: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if idx.is_empty() {
        return Err(DscError::invalid("empty batch"));
    }
    if let Some(t) = targets {
        if t.len() != idx.len() {
            return Err(DscError::DimensionMismatch { expected: idx.len(), got: t.len() });
        }
    }
    let inv = 1.0 / idx.len() as f64;
    let mut grad = vec![0.0; student.num_params()];
    let mut ce_sum = 0.0;
    let mut dom_sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let cache = student.forward(inputs.row(i))?;
        let (ce, mut g_logits) = ce_loss(&cache.logits, labels[i]);
        ce_sum += ce;
        g_logits.iter_mut().for_each(|g| *g *= inv);
        let mut g_dom = None;
        if let Some(t) = targets {
            let (l, mut g) = cosine_domain_loss(&cache.domain_pred, &t[k]);
            dom_sum += l;
            if lambda > 0.0 {
                g.iter_mut().for_each(|v| *v *= lambda * inv);
                g_dom = Some(g);
            }
        }
        student.backward(&cache, &g_logits, g_dom.as_deref(), detach_domain, &mut grad);
    }
    let ce = ce_sum * inv;
    let domain = dom_sum * inv;
    Ok((LossBreakdown { total: ce + lambda * domain, ce, domain }, grad))
}

/// SGD with momentum and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n: usize) -> Self {
        Sgd { velocity: vec![0.0; n] }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        let shrink = 1.0 - cfg.lr * cfg.weight_decay;
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = cfg.momentum * *v + g;
            *p = *p * shrink - cfg.lr * *v;
        }
    }
}

/// One step on the batch `idx`. `targets` are class-suppressed residuals
/// aligned with `idx`; `None` gives a plain cross-entropy step.
pub fn tgt_step(
    student: &mut MlpStudent,
    opt: &mut Sgd,
    inputs: &Matrix,
    labels: &[usize],
    idx: &[usize],
    targets: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (loss, grad) = batch_loss_grad(student, inputs, labels, idx, targets, cfg.lambda_tgt, cfg.detach_domain)?;
    if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
        return Err(DscError::Numerical(format!("non-finite gradient at parameter {j}")));
    }
    opt.apply(student.params_mut(), &grad, cfg);
    Ok(loss)
}

/// Training inputs with optional aligned teacher features.
pub struct TrainSet<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [usize],
    pub num_classes: usize,
    pub teacher: Option<&'a Matrix>,
}

/// Held-out ID slice (and a far-OOD slice) frozen at run start.
pub struct Probe {
    pub id_inputs: Matrix,
    pub id_labels: Vec<usize>,
    pub far_inputs: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryPoint {
    pub epoch: usize,
    pub r_eff: f64,
    pub pr: f64,
    /// Variance fraction in the top `C − 1` directions.
    pub rho_k: f64,
    pub rho_within: f64,
    pub fpr95_mds_far: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeometryTrace {
    pub points: Vec<GeometryPoint>,
}

impl GeometryTrace {
    pub const HEADER: &'static str = "epoch,r_eff,pr,rho_k,rho_within,fpr95_mds_far";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{},{}", p.epoch, p.r_eff, p.pr, p.rho_k, p.rho_within, p.fpr95_mds_far)?;
        }
        Ok(())
    }
}

pub fn geometry_point(student: &MlpStudent, data: &TrainSet<'_>, probe: &Probe, epoch: usize) -> Result<GeometryPoint> {
    let c = data.num_classes;
    let id = student.labeled_features(&probe.id_inputs, &probe.id_labels, c)?;
    let split = covariance_split(&id)?;
    let k = c.saturating_sub(1).max(1);
    let summary = spectral_summary(&split, &[k])?;
    let train = student.labeled_features(data.inputs, data.labels, c)?;
    let mds = fit_mds(&train, Shrinkage::Auto, false)?;
    let id_scores = mds.score(id.data())?;
    let far_scores = mds.score(&student.features(&probe.far_inputs)?)?;
    Ok(GeometryPoint {
        epoch,
        r_eff: summary.r_eff,
        pr: summary.pr,
        rho_k: summary.rho(k).unwrap_or(1.0),
        rho_within: summary.rho_within,
        fpr95_mds_far: fpr_at_tpr(id_scores.as_slice(), far_scores.as_slice(), 0.95)?,
    })
}

fn residual_targets(stats: &TeacherStats, teacher: &Matrix, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    idx.iter().map(|&i| stats.residual(teacher.row(i))).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: MlpStudent,
    pub trace: GeometryTrace,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<LossBreakdown>,
    /// Teacher statistics at the end of the run, when a teacher was given.
    pub teacher_stats: Option<TeacherStats>,
}

/// Epoch loop with seeded shuffling. Shuffling depends on `cfg.seed` only,
/// so runs that differ only in `lambda_tgt` see the same batches.
pub fn train(student_init: &MlpStudent, data: &TrainSet<'_>, cfg: &TrainConfig, probe: Option<&Probe>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = data.inputs.rows();
    if data.labels.len() != n {
        return Err(DscError::DimensionMismatch { expected: n, got: data.labels.len() });
    }
    let mut present = vec![false; data.num_classes];
    for &l in data.labels {
        *present.get_mut(l).ok_or_else(|| DscError::invalid(format!("label {l} out of range")))? = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(DscError::EmptyClass(c));
    }
    if cfg.lambda_tgt > 0.0 && data.teacher.is_none() {
        return Err(DscError::invalid("lambda_tgt > 0 needs teacher features"));
    }
    let mut stats = match data.teacher {
        Some(t) => {
            if t.rows() != n {
                return Err(DscError::DimensionMismatch { expected: n, got: t.rows() });
            }
            let fm = FeatureMatrix::new(t.clone(), data.labels.to_vec(), data.num_classes)?;
            Some(teacher_stats(&fm, cfg.projector_eps)?)
        }
        None => None,
    };
    let all: Vec<usize> = (0..n).collect();
    let precomputed = match (&stats, data.teacher, cfg.prototype_mode) {
        (Some(s), Some(t), PrototypeMode::Precomputed) => Some(residual_targets(s, t, &all)?),
        _ => None,
    };

    let mut student = student_init.clone();
    let mut opt = Sgd::new(student.num_params());
    let mut trace = GeometryTrace::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order = all.clone();
    for epoch in 1..=cfg.epochs {
        let mut rng = stream(cfg.seed, &[stage::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let targets = match (&precomputed, data.teacher) {
                (Some(all_t), _) => Some(batch.iter().map(|&i| all_t[i].clone()).collect::<Vec<_>>()),
                (None, Some(t)) => {
                    let s = stats.as_ref().expect("stats exist with teacher");
                    let rows = FeatureMatrix::new(t.select_rows(batch), batch.iter().map(|&i| data.labels[i]).collect(), data.num_classes)?;
                    let updated = batch_prototype_update(s, &rows, cfg.ema_momentum)?;
                    let tg = residual_targets(&updated, t, batch)?;
                    stats = Some(updated);
                    Some(tg)
                }
                _ => None,
            };
            let l = tgt_step(&mut student, &mut opt, data.inputs, data.labels, batch, targets.as_deref(), cfg)?;
            if !(l.total <= 1e6) {
                return Err(DscError::Numerical(format!("training diverged at epoch {epoch}: loss {}", l.total)));
            }
            let w = batch.len() as f64 / n as f64;
            acc.total += w * l.total;
            acc.ce += w * l.ce;
            acc.domain += w * l.domain;
        }
        epoch_losses.push(acc);
        if let Some(p) = probe {
            if cfg.record_geometry_every > 0 && (epoch % cfg.record_geometry_every == 0 || epoch == cfg.epochs) {
                trace.points.push(geometry_point(&student, data, p, epoch)?);
            }
        }
    }
    Ok(TrainOutcome { student, trace, epoch_losses, teacher_stats: stats })
}
