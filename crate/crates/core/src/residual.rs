//! Class-suppressed teacher residuals and the cosine domain loss.
//!
//! Teacher prototypes `μ_c` span the class-discriminative teacher subspace
//! through `U = [μ_1−μ, …, μ_C−μ]`. The regularized projector
//! `P_cls = U(UᵀU + εI)^{-1}Uᵀ` is applied through the `C×C` eigensystem of
//! `UᵀU`, and the residual target is `(I − P_cls)(u − μ)`.

use std::io::{Read, Write};

use crate::container::{BinReader, BinWriter};
use crate::error::{DscError, Result};
use crate::specmath::{class_means, dot, mean_rows, norm, sym_eig, FeatureMatrix, Matrix};

pub const TEACHER_MAGIC: &[u8; 4] = b"DSCT";
pub const DEFAULT_PROJECTOR_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeMode {
    /// Prototypes from the full training set, fixed for the run.
    Precomputed,
    /// Prototypes refreshed by an exponential moving average per batch.
    Ema,
}

impl std::str::FromStr for PrototypeMode {
    type Err = DscError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "precomputed" => Ok(PrototypeMode::Precomputed),
            "ema" => Ok(PrototypeMode::Ema),
            other => Err(DscError::invalid(format!("unknown prototype mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PrototypeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrototypeMode::Precomputed => "precomputed",
            PrototypeMode::Ema => "ema",
        })
    }
}

/// `P_cls = U(UᵀU + εI)^{-1}Uᵀ` as a dense `m×m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueProjector {
    pub p_cls: Matrix,
}

impl ObliqueProjector {
    pub fn apply_complement(&self, v: &[f64]) -> Vec<f64> {
        let pv = self.p_cls.mat_vec(v).expect("dimension checked by caller");
        v.iter().zip(&pv).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStats {
    /// `C×m`
    pub class_prototypes: Matrix,
    pub global_mean: Vec<f64>,
    pub counts: Vec<usize>,
    pub projector_eps: f64,
    projector: ObliqueProjector,
}

impl TeacherStats {
    pub fn num_classes(&self) -> usize {
        self.class_prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }

    /// `U`, `m×C`, columns in class order.
    pub fn u_basis(&self) -> Matrix {
        let (c, m) = (self.num_classes(), self.dim());
        let mut u = Matrix::zeros(m, c);
        for k in 0..c {
            for i in 0..m {
                u[(i, k)] = self.class_prototypes[(k, i)] - self.global_mean[i];
            }
        }
        u
    }

    pub fn projector(&self) -> &ObliqueProjector {
        &self.projector
    }

    fn from_parts(class_prototypes: Matrix, global_mean: Vec<f64>, counts: Vec<usize>, eps: f64) -> Result<Self> {
        let mut st = TeacherStats {
            projector: ObliqueProjector { p_cls: Matrix::zeros(0, 0) },
            class_prototypes,
            global_mean,
            counts,
            projector_eps: eps,
        };
        st.projector = build_class_projector(&st.u_basis(), eps)?;
        Ok(st)
    }

    /// `(I − P_cls)(u − μ)`
    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        class_suppressed_residual(self, u)
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut out = BinWriter::new(w, TEACHER_MAGIC)?;
        out.usize(self.num_classes())?;
        out.usize(self.dim())?;
        out.f64(self.projector_eps)?;
        for &n in &self.counts {
            out.usize(n)?;
        }
        out.f64s(self.class_prototypes.as_slice())?;
        out.f64s(&self.global_mean)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut inp = BinReader::new(r, TEACHER_MAGIC)?;
        let c = inp.usize()?;
        let m = inp.usize()?;
        let eps = inp.f64()?;
        let counts = (0..c).map(|_| inp.usize()).collect::<Result<Vec<_>>>()?;
        let protos = Matrix::from_vec(c, m, inp.f64s(c * m)?)?;
        let mean = inp.f64s(m)?;
        inp.finish()?;
        TeacherStats::from_parts(protos, mean, counts, eps)
    }
}

/// Builds `U(UᵀU + εI)^{-1}Uᵀ` through the eigensystem of the `C×C` Gram
/// matrix: with `UᵀU = VΛVᵀ` and `B = UV`, `P = B·diag(1/(λ+ε))·Bᵀ`.
pub fn build_class_projector(u: &Matrix, eps: f64) -> Result<ObliqueProjector> {
    if !(eps > 0.0) {
        return Err(DscError::invalid("projector_eps must be positive"));
    }
    let gram = u.transpose().matmul(u)?;
    let eig = sym_eig(&gram)?;
    let b = u.matmul(&eig.vectors)?;
    let m = u.rows();
    let mut p = Matrix::zeros(m, m);
    for (k, &lam) in eig.values.iter().enumerate() {
        let w = 1.0 / (lam.max(0.0) + eps);
        for i in 0..m {
            let bi = b[(i, k)] * w;
            if bi == 0.0 {
                continue;
            }
            for j in 0..m {
                p[(i, j)] += bi * b[(j, k)];
            }
        }
    }
    // Symmetrize away round-off.
    for i in 0..m {
        for j in (i + 1)..m {
            let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = avg;
            p[(j, i)] = avg;
        }
    }
    Ok(ObliqueProjector { p_cls: p })
}

pub fn teacher_stats(teacher_feats: &FeatureMatrix, projector_eps: f64) -> Result<TeacherStats> {
    let (protos, counts) = class_means(teacher_feats)?;
    TeacherStats::from_parts(protos, mean_rows(teacher_feats.data()), counts, projector_eps)
}

pub fn class_suppressed_residual(stats: &TeacherStats, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != stats.dim() {
        return Err(DscError::DimensionMismatch { expected: stats.dim(), got: u.len() });
    }
    let centered: Vec<f64> = u.iter().zip(&stats.global_mean).map(|(a, b)| a - b).collect();
    Ok(stats.projector.apply_complement(&centered))
}

/// EMA refresh of the prototypes of classes present in `batch`; the
/// global mean follows the batch mean with the same momentum.
pub fn batch_prototype_update(stats: &TeacherStats, batch: &FeatureMatrix, momentum: f64) -> Result<TeacherStats> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(DscError::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    if batch.d() != stats.dim() || batch.num_classes() > stats.num_classes() {
        return Err(DscError::DimensionMismatch { expected: stats.dim(), got: batch.d() });
    }
    let m = stats.dim();
    let mut protos = stats.class_prototypes.clone();
    let mut counts = stats.counts.clone();
    let mut sums = vec![vec![0.0; m]; stats.num_classes()];
    let mut batch_counts = vec![0usize; stats.num_classes()];
    for i in 0..batch.n() {
        let l = batch.labels()[i];
        batch_counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(batch.row(i)) {
            *s += x;
        }
    }
    for c in 0..stats.num_classes() {
        if batch_counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / batch_counts[c] as f64;
        for (j, p) in protos.row_mut(c).iter_mut().enumerate() {
            *p = momentum * *p + (1.0 - momentum) * sums[c][j] * inv;
        }
        counts[c] += batch_counts[c];
    }
    let bmean = mean_rows(batch.data());
    let mean = stats.global_mean.iter().zip(&bmean).map(|(g, b)| momentum * g + (1.0 - momentum) * b).collect();
    TeacherStats::from_parts(protos, mean, counts, stats.projector_eps)
}

/// `1 − cos(h, t)` and its gradient with respect to `h`, with `t` held
/// constant. A zero-norm input gives loss 1 and a zero gradient.
pub fn cosine_domain_loss(h: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let nh = norm(h);
    let nt = norm(target);
    if nh == 0.0 || nt == 0.0 {
        return (1.0, vec![0.0; h.len()]);
    }
    let cos = (dot(h, target) / (nh * nt)).clamp(-1.0, 1.0);
    // ∂cos/∂h = (t̂ − cos·ĥ)/‖h‖
    let grad = h.iter().zip(target).map(|(&hi, &ti)| -(ti / nt - cos * hi / nh) / nh).collect();
    (1.0 - cos, grad)
}
