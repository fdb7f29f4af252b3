//! `DSCS` scorer bundles.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DSCS" | u32 variant tag | u32 d | payload
//! head      = u32 C | W (C·d f64, row-major) | b (C f64)
//! mds       = u32 C | u32 P | means (C·d) | P × (f64 λ | Q (d·d) | 1/(λ_i+λ) (d))
//!             | u32 S | S × u32 singleton class
//! msp       = head
//! ebo       = head | f64 T
//! knn       = u32 k | u32 normalize | u32 n | store (n·d)
//! vim       = head | f64 α | mean (d) | u32 k | basis (d·k)
//! react     = head | f64 p | u32 mode | mode 0: f64 c, mode 1: c (d)
//! scale     = head | f64 p
//! nci       = head | f64 γ | f64 mean‖z‖ | mean (d)
//! whiten, teacher_mds = mds
//! ```

use std::io::{Read, Write};

use super::activation::{ClampThreshold, ReactState, ScaleState};
use super::head::Head;
use super::knn::KnnState;
use super::mds::{MdsState, Precision};
use super::nci::NciState;
use super::vim::VimState;
use super::{FittedScorer, ScorerKind};
use crate::container::{BinReader, BinWriter};
use crate::error::{DscError, Result};
use crate::specmath::{Matrix, Projector};

pub const SCORER_MAGIC: &[u8; 4] = b"DSCS";

fn write_head<W: Write>(w: &mut BinWriter<W>, h: &Head) -> Result<()> {
    w.usize(h.num_classes())?;
    w.f64s(h.w.as_slice())?;
    w.f64s(&h.b)
}

fn read_head<R: Read>(r: &mut BinReader<R>, d: usize) -> Result<Head> {
    let c = r.usize()?;
    let w = Matrix::from_vec(c, d, r.f64s(c * d)?)?;
    Head::new(w, r.f64s(c)?)
}

fn write_mds<W: Write>(w: &mut BinWriter<W>, st: &MdsState) -> Result<()> {
    w.usize(st.means.rows())?;
    w.usize(st.precisions.len())?;
    w.f64s(st.means.as_slice())?;
    for p in &st.precisions {
        w.f64(p.shrink)?;
        w.f64s(p.eigenvectors.as_slice())?;
        w.f64s(&p.inv_eigenvalues)?;
    }
    w.usize(st.singleton_classes.len())?;
    for &c in &st.singleton_classes {
        w.usize(c)?;
    }
    Ok(())
}

fn read_mds<R: Read>(r: &mut BinReader<R>, d: usize) -> Result<MdsState> {
    let c = r.usize()?;
    let np = r.usize()?;
    if np != 1 && np != c {
        return Err(DscError::Format(format!("MDS bundle has {np} precisions for {c} classes")));
    }
    let means = Matrix::from_vec(c, d, r.f64s(c * d)?)?;
    let precisions = (0..np)
        .map(|_| {
            let shrink = r.f64()?;
            let eigenvectors = Matrix::from_vec(d, d, r.f64s(d * d)?)?;
            let inv_eigenvalues = r.f64s(d)?;
            Ok(Precision { eigenvectors, inv_eigenvalues, shrink })
        })
        .collect::<Result<Vec<_>>>()?;
    let ns = r.usize()?;
    let singleton_classes = (0..ns).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    Ok(MdsState { means, precisions, singleton_classes })
}

impl FittedScorer {
    /// Feature dimension this scorer consumes.
    pub fn input_dim(&self) -> usize {
        match self {
            FittedScorer::Msp { head } | FittedScorer::Energy { head, .. } => head.dim(),
            FittedScorer::Mds(st) | FittedScorer::Whiten(st) | FittedScorer::TeacherMds(st) => st.dim(),
            FittedScorer::Knn(st) => st.store.cols(),
            FittedScorer::Vim(st) => st.head.dim(),
            FittedScorer::React(st) => st.head.dim(),
            FittedScorer::Scale(st) => st.head.dim(),
            FittedScorer::Nci(st) => st.head.dim(),
        }
    }

    pub fn write_bundle<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BinWriter::new(out, SCORER_MAGIC)?;
        w.u32(self.kind().tag())?;
        w.usize(self.input_dim())?;
        match self {
            FittedScorer::Msp { head } => write_head(&mut w, head)?,
            FittedScorer::Energy { head, temperature } => {
                write_head(&mut w, head)?;
                w.f64(*temperature)?;
            }
            FittedScorer::Mds(st) | FittedScorer::Whiten(st) | FittedScorer::TeacherMds(st) => write_mds(&mut w, st)?,
            FittedScorer::Knn(st) => {
                w.usize(st.k)?;
                w.u32(st.normalize as u32)?;
                w.usize(st.store.rows())?;
                w.f64s(st.store.as_slice())?;
            }
            FittedScorer::Vim(st) => {
                write_head(&mut w, &st.head)?;
                w.f64(st.alpha)?;
                w.f64s(&st.mean)?;
                w.usize(st.principal.rank())?;
                w.f64s(st.principal.basis().as_slice())?;
            }
            FittedScorer::React(st) => {
                write_head(&mut w, &st.head)?;
                w.f64(st.percentile)?;
                match &st.threshold {
                    ClampThreshold::Global(c) => {
                        w.u32(0)?;
                        w.f64(*c)?;
                    }
                    ClampThreshold::PerDim(cs) => {
                        w.u32(1)?;
                        w.f64s(cs)?;
                    }
                }
            }
            FittedScorer::Scale(st) => {
                write_head(&mut w, &st.head)?;
                w.f64(st.percentile)?;
            }
            FittedScorer::Nci(st) => {
                write_head(&mut w, &st.head)?;
                w.f64(st.gamma)?;
                w.f64(st.mean_norm)?;
                w.f64s(&st.mean)?;
            }
        }
        Ok(())
    }

    pub fn read_bundle<R: Read>(inp: R) -> Result<FittedScorer> {
        let mut r = BinReader::new(inp, SCORER_MAGIC)?;
        let tag = r.u32()?;
        let kind = ScorerKind::from_tag(tag).ok_or_else(|| DscError::Format(format!("unknown scorer tag {tag}")))?;
        let d = r.usize()?;
        let fitted = match kind {
            ScorerKind::Msp => FittedScorer::Msp { head: read_head(&mut r, d)? },
            ScorerKind::Ebo => {
                let head = read_head(&mut r, d)?;
                FittedScorer::Energy { head, temperature: r.f64()? }
            }
            ScorerKind::Mds => FittedScorer::Mds(read_mds(&mut r, d)?),
            ScorerKind::Whiten => FittedScorer::Whiten(read_mds(&mut r, d)?),
            ScorerKind::TeacherMds => FittedScorer::TeacherMds(read_mds(&mut r, d)?),
            ScorerKind::Knn => {
                let k = r.usize()?;
                let normalize = r.u32()? != 0;
                let n = r.usize()?;
                let store = Matrix::from_vec(n, d, r.f64s(n * d)?)?;
                FittedScorer::Knn(KnnState { store, k, normalize })
            }
            ScorerKind::Vim => {
                let head = read_head(&mut r, d)?;
                let alpha = r.f64()?;
                let mean = r.f64s(d)?;
                let k = r.usize()?;
                let principal = Projector::from_basis(Matrix::from_vec(d, k, r.f64s(d * k)?)?)?;
                FittedScorer::Vim(VimState { mean, principal, alpha, head })
            }
            ScorerKind::React => {
                let head = read_head(&mut r, d)?;
                let percentile = r.f64()?;
                let threshold = match r.u32()? {
                    0 => ClampThreshold::Global(r.f64()?),
                    1 => ClampThreshold::PerDim(r.f64s(d)?),
                    m => return Err(DscError::Format(format!("unknown ReAct mode {m}"))),
                };
                FittedScorer::React(ReactState { threshold, percentile, head })
            }
            ScorerKind::Scale => {
                let head = read_head(&mut r, d)?;
                FittedScorer::Scale(ScaleState { percentile: r.f64()?, head })
            }
            ScorerKind::Nci => {
                let head = read_head(&mut r, d)?;
                let gamma = r.f64()?;
                let mean_norm = r.f64()?;
                let mean = r.f64s(d)?;
                FittedScorer::Nci(NciState { mean, mean_norm, gamma, head })
            }
        };
        r.finish()?;
        Ok(fitted)
    }
}
