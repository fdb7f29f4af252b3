//! Plug-in checks of the distance-score bound and the logit-score bound.
//!
//! Distance bound (kNN, `L_k = 1`):
//! `W1(S_id, S_ood) ≤ L_k·ε̂ + 4·L_k·max(τ²_id, τ²_ood)`.
//!
//! Logit bound (energy `L_S = 1`, MSP `L_S = 2`):
//! `W1(S_id, S_ood) ≤ ‖W‖_op·ε̂ + L_S·η̂·sqrt(max(τ²_id, τ²_ood))`,
//! with `η̂ = ‖W P_⊥‖_op`.
//!
//! `ε̂` is a Monte-Carlo mean of `‖P z_id − P z_ood‖`. Score samples are
//! equalized to the smaller count by seeded subsampling before `W1`.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{DscError, Result};
use crate::metrics::wasserstein1;
use crate::rng::{stage, stream, DscRng};
use crate::scorers::{msp, energy, Head, KnnState};
use crate::specmath::{dot, norm, orthogonal_energy, Matrix, Projector};

pub const DEFAULT_PAIRS: usize = 10_000;
const POWER_ITERS: usize = 200;
const POWER_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Independent uniform indices into each set.
    Unpaired,
    /// The same index into both sets (sets must have equal size).
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    #[serde(rename = "knn_distance")]
    KnnDistance,
    #[serde(rename = "logit_energy")]
    Energy,
    #[serde(rename = "logit_msp")]
    Msp,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::KnnDistance => "knn_distance",
            BoundKind::Energy => "logit_energy",
            BoundKind::Msp => "logit_msp",
        }
    }

    /// Score Lipschitz constant with respect to the features or logits.
    pub fn lipschitz(self) -> f64 {
        match self {
            BoundKind::KnnDistance | BoundKind::Energy => 1.0,
            BoundKind::Msp => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Informative,
    /// The right-hand side exceeds the pooled score range.
    Vacuous,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Informative => "informative",
            Regime::Vacuous => "vacuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSettings {
    pub n_pairs: usize,
    pub pairing: Pairing,
    /// Root of the pair-sampling and subsampling streams.
    pub seed: u64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings { n_pairs: DEFAULT_PAIRS, pairing: Pairing::Unpaired, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub instance: String,
    pub kind: BoundKind,
    pub tau_sq_id: f64,
    pub tau_sq_ood: f64,
    pub eps_hat: f64,
    /// Logit bounds only.
    pub eta_hat: Option<f64>,
    pub w_op: Option<f64>,
    pub l_k: f64,
    pub l_s: f64,
    pub lhs_w1: f64,
    pub rhs: f64,
    pub score_range: f64,
    pub holds: bool,
    pub regime: Regime,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "instance,bound,tau_sq_id,tau_sq_ood,eps_hat,eta_hat,w_op,l_k,l_s,lhs_w1,rhs,score_range,holds,regime";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.instance,
            self.kind.name(),
            self.tau_sq_id,
            self.tau_sq_ood,
            self.eps_hat,
            opt(self.eta_hat),
            opt(self.w_op),
            self.l_k,
            self.l_s,
            self.lhs_w1,
            self.rhs,
            self.score_range,
            self.holds,
            self.regime.name()
        )
    }
}

pub fn write_bounds_csv<W: Write>(mut w: W, reports: &[BoundReport]) -> Result<()> {
    writeln!(w, "{}", BoundReport::CSV_HEADER)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn estimate_tau_sq(feats: &Matrix, p: &Projector) -> Result<f64> {
    Ok(orthogonal_energy(feats, p)?.mean)
}

pub fn estimate_eps(
    id: &Matrix,
    ood: &Matrix,
    p: &Projector,
    n_pairs: usize,
    pairing: Pairing,
    rng: &mut DscRng,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(DscError::invalid("n_pairs must be at least 1"));
    }
    if id.rows() == 0 || ood.rows() == 0 {
        return Err(DscError::invalid("eps estimate needs nonempty ID and OOD sets"));
    }
    if pairing == Pairing::Paired && id.rows() != ood.rows() {
        return Err(DscError::DimensionMismatch { expected: id.rows(), got: ood.rows() });
    }
    // Project each row once; pairs then only touch the k-dimensional coordinates.
    let coords = |m: &Matrix| (0..m.rows()).map(|i| p.coords(m.row(i))).collect::<Result<Vec<_>>>();
    let ci = coords(id)?;
    let co = coords(ood)?;
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..ci.len());
        let j = match pairing {
            Pairing::Paired => i,
            Pairing::Unpaired => rng.random_range(0..co.len()),
        };
        let d2: f64 = ci[i].iter().zip(&co[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        total += d2.sqrt();
    }
    Ok(total / n_pairs as f64)
}

/// Largest singular value by power iteration on `MᵀM`.
pub fn operator_norm(m: &Matrix) -> Result<f64> {
    let d = m.cols();
    if d == 0 || m.rows() == 0 {
        return Ok(0.0);
    }
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 0.37 * ((j as f64 + 1.0) * 0.71).sin()).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut prev = 0.0;
    for _ in 0..POWER_ITERS {
        let w = m.tr_mat_vec(&m.mat_vec(&v)?)?;
        let lam = norm(&w);
        if lam == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / lam).collect();
        let done = (lam - prev).abs() <= POWER_RTOL * lam;
        prev = lam;
        if done {
            break;
        }
    }
    Ok(norm(&m.mat_vec(&v)?))
}

/// `‖W P_⊥‖_op`
pub fn estimate_eta(w: &Matrix, p: &Projector) -> Result<f64> {
    if w.cols() != p.ambient_dim() {
        return Err(DscError::DimensionMismatch { expected: p.ambient_dim(), got: w.cols() });
    }
    operator_norm(&w.matmul(&p.complement_matrix())?)
}

/// Subsample the longer score vector, without replacement, to the shorter length.
fn equalize(a: Vec<f64>, b: Vec<f64>, rng: &mut DscRng) -> (Vec<f64>, Vec<f64>) {
    let pick = |v: Vec<f64>, n: usize, rng: &mut DscRng| -> Vec<f64> {
        if v.len() == n {
            return v;
        }
        let mut idx = sample(rng, v.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| v[i]).collect()
    };
    let n = a.len().min(b.len());
    let a = pick(a, n, rng);
    let b = pick(b, n, rng);
    (a, b)
}

fn score_range(a: &[f64], b: &[f64]) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

struct Common {
    tau_sq_id: f64,
    tau_sq_ood: f64,
    eps_hat: f64,
}

fn common(id: &Matrix, ood: &Matrix, p: &Projector, s: &BoundSettings) -> Result<Common> {
    let mut rng = stream(s.seed, &[stage::BOUNDS]);
    Ok(Common {
        tau_sq_id: estimate_tau_sq(id, p)?,
        tau_sq_ood: estimate_tau_sq(ood, p)?,
        eps_hat: estimate_eps(id, ood, p, s.n_pairs, s.pairing, &mut rng)?,
    })
}

fn finish(
    instance: &str,
    kind: BoundKind,
    c: Common,
    eta_w: Option<(f64, f64)>,
    id_scores: Vec<f64>,
    ood_scores: Vec<f64>,
    rhs: f64,
    seed: u64,
) -> Result<BoundReport> {
    let mut rng = stream(seed, &[stage::SUBSAMPLE]);
    let (a, b) = equalize(id_scores, ood_scores, &mut rng);
    let lhs = wasserstein1(&a, &b)?;
    let range = score_range(&a, &b);
    Ok(BoundReport {
        instance: instance.to_string(),
        kind,
        tau_sq_id: c.tau_sq_id,
        tau_sq_ood: c.tau_sq_ood,
        eps_hat: c.eps_hat,
        eta_hat: eta_w.map(|e| e.0),
        w_op: eta_w.map(|e| e.1),
        l_k: 1.0,
        l_s: kind.lipschitz(),
        lhs_w1: lhs,
        rhs,
        score_range: range,
        holds: lhs <= rhs + 1e-9,
        regime: if rhs > range { Regime::Vacuous } else { Regime::Informative },
    })
}

/// Distance-score bound for a Euclidean kNN scorer fitted on ID training features.
pub fn check_theorem1(
    instance: &str,
    id: &Matrix,
    ood: &Matrix,
    knn: &KnnState,
    p: &Projector,
    s: &BoundSettings,
) -> Result<BoundReport> {
    if knn.normalize {
        return Err(DscError::invalid("the distance bound needs an unnormalized (Euclidean) kNN scorer"));
    }
    let c = common(id, ood, p, s)?;
    let rhs = c.eps_hat + 4.0 * c.tau_sq_id.max(c.tau_sq_ood);
    let si = knn.score(id)?.into_vec();
    let so = knn.score(ood)?.into_vec();
    finish(instance, BoundKind::KnnDistance, c, None, si, so, rhs, s.seed)
}

/// Logit-score bound for energy or MSP on the head `ℓ = Wz + b`.
pub fn check_prop1(
    instance: &str,
    id: &Matrix,
    ood: &Matrix,
    head: &Head,
    p: &Projector,
    kind: BoundKind,
    s: &BoundSettings,
) -> Result<BoundReport> {
    if kind == BoundKind::KnnDistance {
        return Err(DscError::invalid("check_prop1 takes the energy or MSP score"));
    }
    let c = common(id, ood, p, s)?;
    let eta = estimate_eta(&head.w, p)?;
    let w_op = operator_norm(&head.w)?;
    let rhs = w_op * c.eps_hat + kind.lipschitz() * eta * c.tau_sq_id.max(c.tau_sq_ood).sqrt();
    let score = |m: &Matrix| -> Result<Vec<f64>> {
        let l = head.logits_matrix(m)?;
        Ok((0..l.rows())
            .map(|i| if kind == BoundKind::Msp { msp(l.row(i)) } else { energy(l.row(i), 1.0) })
            .collect())
    };
    let (si, so) = (score(id)?, score(ood)?);
    finish(instance, kind, c, Some((eta, w_op)), si, so, rhs, s.seed)
}

/// `max |⟨Pz, P_⊥z⟩|` over rows, a sanity check used by callers.
pub fn max_cross_term(feats: &Matrix, p: &Projector) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..feats.rows() {
        worst = worst.max(dot(&p.project(feats.row(i))?, &p.complement(feats.row(i))?).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::fit_knn;
    use crate::specmath::sym_eig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn first_k(d: usize, k: usize) -> Projector {
        Projector::from_basis(Matrix::identity(d).leading_cols(k)).unwrap()
    }

    fn gaussian_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn shifted(m: &Matrix, v: &[f64]) -> Matrix {
        let mut out = m.clone();
        for i in 0..m.rows() {
            out.row_mut(i).iter_mut().zip(v).for_each(|(x, s)| *x += s);
        }
        out
    }

    #[test]
    fn eps_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = gaussian_matrix(200, 6, &mut rng);
        let p = first_k(6, 3);
        let mut r = stream(0, &[stage::BOUNDS]);
        assert_eq!(estimate_eps(&id, &id, &p, 500, Pairing::Paired, &mut r).unwrap(), 0.0);
        let off = shifted(&id, &[0.0, 0.0, 0.0, 5.0, -1.0, 2.0]);
        assert!(estimate_eps(&id, &off, &p, 500, Pairing::Paired, &mut r).unwrap() < 1e-12);
        // Paired shift of length 2 inside the subspace: every pair gives exactly 2.
        let inside = shifted(&id, &[1.2, -1.6, 0.0, 0.0, 0.0, 0.0]);
        let e = estimate_eps(&id, &inside, &p, 2000, Pairing::Paired, &mut r).unwrap();
        assert!((e - 2.0).abs() < 1e-12);
        assert!(estimate_eps(&id, &id, &p, 0, Pairing::Paired, &mut r).is_err());
    }

    #[test]
    fn eps_ignores_off_subspace_shift_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let id = gaussian_matrix(300, 8, &mut rng);
        let ood = gaussian_matrix(300, 8, &mut rng);
        let p = first_k(8, 4);
        let mut last = None;
        for mag in [0.0, 1.0, 5.0, 50.0] {
            let o = shifted(&ood, &[0.0, 0.0, 0.0, 0.0, mag, 0.0, -mag, 0.0]);
            let e = estimate_eps(&id, &o, &p, 1000, Pairing::Unpaired, &mut stream(9, &[stage::BOUNDS])).unwrap();
            if let Some(prev) = last {
                assert!(e <= prev + 1e-12);
            }
            last = Some(e);
        }
    }

    #[test]
    fn eta_examples() {
        let p = first_k(5, 2);
        let mut w = Matrix::zeros(3, 5);
        w[(0, 0)] = 2.0;
        w[(1, 1)] = -1.0;
        w[(2, 0)] = 0.5;
        assert!(estimate_eta(&w, &p).unwrap() < 1e-8);
        assert!((estimate_eta(&Matrix::identity(5), &p).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let w = gaussian_matrix(5, 12, &mut rng);
            let gram = w.transpose().matmul(&w).unwrap();
            let top = sym_eig(&gram).unwrap().values[0].sqrt();
            assert!((operator_norm(&w).unwrap() - top).abs() < 1e-8);
            let q = first_k(12, 4);
            let wp = w.matmul(&q.complement_matrix()).unwrap();
            let top_perp = sym_eig(&wp.transpose().matmul(&wp).unwrap()).unwrap().values[0].sqrt();
            assert!((estimate_eta(&w, &q).unwrap() - top_perp).abs() < 1e-8);
        }
    }

    #[test]
    fn w_op_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = gaussian_matrix(4, 6, &mut rng);
        let q = sym_eig(&{
            let g = gaussian_matrix(6, 6, &mut rng);
            g.add(&g.transpose()).unwrap()
        })
        .unwrap()
        .vectors;
        let a = operator_norm(&w).unwrap();
        let b = operator_norm(&w.matmul(&q).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn identical_sets_have_zero_lhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = gaussian_matrix(100, 6, &mut rng);
        let id = gaussian_matrix(80, 6, &mut rng);
        let p = first_k(6, 2);
        let knn = fit_knn(&train, 5, false).unwrap();
        let s = BoundSettings { n_pairs: 500, ..Default::default() };
        let r = check_theorem1("same", &id, &id, &knn, &p, &s).unwrap();
        assert_eq!(r.lhs_w1, 0.0);
        assert!(r.holds);
        let head = Head::new(gaussian_matrix(3, 6, &mut rng), vec![0.1, 0.0, -0.2]).unwrap();
        for kind in [BoundKind::Energy, BoundKind::Msp] {
            assert_eq!(check_prop1("same", &id, &id, &head, &p, kind, &s).unwrap().lhs_w1, 0.0);
        }
        let normalized = fit_knn(&train, 5, true).unwrap();
        assert!(check_theorem1("x", &id, &id, &normalized, &p, &s).is_err());
    }

    #[test]
    fn zero_head_gives_zero_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let id = gaussian_matrix(60, 5, &mut rng);
        let ood = shifted(&gaussian_matrix(60, 5, &mut rng), &[3.0, 0.0, 0.0, 1.0, 0.0]);
        let head = Head::new(Matrix::zeros(3, 5), vec![0.0; 3]).unwrap();
        let r = check_prop1("zero", &id, &ood, &head, &first_k(5, 2), BoundKind::Energy, &BoundSettings::default())
            .unwrap();
        assert_eq!(r.lhs_w1, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn isotropic_control_is_vacuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train = gaussian_matrix(500, 32, &mut rng);
        let id = gaussian_matrix(500, 32, &mut rng);
        let mut shift = vec![0.0; 32];
        shift[0] = 4.0;
        let ood = shifted(&gaussian_matrix(500, 32, &mut rng), &shift);
        let knn = fit_knn(&train, 10, false).unwrap();
        let r = check_theorem1("iso", &id, &ood, &knn, &first_k(32, 5), &BoundSettings::default()).unwrap();
        assert_eq!(r.regime, Regime::Vacuous);
        assert!(r.holds);
    }

    #[test]
    fn csv_row_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let id = gaussian_matrix(40, 4, &mut rng);
        let head = Head::new(gaussian_matrix(2, 4, &mut rng), vec![0.0; 2]).unwrap();
        let r = check_prop1("a", &id, &id, &head, &first_k(4, 1), BoundKind::Msp, &BoundSettings::default()).unwrap();
        let mut buf = Vec::new();
        write_bounds_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }
}
