//! Synthetic single-domain data, the frozen synthetic teacher and the
//! linear toy.
//!
//! Inputs are `x = (x_y, x_d)`. Class information lives in `x_y` (simplex
//! anchors plus isotropic spread σ); `x_d` is the training-domain vector
//! plus a small jitter. Out-of-domain samples keep the class laws and move
//! `x_d` by a fixed distance along random directions.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DscError, Result};
use crate::rng::{stage, stream, DscRng};
use crate::specmath::{dot, norm, FeatureMatrix, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub d_y: usize,
    pub d_d: usize,
    pub c_total: usize,
    pub c_train: usize,
    /// σ of the isotropic class spread in `x_y`.
    pub within_class_spread: f64,
    /// Distance of each class anchor from the simplex centroid.
    pub anchor_scale: f64,
    /// The training-domain vector; `None` means all ones.
    pub domain_value: Option<Vec<f64>>,
    /// Per-coordinate std of the in-domain `x_d` jitter.
    pub domain_jitter: f64,
    pub ood_domain_shift: f64,
    /// Larger second shift for the far split.
    pub far_domain_shift: f64,
    /// Rows per split.
    pub n: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            d_y: 16,
            d_d: 16,
            c_total: 9,
            c_train: 6,
            within_class_spread: 0.1,
            anchor_scale: 0.45,
            domain_value: None,
            domain_jitter: 0.4,
            ood_domain_shift: 3.0,
            far_domain_shift: 6.0,
            n: 2000,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn input_dim(&self) -> usize {
        self.d_y + self.d_d
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_train == 0 || self.c_train >= self.c_total {
            return Err(DscError::invalid("need 0 < c_train < c_total"));
        }
        if self.d_y < self.c_total {
            return Err(DscError::invalid("d_y must be at least c_total to host the simplex anchors"));
        }
        if self.d_d == 0 || self.n == 0 {
            return Err(DscError::invalid("d_d and n must be positive"));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.within_class_spread) || !finite_nonneg(self.domain_jitter) || !finite_nonneg(self.anchor_scale) {
            return Err(DscError::invalid("spread, jitter and anchor scale must be finite and nonnegative"));
        }
        if !finite_nonneg(self.ood_domain_shift) || !finite_nonneg(self.far_domain_shift) {
            return Err(DscError::invalid("domain shifts must be finite and nonnegative"));
        }
        if let Some(v) = &self.domain_value {
            if v.len() != self.d_d || v.iter().any(|x| !x.is_finite()) {
                return Err(DscError::invalid("domain_value must hold d_d finite entries"));
            }
        }
        Ok(())
    }

    pub fn domain_vector(&self) -> Vec<f64> {
        self.domain_value.clone().unwrap_or_else(|| vec![1.0; self.d_d])
    }

    /// Plain-text `key=value` manifest lines for the spec.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d_y={}", self.d_y);
        let _ = writeln!(s, "d_d={}", self.d_d);
        let _ = writeln!(s, "c_total={}", self.c_total);
        let _ = writeln!(s, "c_train={}", self.c_train);
        let _ = writeln!(s, "within_class_spread={}", self.within_class_spread);
        let _ = writeln!(s, "anchor_scale={}", self.anchor_scale);
        let dv: Vec<String> = self.domain_vector().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "domain_value={}", dv.join(","));
        let _ = writeln!(s, "domain_jitter={}", self.domain_jitter);
        let _ = writeln!(s, "ood_domain_shift={}", self.ood_domain_shift);
        let _ = writeln!(s, "far_domain_shift={}", self.far_domain_shift);
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}

/// Labeled inputs with globally unique sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
    pub num_classes: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_features(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.inputs.clone(), self.labels.clone(), self.num_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: Split,
    pub id_test: Split,
    pub indomain_ood: Split,
    pub outdomain_ood: Split,
    /// Out-of-domain split at the larger shift.
    pub far_ood: Split,
}

impl SplitSet {
    pub const NAMES: [&'static str; 5] = ["train", "id_test", "indomain_ood", "outdomain_ood", "far_ood"];

    pub fn splits(&self) -> [&Split; 5] {
        [&self.train, &self.id_test, &self.indomain_ood, &self.outdomain_ood, &self.far_ood]
    }
}

fn gaussian(rng: &mut DscRng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit(rng: &mut DscRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `d×k` matrix with orthonormal columns from Gram–Schmidt on Gaussians.
fn random_orthonormal(rng: &mut DscRng, d: usize, k: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut m = Matrix::zeros(d, k);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            m[(i, j)] = c[i];
        }
    }
    m
}

/// Class anchors, `C_total×d_y`: centered simplex vertices at distance
/// `anchor_scale` from the centroid, rotated into `x_y` by a seeded basis.
pub fn class_anchors(spec: &GeneratorSpec) -> Result<Matrix> {
    spec.validate()?;
    let c = spec.c_total;
    let mut rng = stream(spec.seed, &[stage::DATA, 0]);
    let q = random_orthonormal(&mut rng, spec.d_y, c);
    let r = ((c - 1) as f64 / c as f64).sqrt();
    let mut out = Matrix::zeros(c, spec.d_y);
    for k in 0..c {
        // e_k − 1/C, unit length after dividing by r.
        for i in 0..spec.d_y {
            let mut s = 0.0;
            for j in 0..c {
                let v = if j == k { 1.0 - 1.0 / c as f64 } else { -1.0 / c as f64 };
                s += q[(i, j)] * v;
            }
            out[(k, i)] = spec.anchor_scale * s / r;
        }
    }
    Ok(out)
}

enum DomainLaw {
    InDomain,
    Shifted(f64),
}

fn draw_split(
    spec: &GeneratorSpec,
    anchors: &Matrix,
    classes: std::ops::Range<usize>,
    law: DomainLaw,
    split_index: u64,
) -> Result<Split> {
    let mut rng = stream(spec.seed, &[stage::DATA, 1 + split_index]);
    let dv = spec.domain_vector();
    let nc = classes.len();
    let mut inputs = Matrix::zeros(spec.n, spec.input_dim());
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = classes.start + i % nc;
        labels.push(label);
        let row = inputs.row_mut(i);
        for (j, x) in row[..spec.d_y].iter_mut().enumerate() {
            *x = anchors[(label, j)] + spec.within_class_spread * gaussian(&mut rng);
        }
        for (j, x) in row[spec.d_y..].iter_mut().enumerate() {
            *x = dv[j] + spec.domain_jitter * gaussian(&mut rng);
        }
        if let DomainLaw::Shifted(shift) = law {
            let u = random_unit(&mut rng, spec.d_d);
            for (x, uj) in row[spec.d_y..].iter_mut().zip(&u) {
                *x += shift * uj;
            }
        }
    }
    let base = split_index * spec.n as u64;
    Ok(Split { inputs, labels, ids: (base..base + spec.n as u64).collect(), num_classes: spec.c_total })
}

/// The four evaluation splits plus the far out-of-domain split.
pub fn gen_single_domain(spec: &GeneratorSpec) -> Result<SplitSet> {
    spec.validate()?;
    let anchors = class_anchors(spec)?;
    let train_classes = 0..spec.c_train;
    let mut train = draw_split(spec, &anchors, train_classes.clone(), DomainLaw::InDomain, 0)?;
    let mut id_test = draw_split(spec, &anchors, train_classes.clone(), DomainLaw::InDomain, 1)?;
    train.num_classes = spec.c_train;
    id_test.num_classes = spec.c_train;
    Ok(SplitSet {
        train,
        id_test,
        indomain_ood: draw_split(spec, &anchors, spec.c_train..spec.c_total, DomainLaw::InDomain, 2)?,
        outdomain_ood: draw_split(spec, &anchors, train_classes.clone(), DomainLaw::Shifted(spec.ood_domain_shift), 3)?,
        far_ood: draw_split(spec, &anchors, train_classes, DomainLaw::Shifted(spec.far_domain_shift), 4)?,
    })
}

/// Writes one `DSCF` file per split and a `manifest.txt`.
pub fn export_splits(dir: &Path, spec: &GeneratorSpec, splits: &SplitSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = spec.manifest();
    for (name, split) in SplitSet::NAMES.iter().zip(splits.splits()) {
        split.to_features()?.write_binary(BufWriter::new(File::create(dir.join(format!("{name}.dscf")))?))?;
        let _ = writeln!(manifest, "{name}_rows={}", split.len());
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSpec {
    pub dim: usize,
    pub hidden: usize,
    /// Gain applied to the `x_y` block before the first layer.
    pub class_gain: f64,
    /// Gain applied to the `x_d` block.
    pub domain_gain: f64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        TeacherSpec { dim: 16, hidden: 64, class_gain: 0.1, domain_gain: 1.0 }
    }
}

/// Frozen random two-layer rectified map `u = W2·relu(W1·g(x) + b1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTeacher {
    pub d_y: usize,
    pub gains: (f64, f64),
    /// `hidden×input`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `m×hidden`
    pub w2: Matrix,
}

impl SyntheticTeacher {
    pub fn new(gen: &GeneratorSpec, spec: &TeacherSpec, rng: &mut DscRng) -> Result<Self> {
        if spec.dim == 0 || spec.hidden == 0 {
            return Err(DscError::invalid("teacher widths must be positive"));
        }
        let d = gen.input_dim();
        let s1 = 1.0 / (d as f64).sqrt();
        let s2 = 1.0 / (spec.hidden as f64).sqrt();
        let w1 = Matrix::from_vec(spec.hidden, d, (0..spec.hidden * d).map(|_| s1 * gaussian(rng)).collect())?;
        let b1 = (0..spec.hidden).map(|_| 0.5 * gaussian(rng)).collect();
        let w2 = Matrix::from_vec(spec.dim, spec.hidden, (0..spec.dim * spec.hidden).map(|_| s2 * gaussian(rng)).collect())?;
        Ok(SyntheticTeacher { d_y: gen.d_y, gains: (spec.class_gain, spec.domain_gain), w1, b1, w2 })
    }

    pub fn dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn embed_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.w1.cols() {
            return Err(DscError::DimensionMismatch { expected: self.w1.cols(), got: x.len() });
        }
        let g: Vec<f64> =
            x.iter().enumerate().map(|(i, &v)| v * if i < self.d_y { self.gains.0 } else { self.gains.1 }).collect();
        let mut h = self.w1.mat_vec(&g)?;
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).max(0.0);
        }
        self.w2.mat_vec(&h)
    }
}

pub fn teacher_embed(teacher: &SyntheticTeacher, inputs: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(inputs.rows(), teacher.dim());
    for i in 0..inputs.rows() {
        let u = teacher.embed_one(inputs.row(i))?;
        out.row_mut(i).copy_from_slice(&u);
    }
    Ok(out)
}

/// Labeled linear toy: `x = y·a + s`, `s ⊥ a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearToy {
    pub x: Matrix,
    /// ±1, alternating so the classes are balanced.
    pub y: Vec<f64>,
    pub a: Vec<f64>,
}

pub fn linear_toy(n: usize, p: usize, a_direction: &[f64], noise: f64, rng: &mut DscRng) -> Result<LinearToy> {
    if p < 2 || a_direction.len() != p {
        return Err(DscError::invalid("linear toy needs p ≥ 2 and a of length p"));
    }
    let an = norm(a_direction);
    if an == 0.0 {
        return Err(DscError::invalid("a must be nonzero"));
    }
    let a_hat: Vec<f64> = a_direction.iter().map(|v| v / an).collect();
    let mut x = Matrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let yi = if i % 2 == 0 { 1.0 } else { -1.0 };
        y.push(yi);
        let mut s: Vec<f64> = (0..p).map(|_| noise * gaussian(rng)).collect();
        let c = dot(&s, &a_hat);
        s.iter_mut().zip(&a_hat).for_each(|(v, h)| *v -= c * h);
        for (j, o) in x.row_mut(i).iter_mut().enumerate() {
            *o = yi * a_direction[j] + s[j];
        }
    }
    Ok(LinearToy { x, y, a: a_direction.to_vec() })
}

/// Gradient descent on `mean log(1 + exp(−y·wᵀx)) + (l2/2)·‖w‖²` from zero.
pub fn fit_logistic(toy: &LinearToy, l2: f64, lr: f64, iterations: usize) -> Vec<f64> {
    let (n, p) = (toy.x.rows(), toy.x.cols());
    let mut w = vec![0.0; p];
    for _ in 0..iterations {
        let mut g: Vec<f64> = w.iter().map(|v| l2 * v).collect();
        for i in 0..n {
            let xi = toy.x.row(i);
            let m = toy.y[i] * dot(&w, xi);
            // d/dm log(1 + e^{−m}) = −σ(−m)
            let s = 1.0 / (1.0 + m.exp());
            let c = -toy.y[i] * s / n as f64;
            g.iter_mut().zip(xi).for_each(|(gj, &x)| *gj += c * x);
        }
        w.iter_mut().zip(&g).for_each(|(wj, gj)| *wj -= lr * gj);
    }
    w
}

/// `‖w_⊥‖/‖w‖` with `⊥` taken against `a`.
pub fn orthogonal_weight_fraction(w: &[f64], a: &[f64]) -> f64 {
    let an = norm(a);
    let c = dot(w, a) / (an * an);
    let perp: Vec<f64> = w.iter().zip(a).map(|(wj, aj)| wj - c * aj).collect();
    norm(&perp) / norm(w)
}
